use super::{GraphBuilder, LossKind, ModelGraph, Node, NodeId, Op, Param};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which network a configuration describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Two-stream boundary detector alone.
    Boundary,
    /// Two-stream encoder/decoder segmenter alone.
    Segmenter,
    /// Skip-connection segmenter alone.
    FcnStyle,
    /// Boundary detector feeding the encoder/decoder segmenter.
    #[default]
    BoundarySegmenter,
    /// Boundary detector feeding the skip-connection segmenter.
    BoundaryFcn,
}

/// Architecture hyperparameters shared by all builders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub model: ModelKind,
    pub num_classes: usize,
    pub image_channels: usize,
    pub height_channels: usize,
    /// Channels of the first convolution; doubled after every pool.
    pub base_width: usize,
    /// Number of pooling stages of the segmenters.
    pub depth: usize,
    /// Convolutions per encoder/decoder stage.
    pub convs_per_stage: usize,
    /// 1 or 3 input resolutions for the encoder/decoder segmenter.
    pub scales: usize,
    pub batchnorm_final_off: bool,
    /// Decoder dropout per stage, highest resolution first. Missing entries
    /// repeat the last one.
    pub dropout: Vec<f64>,
    pub reinject_skip: bool,
    pub fcn_skips: bool,
    pub side_loss_weight: f64,
    pub fusion_loss_weight: f64,
    pub seg_loss_weight: f64,
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            model: ModelKind::default(),
            num_classes: 5,
            image_channels: 3,
            height_channels: 2,
            base_width: 16,
            depth: 3,
            convs_per_stage: 1,
            scales: 1,
            batchnorm_final_off: true,
            dropout: vec![0.2, 0.1],
            reinject_skip: true,
            fcn_skips: true,
            side_loss_weight: 1.0,
            fusion_loss_weight: 1.0,
            seg_loss_weight: 1.0,
            seed: 0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 || self.num_classes > 254 {
            return fail(format!("num_classes must lie in 2..=254, got {}", self.num_classes));
        }
        if self.image_channels == 0 || self.height_channels == 0 {
            return fail("image_channels and height_channels must be positive".into());
        }
        if self.base_width == 0 || self.convs_per_stage == 0 {
            return fail("base_width and convs_per_stage must be positive".into());
        }
        if !(1..=4).contains(&self.depth) {
            return fail(format!("depth must lie in 1..=4, got {}", self.depth));
        }
        if self.scales != 1 && self.scales != 3 {
            return fail(format!("scales must be 1 or 3, got {}", self.scales));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return fail(format!("dropout rate {r} outside [0, 1)"));
        }
        for (k, w) in [
            ("side_loss_weight", self.side_loss_weight),
            ("fusion_loss_weight", self.fusion_loss_weight),
            ("seg_loss_weight", self.seg_loss_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("{k} must be a finite non-negative number, got {w}"));
            }
        }
        Ok(())
    }

    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn dropout_at(&self, stage: usize) -> f64 {
        self.dropout
            .get(stage)
            .or(self.dropout.last())
            .copied()
            .unwrap_or(0.0)
    }

    /// Input channels of a segmenter that also receives a boundary map on
    /// each stream.
    pub fn with_boundary_channels(&self) -> ArchConfig {
        ArchConfig {
            image_channels: self.image_channels + 1,
            height_channels: self.height_channels + 1,
            ..self.clone()
        }
    }

    /// Builds the graph selected by `model`.
    pub fn build(&self) -> Result<ModelGraph> {
        match self.model {
            ModelKind::Boundary => build_boundary_detector(self),
            ModelKind::Segmenter => build_multiscale_seg(self, self.scales),
            ModelKind::FcnStyle => build_fcn_style(self),
            ModelKind::BoundarySegmenter => {
                let seg = build_multiscale_seg(&self.with_boundary_channels(), self.scales)?;
                assemble_boundary_segmenter(&build_boundary_detector(self)?, &seg, self.reinject_skip)
            }
            ModelKind::BoundaryFcn => {
                let seg = build_fcn_style(&self.with_boundary_channels())?;
                assemble_boundary_segmenter(&build_boundary_detector(self)?, &seg, false)
            }
        }
    }
}

/// conv → relu blocks of one boundary-detector stream; returns the side
/// output of every stage.
fn edge_stream(b: &mut GraphBuilder, prefix: &str, mut x: NodeId, cfg: &ArchConfig) -> Vec<NodeId> {
    let mut sides = Vec::new();
    for s in 0..cfg.depth {
        if s > 0 {
            x = b.maxpool(&format!("{prefix}.stage{s}.pool"), x);
        }
        for j in 0..cfg.convs_per_stage {
            x = b.conv3x3(&format!("{prefix}.stage{s}.conv{j}"), x, cfg.width(s));
            x = b.relu(&format!("{prefix}.stage{s}.relu{j}"), x);
        }
        sides.push(b.conv1x1(&format!("{prefix}.stage{s}.side"), x, 1));
    }
    sides
}

/// Two-stream boundary detector with one deeply supervised side output per
/// stage and a learned fusion of all of them.
pub fn build_boundary_detector(cfg: &ArchConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new(cfg.seed);
    let img = b.input("image", cfg.image_channels);
    let hgt = b.input("height", cfg.height_channels);
    let img_sides = edge_stream(&mut b, "edge.img", img, cfg);
    let hgt_sides = edge_stream(&mut b, "edge.hgt", hgt, cfg);
    let mut fused = Vec::new();
    for s in 0..cfg.depth {
        let cat = b.concat(&format!("edge.side{s}.cat"), &[img_sides[s], hgt_sides[s]]);
        let mut f = b.conv1x1_mean(&format!("edge.side{s}.fuse"), cat, 1);
        if s > 0 {
            f = b.upsample(&format!("edge.side{s}.up"), f, 1 << s)?;
        }
        b.output(&format!("boundary_side_{s}"), f);
        b.loss(&format!("edge.side{s}.loss"), f, LossKind::BoundaryL2, cfg.side_loss_weight);
        fused.push(f);
    }
    let cat = b.concat("edge.cat", &fused);
    let fin = b.conv1x1_mean("edge.fuse", cat, 1);
    b.output("boundary_final", fin);
    b.loss("edge.fuse.loss", fin, LossKind::BoundaryL2, cfg.fusion_loss_weight);
    b.finish(ArchConfig { model: ModelKind::Boundary, ..cfg.clone() })
}

/// One encoder/decoder stream with index-tracked pooling. Returns the
/// full-resolution feature map.
fn segnet_stream(b: &mut GraphBuilder, prefix: &str, mut x: NodeId, cfg: &ArchConfig) -> NodeId {
    let mut pools = Vec::new();
    for s in 0..cfg.depth {
        for j in 0..cfg.convs_per_stage {
            x = b.conv3x3(&format!("{prefix}.enc{s}.conv{j}"), x, cfg.width(s));
            x = b.batchnorm(&format!("{prefix}.enc{s}.bn{j}"), x);
            x = b.relu(&format!("{prefix}.enc{s}.relu{j}"), x);
        }
        x = b.maxpool(&format!("{prefix}.enc{s}.pool"), x);
        pools.push(x);
    }
    for s in (0..cfg.depth).rev() {
        x = b.unpool(&format!("{prefix}.dec{s}.unpool"), x, pools[s]);
        for j in 0..cfg.convs_per_stage {
            let last = j + 1 == cfg.convs_per_stage;
            let out = if last && s > 0 { cfg.width(s - 1) } else { cfg.width(s) };
            x = b.conv3x3(&format!("{prefix}.dec{s}.conv{j}"), x, out);
            if !(last && s == 0 && cfg.batchnorm_final_off) {
                x = b.batchnorm(&format!("{prefix}.dec{s}.bn{j}"), x);
            }
            x = b.relu(&format!("{prefix}.dec{s}.relu{j}"), x);
        }
        let rate = cfg.dropout_at(s);
        if rate > 0.0 {
            x = b.dropout(&format!("{prefix}.dec{s}.drop"), x, rate);
        }
    }
    x
}

/// Segmenter streams for scale `k` (inputs average-pooled `k` times),
/// fused into class scores at that resolution and brought back to full
/// resolution.
fn seg_branch(b: &mut GraphBuilder, cfg: &ArchConfig, k: usize, img: NodeId, hgt: NodeId) -> Result<(NodeId, NodeId)> {
    let (mut xi, mut xh) = (img, hgt);
    for i in 0..k {
        xi = b.avgpool(&format!("seg.s{k}.img.down{i}"), xi);
        xh = b.avgpool(&format!("seg.s{k}.hgt.down{i}"), xh);
    }
    let fi = segnet_stream(b, &format!("seg.s{k}.img"), xi, cfg);
    let fh = segnet_stream(b, &format!("seg.s{k}.hgt"), xh, cfg);
    let cat = b.concat(&format!("seg.s{k}.cat"), &[fi, fh]);
    let mut logits = b.conv1x1(&format!("seg.s{k}.classify"), cat, cfg.num_classes);
    let fusion = logits;
    if k > 0 {
        logits = b.upsample(&format!("seg.s{k}.up"), logits, 1 << k)?;
    }
    b.role(&format!("scale{k}_fusion_input"), cat);
    b.role(&format!("scale{k}_fusion"), fusion);
    Ok((logits, cat))
}

fn seg_head(b: &mut GraphBuilder, cfg: &ArchConfig, logits: NodeId) {
    b.output("class_logits", logits);
    let probs = b.softmax("seg.probs", logits);
    b.output("class_probs", probs);
    b.loss("seg.loss", logits, LossKind::SegmentationXent, cfg.seg_loss_weight);
}

/// Two-stream encoder/decoder segmenter at a single scale.
pub fn build_segmenter(cfg: &ArchConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new(cfg.seed);
    let img = b.input("image", cfg.image_channels);
    let hgt = b.input("height", cfg.height_channels);
    let (logits, cat) = seg_branch(&mut b, cfg, 0, img, hgt)?;
    b.role("class_fusion_input", cat);
    b.role("class_fusion", logits);
    seg_head(&mut b, cfg, logits);
    b.finish(ArchConfig { scales: 1, model: ModelKind::Segmenter, ..cfg.clone() })
}

/// The scale-`k` copy of the multi-scale segmenter as a standalone graph,
/// for per-scale pretraining. Parameter names match the multi-scale graph.
pub fn build_scale_branch(cfg: &ArchConfig, k: usize) -> Result<ModelGraph> {
    cfg.validate()?;
    if k >= 3 {
        return Err(Error::Config(format!("scale index {k} out of range 0..3")));
    }
    let mut b = GraphBuilder::new(cfg.seed);
    let img = b.input("image", cfg.image_channels);
    let hgt = b.input("height", cfg.height_channels);
    let (logits, _) = seg_branch(&mut b, cfg, k, img, hgt)?;
    seg_head(&mut b, cfg, logits);
    b.finish(ArchConfig { model: ModelKind::Segmenter, ..cfg.clone() })
}

/// Independent segmenter copies at full, half and quarter resolution whose
/// upsampled class scores are fused by a 1×1 convolution.
pub fn build_multiscale_seg(cfg: &ArchConfig, n_scales: usize) -> Result<ModelGraph> {
    match n_scales {
        1 => return build_segmenter(cfg),
        3 => {}
        n => return Err(Error::Config(format!("n_scales must be 1 or 3, got {n}"))),
    }
    cfg.validate()?;
    let mut b = GraphBuilder::new(cfg.seed);
    let img = b.input("image", cfg.image_channels);
    let hgt = b.input("height", cfg.height_channels);
    let mut per_scale = Vec::new();
    for k in 0..n_scales {
        per_scale.push(seg_branch(&mut b, cfg, k, img, hgt)?.0);
    }
    let cat = b.concat("seg.scales.cat", &per_scale);
    let logits = b.conv1x1_mean("seg.fuse_scales", cat, cfg.num_classes);
    b.role("class_fusion_input", cat);
    b.role("class_fusion", logits);
    seg_head(&mut b, cfg, logits);
    b.finish(ArchConfig { scales: n_scales, model: ModelKind::Segmenter, ..cfg.clone() })
}

fn fcn_encoder(b: &mut GraphBuilder, prefix: &str, mut x: NodeId, cfg: &ArchConfig) -> (Vec<NodeId>, NodeId) {
    let mut feats = Vec::new();
    for s in 0..cfg.depth {
        for j in 0..cfg.convs_per_stage {
            x = b.conv3x3(&format!("{prefix}.enc{s}.conv{j}"), x, cfg.width(s));
            x = b.relu(&format!("{prefix}.enc{s}.relu{j}"), x);
        }
        feats.push(x);
        x = b.maxpool(&format!("{prefix}.enc{s}.pool"), x);
    }
    let wide = 2 * cfg.width(cfg.depth - 1);
    for j in 0..2 {
        x = b.conv1x1(&format!("{prefix}.head{j}"), x, wide);
        x = b.relu(&format!("{prefix}.head{j}.relu"), x);
        let rate = cfg.dropout_at(cfg.depth);
        if rate > 0.0 {
            x = b.dropout(&format!("{prefix}.head{j}.drop"), x, rate);
        }
    }
    (feats, x)
}

/// Two-stream skip-connection segmenter: a pooled encoder, two 1×1 head
/// blocks, then repeated ×2 upsampling of the class scores with summed
/// scores from the pre-pool encoder features.
pub fn build_fcn_style(cfg: &ArchConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new(cfg.seed);
    let img = b.input("image", cfg.image_channels);
    let hgt = b.input("height", cfg.height_channels);
    let (fi, hi) = fcn_encoder(&mut b, "fcn.img", img, cfg);
    let (fh, hh) = fcn_encoder(&mut b, "fcn.hgt", hgt, cfg);
    let cat = b.concat("fcn.cat", &[hi, hh]);
    let mut y = b.conv1x1("fcn.score", cat, cfg.num_classes);
    for s in (0..cfg.depth).rev() {
        y = b.upsample(&format!("fcn.up{s}"), y, 2)?;
        if cfg.fcn_skips {
            let sc = b.concat(&format!("fcn.skip{s}.cat"), &[fi[s], fh[s]]);
            let skip = b.conv1x1(&format!("fcn.skip{s}"), sc, cfg.num_classes);
            y = b.add(&format!("fcn.skip{s}.add"), y, skip)?;
        }
    }
    seg_head(&mut b, cfg, y);
    b.finish(ArchConfig { model: ModelKind::FcnStyle, ..cfg.clone() })
}

/// Feeds the boundary detector's fused output into a segmenter as an extra
/// channel of both input streams and merges the two graphs so all losses
/// train end to end. With `reinject_skip` the boundary map is also
/// concatenated to the input of the final class-score convolution.
pub fn assemble_boundary_segmenter(
    boundary: &ModelGraph,
    segmenter: &ModelGraph,
    reinject_skip: bool,
) -> Result<ModelGraph> {
    let b_final = boundary
        .output_id("boundary_final")
        .ok_or_else(|| Error::Config("boundary graph has no `boundary_final` output".into()))?;
    let b_inputs: BTreeMap<String, NodeId> = boundary
        .nodes()
        .iter()
        .enumerate()
        .filter_map(|(id, n)| match &n.op {
            Op::Input { name } => Some((name.clone(), id)),
            _ => None,
        })
        .collect();
    let (b_nodes, b_params, b_outputs, b_roles, _) = boundary.clone().into_parts();
    let (s_nodes, s_params, s_outputs, s_roles, s_cfg) = segmenter.clone().into_parts();
    let fusion = if reinject_skip {
        let f = s_roles
            .get("class_fusion")
            .copied()
            .ok_or_else(|| Error::Config("segmenter has no full-resolution class fusion to reinject into".into()))?;
        Some((f, s_roles["class_fusion_input"]))
    } else {
        None
    };

    let mut nodes: Vec<Node> = b_nodes;
    let mut params: Vec<Param<f32>> = b_params;
    let mut map = vec![usize::MAX; s_nodes.len()];
    let mut widened: Option<String> = None;
    for (sid, node) in s_nodes.into_iter().enumerate() {
        let mut node = node;
        if let Op::Input { name } = &node.op {
            let &bid = b_inputs
                .get(name)
                .ok_or_else(|| Error::Config(format!("boundary graph lacks segmenter input `{name}`")))?;
            let expected = nodes[bid].channels + 1;
            if node.channels != expected {
                return Err(Error::Config(format!(
                    "segmenter input `{name}` has {} channels, expected {expected} (raw input plus boundary map)",
                    node.channels
                )));
            }
            nodes.push(Node {
                name: format!("assemble.{name}"),
                op: Op::Concat,
                inputs: vec![bid, b_final],
                channels: expected,
            });
            map[sid] = nodes.len() - 1;
            continue;
        }
        node.inputs = node.inputs.iter().map(|&i| map[i]).collect();
        if let Op::Unpool { pool } = &mut node.op {
            *pool = map[*pool];
        }
        if let Some((f, f_in)) = fusion {
            if sid == f {
                let c = nodes[map[f_in]].channels + 1;
                nodes.push(Node {
                    name: "assemble.reinject".into(),
                    op: Op::Concat,
                    inputs: vec![map[f_in], b_final],
                    channels: c,
                });
                node.inputs = vec![nodes.len() - 1];
                if let Op::Conv { weight, .. } = &node.op {
                    widened = Some(weight.clone());
                }
            }
        }
        nodes.push(node);
        map[sid] = nodes.len() - 1;
    }
    for mut p in s_params {
        if widened.as_deref() == Some(p.name.as_str()) {
            // One extra input column, zero so the assembled network starts
            // from the segmenter's own function.
            let s = p.value.shape();
            let wide = Tensor::from_fn(Shape::new(s.n, s.c + 1, s.h, s.w), |o, i, y, x| {
                if i < s.c {
                    p.value.at(o, i, y, x)
                } else {
                    0.0
                }
            });
            p.dims[1] += 1;
            p.value = wide;
        }
        params.push(p);
    }
    let mut outputs = b_outputs;
    for (k, v) in s_outputs {
        outputs.insert(k, map[v]);
    }
    let mut roles = b_roles;
    for (k, v) in s_roles {
        roles.insert(k, map[v]);
    }
    roles.insert("boundary_final".into(), b_final);
    let cfg = ArchConfig {
        image_channels: s_cfg.image_channels - 1,
        height_channels: s_cfg.height_channels - 1,
        reinject_skip,
        model: if s_cfg.model == ModelKind::FcnStyle {
            ModelKind::BoundaryFcn
        } else {
            ModelKind::BoundarySegmenter
        },
        ..s_cfg
    };
    ModelGraph::from_parts(nodes, params, outputs, roles, cfg)
}
