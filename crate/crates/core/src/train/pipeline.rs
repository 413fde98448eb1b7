use super::{mean_loss, train_stage, AugmentConfig, Sample, Stage, TraceRow, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{
    assemble_boundary_segmenter, build_fcn_style, build_boundary_detector, build_multiscale_seg, build_scale_branch, build_segmenter,
    save_weights, transfer_params, ArchConfig, ModelGraph, ModelKind,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Per-stage settings of the staged schedule. A stage table read from a
/// file only overrides the keys it names; the rest keep that stage's
/// defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPipeline")]
pub struct PipelineConfig {
    pub boundary: TrainConfig,
    pub segmenter: TrainConfig,
    pub multiscale: TrainConfig,
    pub finetune: TrainConfig,
    /// Leave the boundary detector at its random initialization.
    pub skip_boundary_pretrain: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            boundary: TrainConfig {
                stage: Stage::BoundaryPretrain,
                batch_size: 5,
                ..TrainConfig::default()
            },
            segmenter: TrainConfig {
                stage: Stage::SegmenterPretrain,
                batch_size: 2,
                ..TrainConfig::default()
            },
            multiscale: TrainConfig {
                stage: Stage::PerScale,
                batch_size: 2,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                stage: Stage::AssembledFinetune,
                batch_size: 1,
                base_lr: 1e-3,
                ..TrainConfig::default()
            },
            skip_boundary_pretrain: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawPipeline {
    boundary: toml::Table,
    segmenter: toml::Table,
    multiscale: toml::Table,
    finetune: toml::Table,
    skip_boundary_pretrain: Option<bool>,
}

impl Default for RawPipeline {
    fn default() -> Self {
        RawPipeline {
            boundary: toml::Table::new(),
            segmenter: toml::Table::new(),
            multiscale: toml::Table::new(),
            finetune: toml::Table::new(),
            skip_boundary_pretrain: None,
        }
    }
}

fn overlay(base: &TrainConfig, keys: toml::Table, section: &str) -> std::result::Result<TrainConfig, String> {
    let mut table = toml::Table::try_from(base).map_err(|e| e.to_string())?;
    table.extend(keys);
    let merged: TrainConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| format!("train.{section}: {}", e.message()))?;
    Ok(TrainConfig {
        stage: base.stage,
        ..merged
    })
}

impl TryFrom<RawPipeline> for PipelineConfig {
    type Error = String;

    fn try_from(raw: RawPipeline) -> std::result::Result<Self, String> {
        let d = PipelineConfig::default();
        Ok(PipelineConfig {
            boundary: overlay(&d.boundary, raw.boundary, "boundary")?,
            segmenter: overlay(&d.segmenter, raw.segmenter, "segmenter")?,
            multiscale: overlay(&d.multiscale, raw.multiscale, "multiscale")?,
            finetune: overlay(&d.finetune, raw.finetune, "finetune")?,
            skip_boundary_pretrain: raw.skip_boundary_pretrain.unwrap_or(d.skip_boundary_pretrain),
        })
    }
}

impl PipelineConfig {
    /// Derives every stage seed from one value.
    pub fn reseed(&mut self, seed: u64) {
        for (i, stage) in [&mut self.boundary, &mut self.segmenter, &mut self.multiscale, &mut self.finetune]
            .into_iter()
            .enumerate()
        {
            stage.seed = seed.wrapping_mul(4).wrapping_add(i as u64);
        }
    }
}

/// Weights saved after one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageArtifact {
    pub stage: Stage,
    pub label: String,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub graph: ModelGraph,
    pub trace: Vec<TraceRow>,
    pub artifacts: Vec<StageArtifact>,
    /// Boundary loss of the pretrained detector on the training data.
    pub boundary_loss: f64,
    /// Class loss of the pretrained segmenter on the training data.
    pub segmenter_loss: f64,
    /// Total loss of the assembled network before fine-tuning.
    pub finetune_initial_loss: f64,
}

struct Run<'a> {
    data: &'a [Sample],
    augment: &'a AugmentConfig,
    out_dir: Option<&'a Path>,
    trace: Vec<TraceRow>,
    artifacts: Vec<StageArtifact>,
}

impl Run<'_> {
    fn train(&mut self, graph: &mut ModelGraph, cfg: &TrainConfig, stage: Stage, label: &str) -> Result<()> {
        let cfg = TrainConfig { stage, ..cfg.clone() };
        log::info!("stage {label}: {} iterations", cfg.total_iters);
        let outcome = train_stage(graph, self.data, &cfg, self.augment)?;
        self.trace.extend(outcome.trace);
        let path = match self.out_dir {
            Some(dir) => {
                let p = dir.join(format!("{label}.edgw"));
                save_weights(graph, &p)?;
                Some(p)
            }
            None => None,
        };
        self.artifacts.push(StageArtifact {
            stage,
            label: label.to_string(),
            path,
        });
        Ok(())
    }
}

/// Trains the boundary-aware segmenter stage by stage:
/// 1. the boundary detector alone on boundary targets;
/// 2. the segmenter (each scale separately for three scales) with the
///    detector imported and frozen;
/// 3. for three scales, all scales together, detector still frozen;
/// 4. the assembled network end to end at the fine-tune settings.
///
/// Weights move between stages by parameter name. With `out_dir` every
/// stage also writes `<label>.edgw`.
pub fn staged_pipeline(
    data: &[Sample],
    arch: &ArchConfig,
    cfg: &PipelineConfig,
    augment: &AugmentConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutcome> {
    arch.validate()?;
    let fcn = match arch.model {
        ModelKind::BoundarySegmenter => false,
        ModelKind::BoundaryFcn => true,
        other => {
            return Err(Error::Config(format!(
                "staged pipeline trains an assembled model, got arch.model = {other:?}"
            )))
        }
    };
    if data.is_empty() {
        return Err(Error::Data("staged pipeline needs training samples".into()));
    }
    let mut run = Run {
        data,
        augment,
        out_dir,
        trace: Vec::new(),
        artifacts: Vec::new(),
    };
    let seg_cfg = arch.with_boundary_channels();
    let crop_of = |c: &TrainConfig| c.crop;

    let mut detector = build_boundary_detector(arch)?;
    if !cfg.skip_boundary_pretrain {
        run.train(&mut detector, &cfg.boundary, Stage::BoundaryPretrain, "boundary")?;
    }
    let boundary_loss = mean_loss(&mut detector, data, Stage::BoundaryPretrain, crop_of(&cfg.boundary))?;

    let with_detector = |seg: &ModelGraph, reinject: bool| -> Result<ModelGraph> {
        let mut g = assemble_boundary_segmenter(&build_boundary_detector(arch)?, seg, reinject)?;
        transfer_params(&detector, &mut g);
        g.set_frozen("edge.", true);
        Ok(g)
    };

    let mut segmenter = if fcn {
        let mut g = with_detector(&build_fcn_style(&seg_cfg)?, false)?;
        run.train(&mut g, &cfg.segmenter, Stage::SegmenterPretrain, "segmenter")?;
        g
    } else if arch.scales == 1 {
        let mut g = with_detector(&build_segmenter(&seg_cfg)?, arch.reinject_skip)?;
        run.train(&mut g, &cfg.segmenter, Stage::SegmenterPretrain, "segmenter")?;
        g
    } else {
        let mut branches = Vec::new();
        for k in 0..arch.scales {
            let mut g = with_detector(&build_scale_branch(&seg_cfg, k)?, false)?;
            run.train(&mut g, &cfg.segmenter, Stage::PerScale, &format!("scale{k}"))?;
            branches.push(g);
        }
        let mut g = with_detector(&build_multiscale_seg(&seg_cfg, arch.scales)?, arch.reinject_skip)?;
        for b in &branches {
            transfer_params(b, &mut g);
        }
        run.train(&mut g, &cfg.multiscale, Stage::PerScale, "multiscale")?;
        g
    };
    let segmenter_loss = mean_loss(&mut segmenter, data, Stage::SegmenterPretrain, crop_of(&cfg.segmenter))?;

    let mut full = arch.build()?;
    transfer_params(&segmenter, &mut full);
    transfer_params(&detector, &mut full);
    let finetune_initial_loss = mean_loss(&mut full, data, Stage::AssembledFinetune, crop_of(&cfg.finetune))?;
    run.train(&mut full, &cfg.finetune, Stage::AssembledFinetune, "assembled")?;

    Ok(PipelineOutcome {
        graph: full,
        trace: run.trace,
        artifacts: run.artifacts,
        boundary_loss,
        segmenter_loss,
        finetune_initial_loss,
    })
}
