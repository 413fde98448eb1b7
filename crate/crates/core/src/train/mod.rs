//! Optimization: initialization, SGD with momentum, step schedule,
//! augmentation, single-stage training and the staged pipeline.

mod augment;
mod data;
mod pipeline;

pub use augment::{apply_affine, augment_pair, AffineParams, AugmentConfig};
pub use data::{Batch, BoundarySupervision, Sample};
pub use pipeline::{staged_pipeline, PipelineConfig, PipelineOutcome, StageArtifact};

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Targets};
use crate::tensor::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Uniform Xavier/Glorot initialization on ±√(6 / (fan_in + fan_out)).
///
/// `dims` is `(out, in, kh, kw)` or `(out, in)`.
pub fn xavier_init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Tensor {
    assert!(dims.len() >= 2, "xavier_init needs rank >= 2, got {dims:?}");
    let receptive: usize = dims[2..].iter().product();
    let fan_in = dims[1] * receptive;
    let fan_out = dims[0] * receptive;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let shape = crate::graph::dims_to_shape(dims);
    let data = (0..shape.numel()).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Which part of the staged schedule a run belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BoundaryPretrain,
    SegmenterPretrain,
    PerScale,
    AssembledFinetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::BoundaryPretrain => "boundary_pretrain",
            Stage::SegmenterPretrain => "segmenter_pretrain",
            Stage::PerScale => "per_scale",
            Stage::AssembledFinetune => "assembled_finetune",
        }
    }

    fn uses_boundary_loss(self) -> bool {
        matches!(self, Stage::BoundaryPretrain | Stage::AssembledFinetune)
    }

    fn uses_class_loss(self) -> bool {
        !matches!(self, Stage::BoundaryPretrain)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_step_iters: usize,
    pub lr_factor: f64,
    pub total_iters: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub stage: Stage,
    /// Side length of the random training crops; `None` trains on whole
    /// samples.
    pub crop: Option<usize>,
    /// Learning-rate multipliers by parameter-name prefix (longest match
    /// wins).
    pub lr_scales: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-2,
            lr_step_iters: 12000,
            lr_factor: 0.1,
            total_iters: 1000,
            batch_size: 2,
            momentum: 0.9,
            weight_decay: 0.00015,
            seed: 0,
            stage: Stage::SegmenterPretrain,
            crop: None,
            lr_scales: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("base_lr", self.base_lr),
            ("lr_factor", self.lr_factor),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ];
        if let Some((k, v)) = rates.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("train.{k} must be finite and >= 0, got {v}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.lr_step_iters == 0 {
            return Err(Error::Config("train.lr_step_iters must be >= 1".into()));
        }
        if self.crop == Some(0) {
            return Err(Error::Config("train.crop must be positive".into()));
        }
        if let Some((k, v)) = self.lr_scales.iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("lr scale for `{k}` must be finite and >= 0, got {v}")));
        }
        Ok(())
    }

    fn lr_scale(&self, name: &str) -> f64 {
        self.lr_scales
            .iter()
            .filter(|(p, _)| name.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map_or(1.0, |(_, &s)| s)
    }
}

/// Step schedule: `base_lr · lr_factor^⌊iter / lr_step_iters⌋`.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.lr_factor.powi((iter / cfg.lr_step_iters.max(1)) as i32)
}

/// One momentum SGD update with L2 weight decay:
/// `v ← momentum·v − lr·(g + weight_decay·w)`, `w ← w + v`.
pub fn sgd_step(
    params: &mut [f32],
    grads: &[f32],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: &mut [f32],
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("sgd_step", "grad", params.len(), grads.len()));
    }
    if velocity.len() != params.len() {
        return Err(Error::shape("sgd_step", "velocity", params.len(), velocity.len()));
    }
    let (lr, m, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = m * *v - lr * (g + wd * *w);
        *w += *v;
    }
    Ok(())
}

/// Momentum buffers for every learnable parameter of a graph.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: BTreeMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates all unfrozen trainable parameters from their grad slots.
    pub fn step(&mut self, graph: &mut ModelGraph, lr: f64, cfg: &TrainConfig) -> Result<()> {
        for p in graph.params_mut() {
            if !p.learns() {
                continue;
            }
            let scaled = lr * cfg.lr_scale(&p.name);
            let n = p.value.len();
            let v = self.velocity.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let grads = match p.value.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; n],
            };
            sgd_step(p.value.data_mut(), &grads, scaled, cfg.momentum, cfg.weight_decay, v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub stage: Stage,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iter,stage,loss,lr").expect("writing to a Vec");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iter, r.stage.name(), r.loss, r.lr).expect("writing to a Vec");
    }
    crate::graph::write_file(path, &out)
}

/// Returns the forward/backward targets for a batch as seen by `stage`.
fn targets<'a>(batch: &'a Batch, stage: Stage) -> Targets<'a, f32> {
    Targets {
        labels: stage.uses_class_loss().then(|| batch.labels.iter().collect()),
        ignore_label: batch.labels.first().and_then(|l| l.ignore_label()),
        boundary: if stage.uses_boundary_loss() {
            batch.boundary.as_ref().map(|(t, w)| (t, w))
        } else {
            None
        },
    }
}

/// Draws one mini-batch: random samples, random crops, one shared affine.
pub fn draw_batch<R: Rng + ?Sized>(
    data: &[Sample],
    batch_size: usize,
    crop: Option<usize>,
    augment: &AugmentConfig,
    rng: &mut R,
) -> Result<Batch> {
    let params = AffineParams::sample(augment, rng);
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let s = &data[rng.random_range(0..data.len())];
        let cropped = match crop {
            Some(c) if c < s.width() || c < s.rows() => {
                if c > s.width() || c > s.rows() {
                    return Err(Error::Data(format!(
                        "crop {c} exceeds {}x{} training sample",
                        s.width(),
                        s.rows()
                    )));
                }
                let x = rng.random_range(0..=s.width() - c);
                let y = rng.random_range(0..=s.rows() - c);
                s.crop(x, y, c, c)?
            }
            _ => s.clone(),
        };
        items.push(apply_affine(&cropped, &params));
    }
    Batch::from_samples(&items)
}

/// Forward in train mode and evaluate the losses `stage` supervises,
/// without updating anything.
pub fn batch_loss<R: Rng + ?Sized>(graph: &mut ModelGraph, batch: &Batch, stage: Stage, rng: &mut R) -> Result<f64> {
    graph.forward(&[("image", &batch.image), ("height", &batch.height)], Mode::Train, rng)?;
    Ok(graph.evaluate_losses(&targets(batch, stage))?.0.total)
}

/// Mean loss over fixed, unaugmented batches built from `data` (no
/// dropout randomness leaks into the caller's RNG).
pub fn mean_loss(graph: &mut ModelGraph, data: &[Sample], stage: Stage, crop: Option<usize>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut total = 0.0;
    for s in data {
        let s = match crop {
            Some(c) if c <= s.width() && c <= s.rows() => s.crop((s.width() - c) / 2, (s.rows() - c) / 2, c, c)?,
            _ => s.clone(),
        };
        total += batch_loss(graph, &Batch::from_samples(&[s])?, stage, &mut rng)?;
    }
    Ok(total / data.len().max(1) as f64)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    /// Mean loss over the first and last `window` iterations.
    pub fn first_last_means(&self, window: usize) -> (f64, f64) {
        let n = self.trace.len();
        let w = window.min(n).max(1);
        let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len().max(1) as f64;
        (mean(&self.trace[..w.min(n)]), mean(&self.trace[n.saturating_sub(w)..]))
    }
}

/// Runs `cfg.total_iters` SGD iterations on `graph`.
pub fn train_stage(
    graph: &mut ModelGraph,
    data: &[Sample],
    cfg: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    augment.validate()?;
    if data.is_empty() {
        return Err(Error::Data(format!("stage `{}` has an empty dataset", cfg.stage.name())));
    }
    if cfg.stage.uses_boundary_loss() && data.iter().any(|s| s.boundary.is_none()) {
        return Err(Error::Data(format!(
            "stage `{}` needs boundary targets for every sample",
            cfg.stage.name()
        )));
    }
    if let Some(c) = cfg.crop {
        let m = graph.spatial_multiple();
        if c % m != 0 {
            return Err(Error::Config(format!("train.crop {c} must be a multiple of {m}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new();
    let mut out = TrainOutcome::default();
    for iter in 0..cfg.total_iters {
        let batch = draw_batch(data, cfg.batch_size, cfg.crop, augment, &mut rng)?;
        graph.zero_grad();
        graph.forward(&[("image", &batch.image), ("height", &batch.height)], Mode::Train, &mut rng)?;
        let loss = graph.loss_and_backward(&targets(&batch, cfg.stage))?.total;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: cfg.stage.name().into(),
                iter,
                loss,
            });
        }
        let lr = lr_at(iter, cfg);
        sgd.step(graph, lr, cfg)?;
        log::debug!("{} iter {iter}: loss {loss:.5} lr {lr:e}", cfg.stage.name());
        out.trace.push(TraceRow {
            iter,
            stage: cfg.stage,
            loss,
            lr,
        });
    }
    Ok(out)
}

