//! Matched-budget comparison on synthetic scenes: the staged
//! boundary-aware model against the plain segmenter, and the ensemble of
//! the boundary-aware segmenter with the boundary-aware skip-connection
//! model.

use crate::boundary::BoundaryParams;
use crate::error::{Error, Result};
use crate::graph::{ArchConfig, ModelGraph, ModelKind};
use crate::metrics::overall_accuracy;
use crate::synth::{generate_scenes, ClassMix};
use crate::tiling::{ensemble_average, predict_samples, score_confusion, ScoreMap, TileConfig};
use crate::train::{staged_pipeline, train_stage, AugmentConfig, PipelineConfig, Sample, Stage, TrainConfig};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scenes: usize,
    pub train_scenes: usize,
    pub scene_size: usize,
    pub data_seed: u64,
    /// Architecture of the boundary-aware model; the plain baseline uses
    /// the same widths with the segmenter alone.
    pub arch: ArchConfig,
    pub pipeline: PipelineConfig,
    pub augment: AugmentConfig,
    pub tiles: TileConfig,
}

impl ExperimentConfig {
    /// Desk-scale setting: 200 scenes of 128², 160 for training.
    pub fn toy() -> Self {
        let stage = |stage, iters, lr, batch_size| TrainConfig {
            stage,
            total_iters: iters,
            base_lr: lr,
            batch_size,
            crop: Some(64),
            lr_step_iters: 12000,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            scenes: 200,
            train_scenes: 160,
            scene_size: 128,
            data_seed: 2024,
            arch: ArchConfig {
                base_width: 8,
                ..ArchConfig::default()
            },
            pipeline: PipelineConfig {
                boundary: stage(Stage::BoundaryPretrain, 600, 1e-2, 2),
                segmenter: stage(Stage::SegmenterPretrain, 1500, 1e-2, 2),
                multiscale: stage(Stage::PerScale, 1500, 1e-2, 2),
                finetune: stage(Stage::AssembledFinetune, 500, 1e-3, 2),
                skip_boundary_pretrain: false,
            },
            augment: AugmentConfig::default(),
            tiles: TileConfig {
                tile: 128,
                strides: vec![128],
            },
        }
    }

    /// Same settings with every stage seeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.arch.seed = seed;
        out.pipeline.reseed(seed);
        out
    }

    /// Iterations of the staged schedule, summed over stages.
    pub fn staged_iterations(&self) -> usize {
        let p = &self.pipeline;
        let seg = if self.arch.scales == 1 || self.arch.model == ModelKind::BoundaryFcn {
            p.segmenter.total_iters
        } else {
            self.arch.scales * p.segmenter.total_iters + p.multiscale.total_iters
        };
        let boundary = if p.skip_boundary_pretrain { 0 } else { p.boundary.total_iters };
        boundary + seg + p.finetune.total_iters
    }

    /// Training settings of the plain segmenter: the segmenter stage with
    /// the whole staged iteration count.
    pub fn plain_train(&self) -> TrainConfig {
        TrainConfig {
            total_iters: self.staged_iterations(),
            stage: Stage::SegmenterPretrain,
            ..self.pipeline.segmenter.clone()
        }
    }
}

/// Generates the scenes and splits them into training and validation
/// samples.
pub fn synthetic_split(cfg: &ExperimentConfig, params: &BoundaryParams) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if cfg.train_scenes == 0 || cfg.train_scenes >= cfg.scenes {
        return Err(Error::Config(format!(
            "need 0 < train_scenes < scenes, got {} of {}",
            cfg.train_scenes, cfg.scenes
        )));
    }
    let scenes = generate_scenes(cfg.scenes, cfg.scene_size, &ClassMix::default(), cfg.data_seed)?;
    let mut samples = scenes
        .iter()
        .map(|s| s.to_sample(params))
        .collect::<Result<Vec<_>>>()?;
    let val = samples.split_off(cfg.train_scenes);
    Ok((samples, val))
}

/// Validation score maps and overall accuracy of one model.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub maps: Vec<ScoreMap>,
    pub oa: f64,
}

pub fn evaluate(graph: &mut ModelGraph, val: &[Sample], tiles: &TileConfig) -> Result<Evaluation> {
    let maps = predict_samples(graph, val, tiles)?;
    let oa = oa_of(&maps, val)?;
    Ok(Evaluation { maps, oa })
}

pub fn oa_of(maps: &[ScoreMap], val: &[Sample]) -> Result<f64> {
    overall_accuracy(&score_confusion(maps, val)?).ok_or_else(|| Error::Data("no evaluated pixels".into()))
}

/// Staged training of the model described by `cfg.arch`.
pub fn train_staged(cfg: &ExperimentConfig, train: &[Sample]) -> Result<ModelGraph> {
    Ok(staged_pipeline(train, &cfg.arch, &cfg.pipeline, &cfg.augment, None)?.graph)
}

/// Plain segmenter trained for the staged iteration count.
pub fn train_plain(cfg: &ExperimentConfig, train: &[Sample]) -> Result<ModelGraph> {
    let arch = ArchConfig {
        model: ModelKind::Segmenter,
        ..cfg.arch.clone()
    };
    let mut g = arch.build()?;
    train_stage(&mut g, train, &cfg.plain_train(), &cfg.augment)?;
    Ok(g)
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub assembled: Evaluation,
    pub plain: Evaluation,
}

/// Trains and evaluates both models for one seed.
pub fn compare_seed(cfg: &ExperimentConfig, seed: u64, train: &[Sample], val: &[Sample]) -> Result<SeedOutcome> {
    let cfg = cfg.with_seed(seed);
    let assembled = evaluate(&mut train_staged(&cfg, train)?, val, &cfg.tiles)?;
    let plain = evaluate(&mut train_plain(&cfg, train)?, val, &cfg.tiles)?;
    log::info!("seed {seed}: assembled OA {:.4}, plain OA {:.4}", assembled.oa, plain.oa);
    Ok(SeedOutcome { seed, assembled, plain })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Averaged members and their accuracies.
#[derive(Clone, Debug)]
pub struct EnsembleOutcome {
    pub member_oa: Vec<f64>,
    pub maps: Vec<ScoreMap>,
    pub oa: f64,
}

/// Averages per-scene score maps of several models.
pub fn ensemble(members: &[&Evaluation], val: &[Sample]) -> Result<EnsembleOutcome> {
    let scenes = members.first().map_or(0, |m| m.maps.len());
    let maps = (0..scenes)
        .map(|i| {
            let per: Vec<ScoreMap> = members.iter().map(|m| m.maps[i].clone()).collect();
            ensemble_average(&per)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleOutcome {
        member_oa: members.iter().map(|m| m.oa).collect(),
        oa: oa_of(&maps, val)?,
        maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn plain_budget_matches_staged_iterations() {
        let cfg = ExperimentConfig::toy();
        assert_eq!(cfg.staged_iterations(), 600 + 1500 + 500);
        assert_eq!(cfg.plain_train().total_iters, 2600);
        let three = ExperimentConfig {
            arch: ArchConfig {
                scales: 3,
                ..cfg.arch.clone()
            },
            ..cfg.clone()
        };
        assert_eq!(three.staged_iterations(), 600 + 3 * 1500 + 1500 + 500);
    }

    #[test]
    fn seeds_reach_every_stage() {
        let cfg = ExperimentConfig::toy().with_seed(5);
        assert_eq!(cfg.arch.seed, 5);
        assert_eq!(cfg.pipeline.finetune.seed, 23);
    }
}
