//! Stage-by-stage training of the boundary-aware segmenter on synthetic
//! scenes, writing one weight file per stage.
//!
//! `cargo run --release --example staged_training [out_dir]`

use edgeseg::boundary::BoundaryParams;
use edgeseg::graph::{load_weights_partial, save_weights, ArchConfig};
use edgeseg::synth::{generate_scenes, ClassMix};
use edgeseg::train::{staged_pipeline, write_trace, AugmentConfig, PipelineConfig, Stage, TrainConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("edgeseg-staged"));
    std::fs::create_dir_all(&out)?;

    let data = generate_scenes(16, 64, &ClassMix::default(), 1)?
        .iter()
        .map(|s| s.to_sample(&BoundaryParams::default()))
        .collect::<edgeseg::Result<Vec<_>>>()?;
    let arch = ArchConfig {
        base_width: 4,
        ..ArchConfig::default()
    };
    let stage = |stage, total_iters| TrainConfig {
        stage,
        total_iters,
        batch_size: 2,
        crop: Some(32),
        ..TrainConfig::default()
    };
    let mut cfg = PipelineConfig {
        boundary: stage(Stage::BoundaryPretrain, 200),
        segmenter: stage(Stage::SegmenterPretrain, 300),
        multiscale: stage(Stage::PerScale, 300),
        finetune: TrainConfig {
            base_lr: 1e-3,
            batch_size: 1,
            ..stage(Stage::AssembledFinetune, 100)
        },
        skip_boundary_pretrain: false,
    };
    cfg.reseed(3);

    let r = staged_pipeline(&data, &arch, &cfg, &AugmentConfig::default(), Some(&out))?;
    save_weights(&r.graph, &out.join("model.edgw"))?;
    write_trace(&out.join("trace.csv"), &r.trace)?;
    println!("boundary detector loss {:.4}", r.boundary_loss);
    println!("segmenter class loss   {:.4}", r.segmenter_loss);
    println!("assembled before tune  {:.4}", r.finetune_initial_loss);
    for a in &r.artifacts {
        let path = a.path.as_ref().expect("out_dir was given");
        let mut g = arch.build()?;
        let rep = load_weights_partial(&mut g, path)?;
        println!(
            "{:<10} {:<20} loads {} tensors into the assembled graph, {} left at init",
            a.label,
            a.stage.name(),
            rep.loaded.len(),
            rep.missing.len()
        );
    }
    println!("weights and trace in {}", out.display());
    Ok(())
}
