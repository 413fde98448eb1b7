//! Trains the two-stream boundary detector alone on synthetic tiles and
//! prints the smoothed loss.
//!
//! `cargo run --release --example train_boundary_detector [iterations]`

use edgeseg::boundary::BoundaryParams;
use edgeseg::graph::{ArchConfig, ModelKind};
use edgeseg::synth::{generate_scenes, ClassMix};
use edgeseg::train::{train_stage, AugmentConfig, Stage, TrainConfig};

fn main() -> edgeseg::Result<()> {
    let iters = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(500);
    let data = generate_scenes(20, 64, &ClassMix::default(), 3)?
        .iter()
        .map(|s| s.to_sample(&BoundaryParams::default()))
        .collect::<edgeseg::Result<Vec<_>>>()?;
    let mut graph = ArchConfig {
        model: ModelKind::Boundary,
        base_width: 4,
        ..ArchConfig::default()
    }
    .build()?;
    let cfg = TrainConfig {
        stage: Stage::BoundaryPretrain,
        total_iters: iters,
        batch_size: 2,
        crop: Some(32),
        ..TrainConfig::default()
    };
    let out = train_stage(&mut graph, &data, &cfg, &AugmentConfig::default())?;
    for chunk in out.trace.chunks(50) {
        let mean = chunk.iter().map(|r| r.loss).sum::<f64>() / chunk.len() as f64;
        println!("iter {:>4}..{:<4} loss {mean:.4}", chunk[0].iter, chunk[chunk.len() - 1].iter);
    }
    let (first, last) = out.first_last_means(20);
    println!("first 20 {first:.4}, last 20 {last:.4} ({:.0}% of start)", 100.0 * last / first);
    Ok(())
}

