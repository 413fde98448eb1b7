//! Boundary-aware model against the plain segmenter on synthetic scenes,
//! one seed per invocation, under the same iteration budget.
//!
//! `cargo run --release --example synthetic_experiment [seed] [--quick]`

use edgeseg::boundary::BoundaryParams;
use edgeseg::experiment::{compare_seed, synthetic_split, ExperimentConfig};
use std::time::Instant;

fn main() -> edgeseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::toy();
    if args.iter().any(|a| a == "--quick") {
        cfg.scenes = 40;
        cfg.train_scenes = 32;
        for stage in [
            &mut cfg.pipeline.boundary,
            &mut cfg.pipeline.segmenter,
            &mut cfg.pipeline.multiscale,
            &mut cfg.pipeline.finetune,
        ] {
            stage.total_iters /= 10;
        }
    }
    let start = Instant::now();
    let (train, val) = synthetic_split(&cfg, &BoundaryParams::default())?;
    println!(
        "{} training and {} validation scenes of {}x{}; {} iterations per model",
        train.len(),
        val.len(),
        cfg.scene_size,
        cfg.scene_size,
        cfg.staged_iterations()
    );
    let r = compare_seed(&cfg, seed, &train, &val)?;
    println!("seed {seed}");
    println!("  boundary-aware  OA {:.2}%", 100.0 * r.assembled.oa);
    println!("  plain segmenter OA {:.2}%", 100.0 * r.plain.oa);
    println!("  gap {:+.2} points, {:.1?}", 100.0 * (r.assembled.oa - r.plain.oa), start.elapsed());
    Ok(())
}
