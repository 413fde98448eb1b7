//! Overlapping-tile inference on rasters larger than the network input,
//! and probability averaging of two trained models.
//!
//! `cargo run --release --example tiled_inference [out_dir]`

use edgeseg::boundary::BoundaryParams;
use edgeseg::graph::{ArchConfig, ModelKind};
use edgeseg::io::{read_score_map, write_label_png, write_score_map};
use edgeseg::metrics::overall_accuracy;
use edgeseg::synth::{generate_scene, generate_scenes, ClassMix};
use edgeseg::tiling::{argmax_labels, ensemble_average, plan_all, plan_tiles, predict_raster, score_confusion, TileConfig};
use edgeseg::train::{staged_pipeline, AugmentConfig, PipelineConfig, Stage, TrainConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("edgeseg-tiles"));
    std::fs::create_dir_all(&out)?;

    let hw = (700, 500);
    let full = TileConfig::default();
    for &s in &full.strides {
        println!("{hw:?} stride {s}: {} windows", plan_tiles(hw, full.tile, s)?.origins.len());
    }
    let all = plan_all(hw, &full)?;
    let evaluations: u32 = all.values().sum();
    println!("{} distinct windows carry {evaluations} votes", all.len());

    let data = generate_scenes(12, 64, &ClassMix::default(), 2)?
        .iter()
        .map(|s| s.to_sample(&BoundaryParams::default()))
        .collect::<edgeseg::Result<Vec<_>>>()?;
    let stage = |stage, total_iters| TrainConfig {
        stage,
        total_iters,
        crop: Some(32),
        ..TrainConfig::default()
    };
    let cfg = PipelineConfig {
        boundary: stage(Stage::BoundaryPretrain, 150),
        segmenter: stage(Stage::SegmenterPretrain, 1000),
        multiscale: stage(Stage::PerScale, 300),
        finetune: TrainConfig {
            base_lr: 1e-3,
            ..stage(Stage::AssembledFinetune, 50)
        },
        skip_boundary_pretrain: false,
    };

    let scene = generate_scene(200, &ClassMix::default(), 99)?.to_sample(&BoundaryParams::default())?;
    let tiles = TileConfig {
        tile: 64,
        strides: vec![32, 48],
    };
    let mut maps = Vec::new();
    for model in [ModelKind::BoundarySegmenter, ModelKind::BoundaryFcn] {
        let arch = ArchConfig {
            model,
            base_width: 4,
            ..ArchConfig::default()
        };
        let mut g = staged_pipeline(&data, &arch, &cfg, &AugmentConfig::default(), None)?.graph;
        let map = predict_raster(&mut g, &scene.image, &scene.height, &tiles)?.normalized();
        let cm = score_confusion(std::slice::from_ref(&map), std::slice::from_ref(&scene))?;
        println!("{model:?}: OA {:.2}%", 100.0 * overall_accuracy(&cm).unwrap_or(0.0));
        maps.push(map);
    }

    let avg = ensemble_average(&maps)?;
    let cm = score_confusion(std::slice::from_ref(&avg), std::slice::from_ref(&scene))?;
    println!("average of both: OA {:.2}%", 100.0 * overall_accuracy(&cm).unwrap_or(0.0));

    let path = out.join("scene.scor");
    write_score_map(&path, &avg)?;
    assert_eq!(read_score_map(&path)?, avg);
    write_label_png(&out.join("scene.png"), &argmax_labels(&avg))?;
    println!("scores and labels in {}", out.display());
    Ok(())
}
