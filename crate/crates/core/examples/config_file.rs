//! Reading a run configuration: defaults, overrides, validation and the
//! error for a misspelled key.

use edgeseg::config::parse_config;

const TEXT: &str = r#"
[arch]
model = "boundary_segmenter"
base_width = 8
scales = 3

[train]
skip_boundary_pretrain = false

[train.boundary]
total_iters = 300
batch_size = 5
crop = 64

[train.finetune]
base_lr = 0.001
batch_size = 1

[augment]
rotation_range = [0.0, 10.0]

[data]
tile = 128
strides = [64, 96]
radius = 2
"#;

fn main() -> edgeseg::Result<()> {
    let mut cfg = parse_config(TEXT)?;
    cfg.reseed(5);
    println!("model {:?}, base width {}, scales {}", cfg.arch.model, cfg.arch.base_width, cfg.arch.scales);
    for (name, stage) in [
        ("boundary", &cfg.train.boundary),
        ("segmenter", &cfg.train.segmenter),
        ("multiscale", &cfg.train.multiscale),
        ("finetune", &cfg.train.finetune),
    ] {
        println!(
            "  {name:<10} iters {:>5}  batch {}  lr {:e}  seed {}",
            stage.total_iters, stage.batch_size, stage.base_lr, stage.seed
        );
    }
    let b = cfg.data.boundary_params();
    println!("boundary radius {} truncation {} ({:?})", b.radius, b.truncation, b.beta_mode);
    println!("tiles {:?}", cfg.data.tile_config());

    println!("\nresolved file:\n{}", cfg.to_toml()?);

    for bad in ["[data]\nstride = [64]\n", "[data]\ntile = 64\nstrides = [96]\n"] {
        println!("{:?} -> {}", bad, parse_config(bad).unwrap_err());
    }
    Ok(())
}
