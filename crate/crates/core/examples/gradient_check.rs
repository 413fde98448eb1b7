//! Finite-difference check of every architecture at toy size.

use edgeseg::graph::{graph_grad_check, ArchConfig, GraphCheckConfig, ModelKind, Targets};
use edgeseg::{LabelMap, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: Shape, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn main() -> edgeseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let models = [
        ModelKind::Boundary,
        ModelKind::Segmenter,
        ModelKind::FcnStyle,
        ModelKind::BoundarySegmenter,
        ModelKind::BoundaryFcn,
    ];
    for model in models {
        let cfg = ArchConfig {
            model,
            base_width: 2,
            depth: 2,
            num_classes: 3,
            ..ArchConfig::default()
        };
        let mut g = cfg.build()?;
        // keep activations off the ReLU kink
        for p in g.params_mut() {
            if p.name.ends_with(".bias") {
                for v in p.value.data_mut() {
                    *v = rng.random_range(0.05..0.15);
                }
            }
        }
        let img = uniform(Shape::new(1, 3, 16, 16), -1.0, 1.0, &mut rng);
        let hgt = uniform(Shape::new(1, 2, 16, 16), -1.0, 1.0, &mut rng);
        let labels = LabelMap::new(16, 16, (0..256).map(|_| rng.random_range(0..3)).collect(), 3, Some(255))?;
        let target = uniform(Shape::new(1, 1, 16, 16), 0.0, 1.0, &mut rng);
        let weights = uniform(Shape::new(1, 1, 16, 16), 0.1, 1.0, &mut rng);
        let targets = Targets {
            labels: (model != ModelKind::Boundary).then(|| vec![&labels]),
            ignore_label: Some(255),
            boundary: matches!(model, ModelKind::Boundary | ModelKind::BoundarySegmenter | ModelKind::BoundaryFcn)
                .then_some((&target, &weights)),
        };
        let check = GraphCheckConfig {
            max_coords: 300,
            ..GraphCheckConfig::default()
        };
        let r = graph_grad_check(&g, &[("image", &img), ("height", &hgt)], &targets, check)?;
        println!("{:<20} {} params  {r}", format!("{model:?}"), g.parameter_count());
    }
    Ok(())
}
