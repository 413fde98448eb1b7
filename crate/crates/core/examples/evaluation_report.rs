//! Confusion matrix, per-class scores and CSV export for a prediction that
//! differs from the reference in scattered blocks.

use edgeseg::metrics::{confusion, default_class_names, mean_f1, overall_accuracy, per_class_prf, report, to_csv};
use edgeseg::synth::{generate_scene, ClassMix, NUM_CLASSES};
use edgeseg::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> edgeseg::Result<()> {
    let scene = generate_scene(256, &ClassMix::default(), 21)?;
    let reference = &scene.labels;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut values = reference.values().to_vec();
    for _ in 0..300 {
        let (x0, y0) = (rng.random_range(0..252), rng.random_range(0..252));
        let class = rng.random_range(0..NUM_CLASSES as u8);
        for y in y0..y0 + 4 {
            for x in x0..x0 + 4 {
                values[y * 256 + x] = class;
            }
        }
    }
    // a strip the annotator left out
    for v in &mut values[..256 * 3] {
        *v = 255;
    }
    let pred = LabelMap::new(256, 256, values, NUM_CLASSES, Some(255))?;

    let cm = confusion(&pred, reference, Some(255))?;
    let names = default_class_names(NUM_CLASSES);
    println!("{}", report(&cm, &names));
    for (name, m) in names.iter().zip(per_class_prf(&cm)) {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        println!("{name:<16} P {:>6}  R {:>6}  F1 {:>6}", pct(m.precision), pct(m.recall), pct(m.f1));
    }
    println!(
        "OA {:.2}%  mean F1 {:.2}%  ({} pixels scored)",
        100.0 * overall_accuracy(&cm).unwrap_or(0.0),
        100.0 * mean_f1(&cm).unwrap_or(0.0),
        cm.total()
    );
    println!("\n{}", to_csv(&cm, &names));
    Ok(())
}
