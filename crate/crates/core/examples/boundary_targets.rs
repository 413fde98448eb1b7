//! Soft boundary targets from label maps: a two-region example printed row
//! by row, then a synthetic scene summarized.

use edgeseg::boundary::{make_boundary_target, BetaMode, BoundaryParams};
use edgeseg::synth::{generate_scene, ClassMix};
use edgeseg::LabelMap;

fn main() -> edgeseg::Result<()> {
    let (w, h) = (12, 5);
    let values = (0..w * h).map(|i| u8::from(i % w >= w / 2)).collect();
    let labels = LabelMap::new(w, h, values, 2, Some(255))?;
    let params = BoundaryParams {
        radius: 2,
        truncation: 3.0,
        beta_mode: BetaMode::BackgroundOverTotal,
    };
    let t = make_boundary_target(&labels, &params)?;
    println!("two regions split at x = {}, radius 2, truncation 3:", w / 2);
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| format!("{:.2}", t.scores.get(x, y))).collect();
        println!("  {}", row.join(" "));
    }
    println!("beta = {:.4}", t.beta);

    let scene = generate_scene(128, &ClassMix::default(), 7)?;
    let t = make_boundary_target(&scene.labels, &BoundaryParams::default())?;
    let band = t.scores.data().iter().filter(|&&v| v > 0.0).count();
    println!(
        "\nsynthetic 128x128 scene: {band} band pixels ({:.1}%), peak {:.2}, beta {:.3}",
        100.0 * band as f64 / (128.0 * 128.0),
        t.scores.max(),
        t.beta
    );
    for y in (0..128).step_by(4) {
        let line: String = (0..128)
            .step_by(2)
            .map(|x| match t.scores.get(x, y) {
                v if v >= 0.75 => '#',
                v if v >= 0.4 => '+',
                v if v > 0.0 => '.',
                _ => ' ',
            })
            .collect();
        println!("{line}");
    }
    Ok(())
}
