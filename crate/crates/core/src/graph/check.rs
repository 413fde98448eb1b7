use super::{ModelGraph, Targets};
use crate::error::Result;
use crate::labels::LabelMap;
use crate::tensor::{compare_gradients, GradCheckReport, Mode, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings of a whole-graph finite-difference check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphCheckConfig {
    /// Central-difference step applied to each parameter in 64-bit.
    pub step: f64,
    pub tol: f64,
    /// Upper bound on checked coordinates; larger graphs are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GraphCheckConfig {
    fn default() -> Self {
        GraphCheckConfig {
            step: 1e-6,
            tol: 1e-3,
            max_coords: 5000,
            seed: 0,
        }
    }
}

/// Compares the backpropagated gradient of the total attached loss with
/// central differences, evaluating a 64-bit copy of the graph. Dropout
/// masks are held fixed by reseeding before every forward.
pub fn graph_grad_check(
    graph: &ModelGraph,
    inputs: &[(&str, &Tensor)],
    targets: &Targets<'_, f32>,
    cfg: GraphCheckConfig,
) -> Result<GradCheckReport> {
    let mut g = graph.cast::<f64>();
    let inputs64: Vec<(&str, Tensor<f64>)> = inputs.iter().map(|(k, t)| (*k, t.cast())).collect();
    let refs: Vec<(&str, &Tensor<f64>)> = inputs64.iter().map(|(k, t)| (*k, t)).collect();
    let labels: Option<Vec<LabelMap>> = targets.labels.as_ref().map(|v| v.iter().map(|l| (*l).clone()).collect());
    let boundary: Option<(Tensor<f64>, Tensor<f64>)> = targets.boundary.map(|(t, w)| (t.cast(), w.cast()));
    let t64 = Targets {
        labels: labels.as_ref().map(|v| v.iter().collect()),
        ignore_label: targets.ignore_label,
        boundary: boundary.as_ref().map(|(t, w)| (t, w)),
    };

    let run = |g: &mut ModelGraph<f64>| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        g.forward(&refs, Mode::Train, &mut rng)?;
        Ok(())
    };

    g.zero_grad();
    run(&mut g)?;
    g.loss_and_backward(&t64)?;

    let mut coords = Vec::new();
    for (pi, p) in g.params().iter().enumerate() {
        if p.learns() {
            coords.extend((0..p.value.len()).map(|e| (pi, e)));
        }
    }
    if coords.len() > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ffee);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(pi, e)| g.params()[pi].value.grad().map_or(0.0, |gr| gr[e]))
        .collect();

    let mut numeric = Vec::with_capacity(coords.len());
    for &(pi, e) in &coords {
        let orig = g.params()[pi].value.data()[e];
        let mut eval = |v: f64| -> Result<f64> {
            g.params_mut()[pi].value.data_mut()[e] = v;
            run(&mut g)?;
            Ok(g.evaluate_losses(&t64)?.0.total)
        };
        let plus = eval(orig + cfg.step)?;
        let minus = eval(orig - cfg.step)?;
        g.params_mut()[pi].value.data_mut()[e] = orig;
        numeric.push((plus - minus) / (2.0 * cfg.step));
    }
    for (i, &(pi, e)) in coords.iter().enumerate() {
        log::debug!("{}[{e}]: analytic {} numeric {}", g.params()[pi].name, analytic[i], numeric[i]);
    }
    Ok(compare_gradients(&analytic, &numeric, cfg.tol))
}
