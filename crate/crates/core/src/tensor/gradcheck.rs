//! Finite-difference gradient verification.
//!
//! The analytic gradient comes from the regular 32-bit backward pass; the
//! numeric one from central differences evaluated on a 64-bit copy of the
//! same computation. The reported relative error is
//! `max_i |analytic_i − numeric_i| / max(‖analytic‖∞, ‖numeric‖∞)`.

use super::{Scalar, Tensor};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An operation with a scalar-generic forward and a 32-bit backward.
pub trait Differentiable {
    fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>>;

    /// Gradient with respect to `x` given the gradient of the output.
    fn vjp(&self, x: &Tensor<f32>, grad_out: &Tensor<f32>) -> Result<Tensor<f32>>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Seed of the random output projection.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            tol: 1e-4,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} entries, max rel err {:.3e}, max abs err {:.3e})",
            if self.passed { "pass" } else { "FAIL" },
            self.checked,
            self.max_rel_err,
            self.max_abs_err
        )
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(numeric));
    let max_abs_err = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let max_rel_err = if scale > 0.0 { max_abs_err / scale } else { 0.0 };
    GradCheckReport {
        max_abs_err,
        max_rel_err,
        checked: analytic.len(),
        passed: max_rel_err < tol,
    }
}

/// Checks `op.vjp` against central differences of `⟨r, op(x)⟩` for a fixed
/// random projection `r`.
pub fn grad_check<D: Differentiable>(op: &D, input: &Tensor<f32>, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let out = op.eval(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proj: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proj32 = Tensor::from_vec(out.shape(), proj.iter().map(|&v| v as f32).collect())?;
    let analytic: Vec<f64> = op.vjp(input, &proj32)?.data().iter().map(|&v| v as f64).collect();

    let shape = input.shape();
    let mut failure = None;
    let numeric = numeric_gradient(
        |x| {
            let t = Tensor::from_vec(shape, x.to_vec()).expect("shape preserved");
            match op.eval::<f64>(&t) {
                Ok(y) => y.data().iter().zip(&proj).map(|(a, b)| a * b).sum(),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &input.cast::<f64>().into_data(),
        cfg.step,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(compare_gradients(&analytic, &numeric, cfg.tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::random_away_from_zero;
    use crate::tensor::{relu, relu_backward, Shape};

    struct Scale(f64);

    impl Differentiable for Scale {
        fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
            Ok(x.map(|v| v * S::cast_from(self.0)))
        }
        fn vjp(&self, _x: &Tensor<f32>, g: &Tensor<f32>) -> Result<Tensor<f32>> {
            Ok(g.map(|v| v * self.0 as f32))
        }
    }

    struct Relu {
        broken: bool,
    }

    impl Differentiable for Relu {
        fn eval<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
            Ok(relu(x))
        }
        fn vjp(&self, x: &Tensor<f32>, g: &Tensor<f32>) -> Result<Tensor<f32>> {
            let out = relu_backward(x, g);
            Ok(if self.broken { out.map(|v| 2.0 * v) } else { out })
        }
    }

    #[test]
    fn linear_op_is_exact_to_rounding() {
        let x = random_away_from_zero(Shape::new(1, 2, 3, 3), 1, 0.0);
        let r = grad_check(&Scale(3.0), &x, GradCheckConfig::default()).unwrap();
        assert!(r.passed && r.max_rel_err < 1e-6, "{r}");
    }

    #[test]
    fn relu_passes_away_from_kink() {
        let x = random_away_from_zero(Shape::new(1, 2, 4, 4), 2, 0.1);
        let r = grad_check(&Relu { broken: false }, &x, GradCheckConfig::default()).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn broken_backward_fails() {
        let x = random_away_from_zero(Shape::new(1, 2, 4, 4), 3, 0.1);
        let r = grad_check(&Relu { broken: true }, &x, GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_err > 0.4);
    }
}
