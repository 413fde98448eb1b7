use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};

/// Batch-norm epsilon added to the variance.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel running mean and variance used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> RunningStats<S> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
        }
    }
}

/// Values kept from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<S> {
    pub input: Tensor<S>,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

/// Batch normalization over `(n, h, w)` per channel.
///
/// Train mode normalizes with batch statistics and folds them into
/// `stats`; infer mode reads `stats`.
pub fn batchnorm<S: Scalar>(
    input: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    mode: Mode,
    stats: &mut RunningStats<S>,
) -> Result<(Tensor<S>, Option<BatchNormCache<S>>)> {
    let s = input.shape();
    if gamma.len() != s.c {
        return Err(Error::shape("batchnorm", "gamma", s.c, gamma.len()));
    }
    if beta.len() != s.c {
        return Err(Error::shape("batchnorm", "beta", s.c, beta.len()));
    }
    if stats.mean.len() != s.c || stats.var.len() != s.c {
        return Err(Error::shape("batchnorm", "running_stats", s.c, stats.mean.len()));
    }
    let plane = s.plane();
    let m = s.n * plane;
    if m == 0 {
        return Err(Error::Data("batchnorm over an empty batch".into()));
    }
    let eps = S::cast_from(BN_EPS);
    let mut out = Tensor::zeros(s);
    match mode {
        Mode::Infer => {
            for c in 0..s.c {
                let inv = S::one() / (stats.var[c] + eps).sqrt();
                for n in 0..s.n {
                    let src = input.plane(n, c);
                    let dst = out.plane_mut(n, c);
                    for (d, &x) in dst.iter_mut().zip(src) {
                        *d = gamma[c] * (x - stats.mean[c]) * inv + beta[c];
                    }
                }
            }
            Ok((out, None))
        }
        Mode::Train => {
            let mut xhat = vec![S::zero(); s.numel()];
            let mut inv_std = vec![S::zero(); s.c];
            let mf = S::cast_from(m as f64);
            let momentum = S::cast_from(BN_MOMENTUM);
            for c in 0..s.c {
                let mut mean = S::zero();
                for n in 0..s.n {
                    mean += input.plane(n, c).iter().copied().sum::<S>();
                }
                mean = mean / mf;
                let mut var = S::zero();
                for n in 0..s.n {
                    for &x in input.plane(n, c) {
                        var += (x - mean) * (x - mean);
                    }
                }
                var = var / mf;
                let inv = S::one() / (var + eps).sqrt();
                inv_std[c] = inv;
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    let src = input.plane(n, c);
                    for (p, &x) in src.iter().enumerate() {
                        let xh = (x - mean) * inv;
                        xhat[off + p] = xh;
                        out.data_mut()[off + p] = gamma[c] * xh + beta[c];
                    }
                }
                let unbiased = if m > 1 { var * mf / (mf - S::one()) } else { var };
                stats.mean[c] = momentum * stats.mean[c] + (S::one() - momentum) * mean;
                stats.var[c] = momentum * stats.var[c] + (S::one() - momentum) * unbiased;
            }
            Ok((out, Some(BatchNormCache { xhat, inv_std })))
        }
    }
}

/// Full batch-statistics backward pass of a training-mode [`batchnorm`].
pub fn batchnorm_backward<S: Scalar>(
    cache: &BatchNormCache<S>,
    gamma: &[S],
    grad_out: &Tensor<S>,
) -> BatchNormGrads<S> {
    let s = grad_out.shape();
    let plane = s.plane();
    let mf = S::cast_from((s.n * plane) as f64);
    let mut gin = Tensor::zeros(s);
    let mut dgamma = vec![S::zero(); s.c];
    let mut dbeta = vec![S::zero(); s.c];
    for c in 0..s.c {
        let (mut sum_g, mut sum_gx) = (S::zero(), S::zero());
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for (p, &g) in grad_out.plane(n, c).iter().enumerate() {
                sum_g += g;
                sum_gx += g * cache.xhat[off + p];
            }
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let k = gamma[c] * cache.inv_std[c] / mf;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            let g = grad_out.plane(n, c);
            let dst = gin.plane_mut(n, c);
            for p in 0..plane {
                let xh = cache.xhat[off + p];
                dst[p] = k * (mf * g[p] - sum_g - xh * sum_gx);
            }
        }
    }
    BatchNormGrads {
        input: gin,
        gamma: dgamma,
        beta: dbeta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::random;
    use crate::tensor::Shape;

    #[test]
    fn train_mode_standardizes() {
        let x = random(Shape::new(4, 3, 5, 5), 2).map(|v| v * 3.0 + 1.5);
        let mut stats = RunningStats::new(3);
        let (y, cache) = batchnorm(&x, &[1.0; 3], &[0.0; 3], Mode::Train, &mut stats).unwrap();
        assert!(cache.is_some());
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.plane(n, c).to_vec()).map(f64::from).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!(stats.mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn infer_mode_with_unit_stats_is_affine_identity() {
        let x = random(Shape::new(2, 2, 3, 3), 3);
        let mut stats = RunningStats::new(2);
        let (y, cache) = batchnorm(&x, &[2.0, 1.0], &[0.5, 0.0], Mode::Infer, &mut stats).unwrap();
        assert!(cache.is_none());
        for n in 0..2 {
            for (a, b) in y.plane(n, 0).iter().zip(x.plane(n, 0)) {
                assert!((a - (2.0 * b + 0.5)).abs() < 1e-4);
            }
            for (a, b) in y.plane(n, 1).iter().zip(x.plane(n, 1)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        assert_eq!(stats, RunningStats::new(2));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![1.0f64, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        batchnorm(&x, &[1.0], &[0.0], Mode::Train, &mut stats).unwrap();
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance 2.0
        assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }
}
