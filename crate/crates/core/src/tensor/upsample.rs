use super::{debug_check_finite, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Gradients of [`upsample_tconv`].
#[derive(Clone, Debug)]
pub struct UpsampleGrads<S> {
    pub input: Tensor<S>,
    pub kernel: Tensor<S>,
}

/// Kernel side length for a transposed convolution upsampling by `factor`.
pub fn upsample_kernel_size(factor: usize) -> usize {
    2 * factor - factor % 2
}

fn check_factor(factor: usize) -> Result<()> {
    if matches!(factor, 2 | 4 | 8) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "upsampling factor must be one of 2, 4, 8; got {factor}"
        )))
    }
}

/// Per output coordinate, the contributing `(tap, input index)` pairs.
///
/// Input indices falling outside `[0, len)` are clamped to the edge, so the
/// layer behaves as a transposed convolution over an edge-replicated input.
fn taps(len: usize, factor: usize, k: usize) -> Vec<Vec<(usize, usize)>> {
    let pad = ((k - factor) / 2) as isize;
    let f = factor as isize;
    (0..len * factor)
        .map(|o| {
            (0..k)
                .filter_map(|t| {
                    let q = o as isize + pad - t as isize;
                    (q.rem_euclid(f) == 0).then(|| (t, q.div_euclid(f).clamp(0, len as isize - 1) as usize))
                })
                .collect()
        })
        .collect()
}

fn check_kernel(input: Shape, kernel: Shape, factor: usize) -> Result<()> {
    check_factor(factor)?;
    let k = upsample_kernel_size(factor);
    if kernel.n != input.c {
        return Err(Error::shape("upsample_tconv", "ci", kernel.n, input.c));
    }
    if kernel.h != k {
        return Err(Error::shape("upsample_tconv", "kh", k, kernel.h));
    }
    if kernel.w != k {
        return Err(Error::shape("upsample_tconv", "kw", k, kernel.w));
    }
    Ok(())
}

/// Fractional-stride (transposed) convolution multiplying both spatial dims
/// by `factor`. `kernel` has shape `(ci, co, k, k)` with
/// `k = upsample_kernel_size(factor)`.
pub fn upsample_tconv<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    let is = input.shape();
    let ks = kernel.shape();
    check_kernel(is, ks, factor)?;
    let (k, co) = (ks.h, ks.c);
    let (oh, ow) = (is.h * factor, is.w * factor);
    let ty = taps(is.h, factor, k);
    let tx = taps(is.w, factor, k);
    let mut out = Tensor::zeros(Shape::new(is.n, co, oh, ow));
    for n in 0..is.n {
        for ci in 0..is.c {
            let src = input.plane(n, ci);
            for o in 0..co {
                let kern = &kernel.data()[(ci * co + o) * k * k..(ci * co + o + 1) * k * k];
                let dst = out.plane_mut(n, o);
                for (oy, row_taps) in ty.iter().enumerate() {
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for &(kyy, iy) in row_taps {
                        let srow = &src[iy * is.w..(iy + 1) * is.w];
                        let krow = &kern[kyy * k..(kyy + 1) * k];
                        for (d, col_taps) in drow.iter_mut().zip(&tx) {
                            for &(kxx, ix) in col_taps {
                                *d += krow[kxx] * srow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    debug_check_finite("upsample_tconv", &[input, kernel], &out);
    Ok(out)
}

pub fn upsample_tconv_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    factor: usize,
    grad_out: &Tensor<S>,
) -> Result<UpsampleGrads<S>> {
    let is = input.shape();
    let ks = kernel.shape();
    check_kernel(is, ks, factor)?;
    let (k, co) = (ks.h, ks.c);
    let gs = grad_out.shape();
    let (oh, ow) = (is.h * factor, is.w * factor);
    if gs.h != oh || gs.w != ow || gs.c != co || gs.n != is.n {
        return Err(Error::shape("upsample_tconv_backward", "h", oh, gs.h));
    }
    let ty = taps(is.h, factor, k);
    let tx = taps(is.w, factor, k);
    let mut gin = Tensor::zeros(is);
    let mut gk = Tensor::zeros(ks);
    for n in 0..is.n {
        for ci in 0..is.c {
            for o in 0..co {
                let g = grad_out.plane(n, o);
                let koff = (ci * co + o) * k * k;
                for (oy, row_taps) in ty.iter().enumerate() {
                    let grow = &g[oy * ow..(oy + 1) * ow];
                    for &(kyy, iy) in row_taps {
                        for (ox, col_taps) in tx.iter().enumerate() {
                            let gv = grow[ox];
                            for &(kxx, ix) in col_taps {
                                let kidx = koff + kyy * k + kxx;
                                let xidx = input.index(n, ci, iy, ix);
                                gk.data_mut()[kidx] += input.data()[xidx] * gv;
                                gin.data_mut()[xidx] += kernel.data()[kidx] * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(UpsampleGrads {
        input: gin,
        kernel: gk,
    })
}

/// Channel-diagonal bilinear interpolation kernel of shape `(c, c, k, k)`.
pub fn bilinear_kernel<S: Scalar>(channels: usize, factor: usize) -> Result<Tensor<S>> {
    check_factor(factor)?;
    let k = upsample_kernel_size(factor);
    let f = factor as f64;
    let center = if k % 2 == 1 { f - 1.0 } else { f - 0.5 };
    let w1 = |t: usize| 1.0 - (t as f64 - center).abs() / f;
    Ok(Tensor::from_fn(Shape::new(channels, channels, k, k), |ci, co, y, x| {
        if ci == co {
            S::cast_from(w1(y) * w1(x))
        } else {
            S::zero()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::random;

    #[test]
    fn constant_map_is_reproduced() {
        for factor in [2, 4, 8] {
            let x = Tensor::full(Shape::new(1, 2, 3, 5), 0.7f32);
            let k = bilinear_kernel::<f32>(2, factor).unwrap();
            let y = upsample_tconv(&x, &k, factor).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 2, 3 * factor, 5 * factor));
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6), "factor {factor}");
        }
    }

    #[test]
    fn doubles_shape() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let k = bilinear_kernel::<f32>(1, 2).unwrap();
        assert_eq!(upsample_tconv(&x, &k, 2).unwrap().shape(), Shape::new(1, 1, 4, 4));
    }

    #[test]
    fn unsupported_factor_is_config_error() {
        assert!(matches!(bilinear_kernel::<f32>(1, 3), Err(Error::Config(_))));
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let k = Tensor::<f32>::zeros(Shape::new(1, 1, 6, 6));
        assert!(matches!(upsample_tconv(&x, &k, 16), Err(Error::Config(_))));
    }

    #[test]
    fn bilinear_interpolates_linear_ramp_in_interior() {
        let x = Tensor::from_fn(Shape::new(1, 1, 1, 6), |_, _, _, c| c as f64);
        let k = bilinear_kernel::<f64>(1, 2).unwrap();
        let y = upsample_tconv(&x, &k, 2).unwrap();
        // Output pixel o samples input coordinate (o + 0.5) / 2 - 0.5.
        for o in 1..11 {
            let want = (o as f64 + 0.5) / 2.0 - 0.5;
            assert!((y.at(0, 0, 0, o) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_gradient_is_adjoint() {
        let x = random(Shape::new(2, 2, 3, 4), 1).cast::<f64>();
        let k = random(Shape::new(2, 3, 8, 8), 2).cast::<f64>();
        let y = upsample_tconv(&x, &k, 4).unwrap();
        let g = random(y.shape(), 3).cast::<f64>();
        let grads = upsample_tconv_backward(&x, &k, 4, &g).unwrap();
        assert!((y.dot(&g) - k.dot(&grads.kernel)).abs() < 1e-9);
    }
}
