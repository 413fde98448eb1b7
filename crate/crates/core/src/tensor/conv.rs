use super::{debug_check_finite, Scalar, Shape, Tensor};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Gradients of a convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub kernel: Tensor<S>,
    pub bias: Vec<S>,
}

#[derive(Clone, Copy)]
struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: Shape, kernel: Shape, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be positive".into()));
        }
        if kernel.c != input.c {
            return Err(Error::shape("conv2d", "ci", kernel.c, input.c));
        }
        let out = |dim: usize, k: usize, axis: &'static str| -> Result<usize> {
            if dim + 2 * pad < k {
                return Err(Error::shape("conv2d", axis, k, dim + 2 * pad));
            }
            Ok((dim + 2 * pad - k) / stride + 1)
        };
        Ok(Geometry {
            ci: input.c,
            h: input.h,
            w: input.w,
            kh: kernel.h,
            kw: kernel.w,
            oh: out(input.h, kernel.h, "h")?,
            ow: out(input.w, kernel.w, "w")?,
            stride,
            pad,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output column range `[lo, hi)` for kernel column `kx` (stride 1).
    fn unit_stride_span(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }
}

fn im2col<S: Scalar>(g: &Geometry, item: &[S], cols: &mut [S]) {
    let ohw = g.out_plane();
    for c in 0..g.ci {
        let plane = &item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.unit_stride_span(kx);
                        out_row[..lo].fill(S::zero());
                        out_row[hi..].fill(S::zero());
                        let off = lo + kx - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[off..off + (hi - lo)]);
                    } else {
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *v = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                S::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(g: &Geometry, cols: &[S], item: &mut [S]) {
    let ohw = g.out_plane();
    for c in 0..g.ci {
        let plane = &mut item[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let in_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let col_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let (lo, hi) = g.unit_stride_span(kx);
                        let off = lo + kx - g.pad;
                        for (d, &s) in in_row[off..off + (hi - lo)].iter_mut().zip(&col_row[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for (ox, &s) in col_row.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                in_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `kernel` has shape `(co, ci, kh, kw)`; `bias` has length `co`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &[S],
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let is = input.shape();
    let ks = kernel.shape();
    let g = Geometry::new(is, ks, stride, pad)?;
    let co = ks.n;
    if bias.len() != co {
        return Err(Error::shape("conv2d", "co", co, bias.len()));
    }
    let ohw = g.out_plane();
    let patch = g.patch();
    let mut out = Tensor::zeros(Shape::new(is.n, co, g.oh, g.ow));
    out.data_mut()
        .par_chunks_mut(co * ohw)
        .enumerate()
        .for_each(|(n, dst)| {
            let item = input.item(n);
            let mut scratch;
            let cols: &[S] = if g.is_pointwise() {
                item
            } else {
                scratch = vec![S::zero(); patch * ohw];
                im2col(&g, item, &mut scratch);
                &scratch
            };
            for (o, &b) in bias.iter().enumerate() {
                dst[o * ohw..(o + 1) * ohw].fill(b);
            }
            S::gemm(
                co,
                patch,
                ohw,
                S::one(),
                kernel.data(),
                (patch as isize, 1),
                cols,
                (ohw as isize, 1),
                S::one(),
                dst,
                (ohw as isize, 1),
            );
        });
    if bias.iter().all(|b| b.is_finite()) {
        debug_check_finite("conv2d", &[input, kernel], &out);
    }
    Ok(out)
}

/// Pointwise convolution: a per-pixel linear map of the channel vector.
pub fn conv1x1<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, bias: &[S]) -> Result<Tensor<S>> {
    let ks = kernel.shape();
    if ks.h != 1 {
        return Err(Error::shape("conv1x1", "kh", 1, ks.h));
    }
    if ks.w != 1 {
        return Err(Error::shape("conv1x1", "kw", 1, ks.w));
    }
    conv2d(input, kernel, bias, 1, 0)
}

/// Backward pass of [`conv2d`]. The input gradient is skipped when
/// `want_input` is false.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<S>,
    want_input: bool,
) -> Result<ConvGrads<S>> {
    let is = input.shape();
    let ks = kernel.shape();
    let g = Geometry::new(is, ks, stride, pad)?;
    let co = ks.n;
    let gs = grad_out.shape();
    if gs.c != co {
        return Err(Error::shape("conv2d_backward", "co", co, gs.c));
    }
    if gs.h != g.oh || gs.w != g.ow || gs.n != is.n {
        return Err(Error::shape("conv2d_backward", "h", g.oh, gs.h));
    }
    let ohw = g.out_plane();
    let patch = g.patch();
    let item_len = is.c * is.plane();

    let per_item: Vec<(Vec<S>, Option<Vec<S>>)> = (0..is.n)
        .into_par_iter()
        .map(|n| {
            let item = input.item(n);
            let gout = grad_out.item(n);
            let mut scratch;
            let cols: &[S] = if g.is_pointwise() {
                item
            } else {
                scratch = vec![S::zero(); patch * ohw];
                im2col(&g, item, &mut scratch);
                &scratch
            };
            let mut gk = vec![S::zero(); co * patch];
            S::gemm(
                co,
                ohw,
                patch,
                S::one(),
                gout,
                (ohw as isize, 1),
                cols,
                (1, ohw as isize),
                S::zero(),
                &mut gk,
                (patch as isize, 1),
            );
            let gin = want_input.then(|| {
                let mut gcols = vec![S::zero(); patch * ohw];
                S::gemm(
                    patch,
                    co,
                    ohw,
                    S::one(),
                    kernel.data(),
                    (1, patch as isize),
                    gout,
                    (ohw as isize, 1),
                    S::zero(),
                    &mut gcols,
                    (ohw as isize, 1),
                );
                if g.is_pointwise() {
                    gcols
                } else {
                    let mut gi = vec![S::zero(); item_len];
                    col2im(&g, &gcols, &mut gi);
                    gi
                }
            });
            (gk, gin)
        })
        .collect();

    let mut gk = vec![S::zero(); co * patch];
    let mut gin = want_input.then(|| Vec::with_capacity(is.numel()));
    for (k, i) in per_item {
        for (a, b) in gk.iter_mut().zip(k) {
            *a += b;
        }
        if let (Some(acc), Some(i)) = (gin.as_mut(), i) {
            acc.extend(i);
        }
    }
    let mut gb = vec![S::zero(); co];
    for n in 0..is.n {
        let item = grad_out.item(n);
        for (o, b) in gb.iter_mut().enumerate() {
            *b += item[o * ohw..(o + 1) * ohw].iter().copied().sum::<S>();
        }
    }
    Ok(ConvGrads {
        input: gin.map(|d| Tensor::from_vec(is, d)).transpose()?,
        kernel: Tensor::from_vec(ks, gk)?,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::random;

    /// Six nested loops, straight from the definition.
    fn naive_conv(x: &Tensor<f32>, k: &Tensor<f32>, b: &[f32], stride: usize, pad: usize) -> Tensor<f32> {
        let (xs, ks) = (x.shape(), k.shape());
        let oh = (xs.h + 2 * pad - ks.h) / stride + 1;
        let ow = (xs.w + 2 * pad - ks.w) / stride + 1;
        let mut out = Tensor::zeros(Shape::new(xs.n, ks.n, oh, ow));
        for n in 0..xs.n {
            for o in 0..ks.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[o] as f64;
                        for c in 0..xs.c {
                            for ky in 0..ks.h {
                                for kx in 0..ks.w {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                        acc += x.at(n, c, iy as usize, ix as usize) as f64
                                            * k.at(o, c, ky, kx) as f64;
                                    }
                                }
                            }
                        }
                        out.set(n, o, oy, ox, acc as f32);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_scales_input() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0f32);
        let k = Tensor::full(Shape::new(1, 1, 1, 1), 2.0f32);
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(Shape::new(1, 1, 2, 2), 1.0f32);
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn matches_naive_loops_on_random_input() {
        let x = random(Shape::new(2, 3, 8, 8), 11);
        let k = random(Shape::new(4, 3, 3, 3), 12);
        let b = [0.1, -0.2, 0.3, 0.0];
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let got = conv2d(&x, &k, &b, stride, pad).unwrap();
            let want = naive_conv(&x, &k, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-5, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn conv1x1_identity_and_hand_arithmetic() {
        let x = random(Shape::new(1, 3, 4, 4), 3);
        let mut eye = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for i in 0..3 {
            eye.set(i, i, 0, 0, 1.0);
        }
        assert_eq!(conv1x1(&x, &eye, &[0.0; 3]).unwrap(), x);

        let px = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![3.0f32, 5.0]).unwrap();
        let k = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0f32, 1.0, 1.0, -1.0]).unwrap();
        assert_eq!(conv1x1(&px, &k, &[0.0, 0.0]).unwrap().data(), &[8.0, -2.0]);
    }

    #[test]
    fn conv1x1_equals_general_path() {
        let x = random(Shape::new(2, 4, 5, 7), 5);
        let k = random(Shape::new(3, 4, 1, 1), 6);
        let b = [0.5, -0.5, 0.25];
        let fast = conv1x1(&x, &k, &b).unwrap();
        let slow = naive_conv(&x, &k, &b, 1, 0);
        assert!(fast.max_abs_diff(&slow) < 1e-6);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let k = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        match conv2d(&x, &k, &[0.0], 1, 1) {
            Err(Error::Shape { axis, .. }) => assert_eq!(axis, "ci"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let k = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 5));
        assert!(conv2d(&x, &k, &[0.0], 1, 0).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, dX(g)> + <k, dK(g)> + <b, dB(g)> holds exactly
        // for the bilinear map (x, k) -> conv, checked here in each slot.
        let x = random(Shape::new(2, 2, 6, 5), 21).cast::<f64>();
        let k = random(Shape::new(3, 2, 3, 3), 22).cast::<f64>();
        let zero_b = [0.0f64; 3];
        let y = conv2d(&x, &k, &zero_b, 2, 1).unwrap();
        let g = random(y.shape(), 23).cast::<f64>();
        let grads = conv2d_backward(&x, &k, 2, 1, &g, true).unwrap();
        let lhs = y.dot(&g);
        assert!((lhs - x.dot(grads.input.as_ref().unwrap())).abs() < 1e-9);
        assert!((lhs - k.dot(&grads.kernel)).abs() < 1e-9);
    }
}
