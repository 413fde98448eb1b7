//! Dense 4-D tensors and the layer kernels the segmentation and boundary
//! networks are built from.
//!
//! Every kernel comes as a forward function plus an explicit backward
//! function; there is no tape. The graph executor in [`crate::graph`] owns
//! the caches and calls these in reverse topological order.
//!
//! Kernels are generic over [`Scalar`] so the finite-difference checker can
//! evaluate the very same code in 64-bit precision.

mod conv;
mod elementwise;
pub mod gradcheck;
mod loss;
mod norm;
mod pool;
mod softmax;
mod upsample;

pub use conv::{conv1x1, conv2d, conv2d_backward, ConvGrads};
pub use elementwise::{
    add_elementwise, concat_channels, dropout, dropout_backward, relu, relu_backward,
    split_channels, DropoutMask, Mode,
};
pub use gradcheck::{compare_gradients, grad_check, numeric_gradient, Differentiable, GradCheckConfig, GradCheckReport};
pub use loss::{loss_softmax_xent, loss_weighted_l2};
pub use norm::{batchnorm, batchnorm_backward, BatchNormCache, BatchNormGrads, RunningStats};
pub use pool::{
    avgpool2, avgpool2_backward, maxpool2, maxpool2_backward, unpool2, unpool2_backward,
    PoolIndices,
};
pub use softmax::{softmax_backward, softmax_channels};
pub use upsample::{
    bilinear_kernel, upsample_kernel_size, upsample_tconv, upsample_tconv_backward,
    UpsampleGrads,
};

use crate::error::{Error, Result};
use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `c = alpha * a * b + beta * c` for row/column strided matrices.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn cast_from(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

fn check_span(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize), what: &str) {
    assert!(rs >= 0 && cs >= 0, "{what}: negative strides are not supported");
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(last < len, "{what}: matrix view exceeds buffer ({last} >= {len})");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_span(a.len(), m, k, a_strides, "gemm lhs");
                check_span(b.len(), k, n, b_strides, "gemm rhs");
                check_span(c.len(), m, n, c_strides, "gemm out");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three views were bounds-checked above and `c`
                // is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    )
                }
            }

            fn cast_from(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW array with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Shape,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: Shape, value: S) -> Self {
        assert!(
            shape.n > 0 && shape.c > 0 && shape.h > 0 && shape.w > 0,
            "tensor dims must be positive, got {shape}"
        );
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Data(format!("tensor dims must be positive, got {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape("Tensor::from_vec", "numel", shape.numel(), data.len()));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [S] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Same data viewed with a different shape of equal element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::shape("Tensor::reshape", "numel", self.data.len(), shape.numel()));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: S) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// One `h × w` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[S] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::cast_from(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| T::cast_from(v.as_f64())).collect()),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    /// Inner product of the flattened data.
    pub fn dot(&self, other: &Tensor<S>) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch items `[start, start + count)`.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.n || count == 0 {
            return Err(Error::shape("slice_batch", "n", self.shape.n, start + count));
        }
        let len = self.shape.c * self.shape.plane();
        Tensor::from_vec(
            Shape::new(count, self.shape.c, self.shape.h, self.shape.w),
            self.data[start * len..(start + count) * len].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor<S>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Data("stack of zero tensors".into()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c != s.c {
                return Err(Error::shape("stack", "c", s.c, t.shape.c));
            }
            if t.shape.h != s.h {
                return Err(Error::shape("stack", "h", s.h, t.shape.h));
            }
            if t.shape.w != s.w {
                return Err(Error::shape("stack", "w", s.w, t.shape.w));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }
}

/// Debug-build guard: forward outputs must stay finite for finite inputs.
#[inline]
pub(crate) fn debug_check_finite<S: Scalar>(op: &str, inputs: &[&Tensor<S>], out: &Tensor<S>) {
    if cfg!(debug_assertions) && inputs.iter().all(|t| t.all_finite()) {
        assert!(out.all_finite(), "{op}: produced a non-finite value");
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random(shape: Shape, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0f32..1.0))
    }

    /// Random values bounded away from zero (|x| > margin).
    pub fn random_away_from_zero(shape: Shape, seed: u64, margin: f32) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| {
            let mag = rng.random_range(margin..1.0f32);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Shape { axis: "numel", .. }));
    }

    #[test]
    fn grad_slot_matches_shape() {
        let mut t = Tensor::<f32>::zeros(Shape::new(2, 3, 4, 5));
        assert!(t.grad().is_none());
        assert_eq!(t.grad_mut().len(), t.len());
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f32> = (0..6).map(|v| v as f32).collect(); // 2x3
        let b: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect(); // 3x4
        let mut c = vec![0.0f32; 8];
        f32::gemm(2, 3, 4, 1.0, &a, (3, 1), &b, (4, 1), 0.0, &mut c, (4, 1));
        for i in 0..2 {
            for j in 0..4 {
                let want: f32 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn stack_and_slice_round_trip() {
        let a = test_util::random(Shape::new(1, 2, 3, 3), 1);
        let b = test_util::random(Shape::new(1, 2, 3, 3), 2);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.slice_batch(1, 1).unwrap(), b);
    }
}
