#![allow(dead_code)]

use edgeseg::error::Result;
use edgeseg::labels::LabelMap;
use edgeseg::tensor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0f32..1.0))
}

/// Random values with |x| > margin, so kinks stay out of reach of the
/// finite-difference step.
pub fn away_from_zero(shape: Shape, seed: u64, margin: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(margin..1.0f32);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least `gap` apart in shuffled order (no pooling ties).
pub fn distinct(shape: Shape, seed: u64, gap: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.numel();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let data = order.into_iter().map(|k| (k as f32 - n as f32 / 2.0) * gap).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn random_labels(w: usize, h: usize, classes: usize, seed: u64, ignore: Option<u8>) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..w * h)
        .map(|_| match ignore {
            Some(i) if rng.random_bool(0.1) => i,
            _ => rng.random_range(0..classes as u8),
        })
        .collect();
    LabelMap::new(w, h, values, classes, ignore).unwrap()
}

/// Scalar wrapped as a 1×1×1×1 tensor.
pub fn scalar<S: Scalar>(v: S) -> Tensor<S> {
    Tensor::full(Shape::new(1, 1, 1, 1), v)
}

pub fn check<D: Differentiable>(op: &D, x: &Tensor) -> Result<GradCheckReport> {
    grad_check(op, x, GradCheckConfig::default())
}
pub mod layers;
