use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-pixel softmax over the channel axis (max-subtracted).
pub fn softmax_channels<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let s = input.shape();
    if s.c < 2 {
        return Err(Error::shape("softmax_channels", "c", 2, s.c));
    }
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let mut buf = vec![S::zero(); s.c];
    for n in 0..s.n {
        let src = input.item(n);
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut max = S::neg_infinity();
            for (c, b) in buf.iter_mut().enumerate() {
                *b = src[c * plane + p];
                if *b > max {
                    max = *b;
                }
            }
            let mut sum = S::zero();
            for b in buf.iter_mut() {
                *b = (*b - max).exp();
                sum += *b;
            }
            let dst = out.data_mut();
            for (c, &b) in buf.iter().enumerate() {
                dst[base + c * plane + p] = b / sum;
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_backward<S: Scalar>(probs: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let s = probs.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut dot = S::zero();
            for c in 0..s.c {
                let i = base + c * plane + p;
                dot += probs.data()[i] * grad_out.data()[i];
            }
            for c in 0..s.c {
                let i = base + c * plane + p;
                out.data_mut()[i] = probs.data()[i] * (grad_out.data()[i] - dot);
            }
        }
    }
    out
}
