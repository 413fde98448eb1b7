use super::{debug_check_finite, Scalar, Shape, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

/// Train or inference behaviour for stochastic and batch-statistic layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    // NaN propagates
    input.map(|v| if v <= S::zero() { S::zero() } else { v })
}

/// Gradient mask: passes `grad_out` where the forward input was positive.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut g = grad_out.clone();
    g.clear_grad();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= S::zero() {
            *gv = S::zero();
        }
    }
    g
}

pub fn add_elementwise<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    for (axis, x, y) in [("n", sa.n, sb.n), ("c", sa.c, sb.c), ("h", sa.h, sb.h), ("w", sa.w, sb.w)] {
        if x != y {
            return Err(Error::shape("add_elementwise", axis, x, y));
        }
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::from_vec(sa, data)?;
    debug_check_finite("add_elementwise", &[a, b], &out);
    Ok(out)
}

/// Stacks tensors along the channel axis.
pub fn concat_channels<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Data("concat_channels of zero tensors".into()))?
        .shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        for (axis, x, y) in [("n", first.n, s.n), ("h", first.h, s.h), ("w", first.w, s.w)] {
            if x != y {
                return Err(Error::shape("concat_channels", axis, x, y));
            }
        }
        c_total += s.c;
    }
    let shape = Shape::new(first.n, c_total, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for t in inputs {
            data.extend_from_slice(t.item(n));
        }
    }
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: splits into consecutive channel groups.
pub fn split_channels<S: Scalar>(input: &Tensor<S>, sizes: &[usize]) -> Result<Vec<Tensor<S>>> {
    let s = input.shape();
    let total: usize = sizes.iter().sum();
    if total != s.c {
        return Err(Error::shape("split_channels", "c", s.c, total));
    }
    let plane = s.plane();
    let mut out: Vec<Vec<S>> = sizes.iter().map(|&c| Vec::with_capacity(s.n * c * plane)).collect();
    for n in 0..s.n {
        let item = input.item(n);
        let mut off = 0;
        for (buf, &c) in out.iter_mut().zip(sizes) {
            buf.extend_from_slice(&item[off * plane..(off + c) * plane]);
            off += c;
        }
    }
    out.into_iter()
        .zip(sizes)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d))
        .collect()
}

/// Keep-mask and survivor scale recorded by a training-mode dropout.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

/// Inverted dropout. Returns the mask in train mode so backward can reuse it.
pub fn dropout<S: Scalar, R: Rng + ?Sized>(
    input: &Tensor<S>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<S>, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        let mut out = input.clone();
        out.clear_grad();
        return Ok((out, None));
    }
    let scale = 1.0 / (1.0 - rate);
    let keep: Vec<bool> = (0..input.len()).map(|_| rng.random::<f64>() >= rate).collect();
    let s = S::cast_from(scale);
    let data = input
        .data()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * s } else { S::zero() })
        .collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(DropoutMask { keep, scale })))
}

pub fn dropout_backward<S: Scalar>(grad_out: &Tensor<S>, mask: Option<&DropoutMask>) -> Tensor<S> {
    let mut g = grad_out.clone();
    g.clear_grad();
    if let Some(m) = mask {
        let s = S::cast_from(m.scale);
        for (v, &k) in g.data_mut().iter_mut().zip(&m.keep) {
            *v = if k { *v * s } else { S::zero() };
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_definition_and_dead_region() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(Shape::new(1, 2, 3, 3), -0.5f32);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let g = Tensor::full(neg.shape(), 1.0f32);
        assert!(relu_backward(&neg, &g).data().iter().all(|&v| v == 0.0));
        let nan = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![f32::NAN]).unwrap();
        assert!(relu(&nan).data()[0].is_nan());
    }

    #[test]
    fn add_identities_and_commutativity() {
        let a = random(Shape::new(2, 3, 4, 4), 1);
        let b = random(Shape::new(2, 3, 4, 4), 2);
        let zero = Tensor::zeros(a.shape());
        assert_eq!(add_elementwise(&a, &zero).unwrap(), a);
        let neg = a.map(|v| -v);
        assert!(add_elementwise(&a, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(add_elementwise(&a, &b).unwrap(), add_elementwise(&b, &a).unwrap());
        let c = Tensor::<f32>::zeros(Shape::new(2, 3, 4, 5));
        assert!(matches!(add_elementwise(&a, &c), Err(Error::Shape { axis: "w", .. })));
    }

    #[test]
    fn concat_then_split_recovers_parts() {
        let a = random(Shape::new(1, 2, 4, 4), 3);
        let b = random(Shape::new(1, 3, 4, 4), 4);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        let parts = split_channels(&c, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 4));
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::Shape { axis: "h", .. })));
    }

    #[test]
    fn dropout_identity_cases() {
        let x = random(Shape::new(1, 2, 8, 8), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_empirical_rate_and_scaling() {
        let x = Tensor::full(Shape::new(1, 1, 1000, 1000), 1.0f32);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rate = 0.2;
        let (y, mask) = dropout(&x, rate, Mode::Train, &mut rng).unwrap();
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((dropped - rate).abs() < 0.005, "dropped fraction {dropped}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-6));
        let g = dropout_backward(&x, mask.as_ref());
        assert_eq!(g, y);
    }
}
