use super::{softmax_channels, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Mean softmax cross-entropy over non-ignored pixels.
///
/// `labels` holds one map per batch item. Returns the loss and its gradient
/// with respect to `logits`; ignored pixels get zero gradient.
pub fn loss_softmax_xent<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[&LabelMap],
    ignore_label: Option<u8>,
) -> Result<(S, Tensor<S>)> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::shape("loss_softmax_xent", "n", s.n, labels.len()));
    }
    for l in labels {
        if l.height() != s.h {
            return Err(Error::shape("loss_softmax_xent", "h", s.h, l.height()));
        }
        if l.width() != s.w {
            return Err(Error::shape("loss_softmax_xent", "w", s.w, l.width()));
        }
    }
    let probs = softmax_channels(logits)?;
    let plane = s.plane();
    let mut grad = probs.clone();
    let mut count = 0usize;
    let mut total = 0.0f64;
    for (n, l) in labels.iter().enumerate() {
        for (p, &v) in l.values().iter().enumerate() {
            let base = n * s.c * plane + p;
            if Some(v) == ignore_label {
                for c in 0..s.c {
                    grad.data_mut()[base + c * plane] = S::zero();
                }
                continue;
            }
            let v = v as usize;
            if v >= s.c {
                return Err(Error::Data(format!(
                    "label {v} at pixel {p} of item {n} is not below the class count {}",
                    s.c
                )));
            }
            let pv = probs.data()[base + v * plane].as_f64().max(f64::MIN_POSITIVE);
            total -= pv.ln();
            grad.data_mut()[base + v * plane] -= S::one();
            count += 1;
        }
    }
    if count == 0 {
        return Ok((S::zero(), Tensor::zeros(s)));
    }
    let inv = S::cast_from(1.0 / count as f64);
    grad.data_mut().iter_mut().for_each(|g| *g *= inv);
    Ok((S::cast_from(total / count as f64), grad))
}

/// `Σ w (pred − target)² / Σ w` and its gradient with respect to `pred`.
pub fn loss_weighted_l2<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    weights: &Tensor<S>,
) -> Result<(S, Tensor<S>)> {
    let s = pred.shape();
    for (name, t) in [("target", target), ("weights", weights)] {
        let ts = t.shape();
        for (axis, x, y) in [("n", s.n, ts.n), ("c", s.c, ts.c), ("h", s.h, ts.h), ("w", s.w, ts.w)] {
            if x != y {
                return Err(Error::Shape {
                    op: if name == "target" { "loss_weighted_l2 (target)" } else { "loss_weighted_l2 (weights)" },
                    axis,
                    expected: x,
                    found: y,
                });
            }
        }
    }
    let wsum: f64 = weights.data().iter().map(|w| w.as_f64()).sum();
    if weights.data().iter().any(|&w| w < S::zero()) {
        return Err(Error::Data("loss_weighted_l2: negative weight".into()));
    }
    if wsum <= 0.0 {
        return Err(Error::Data("loss_weighted_l2: all weights are zero".into()));
    }
    let mut loss = 0.0f64;
    let scale = S::cast_from(2.0 / wsum);
    let mut grad = Tensor::zeros(s);
    for (((g, &p), &t), &w) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
        .zip(weights.data())
    {
        let d = p - t;
        loss += w.as_f64() * d.as_f64() * d.as_f64();
        *g = scale * w * d;
    }
    Ok((S::cast_from(loss / wsum), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn confident_correct_logits_have_near_zero_loss() {
        let labels = LabelMap::new(2, 1, vec![0, 1], 2, None).unwrap();
        let logits = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![50.0f32, -50.0, -50.0, 50.0]).unwrap();
        let (loss, _) = loss_softmax_xent(&logits, &[&labels], None).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let labels = LabelMap::new(3, 1, vec![0, 3, 4], 5, None).unwrap();
        let logits = Tensor::<f64>::zeros(Shape::new(1, 5, 1, 3));
        let (loss, _) = loss_softmax_xent(&logits, &[&labels], None).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ignored_pixels_contribute_nothing() {
        let labels = LabelMap::new(2, 1, vec![1, 255], 2, Some(255)).unwrap();
        let logits = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![0.3f64, 9.0, -0.1, -4.0]).unwrap();
        let (loss, grad) = loss_softmax_xent(&logits, &[&labels], Some(255)).unwrap();
        assert_eq!(grad.at(0, 0, 0, 1), 0.0);
        assert_eq!(grad.at(0, 1, 0, 1), 0.0);
        let only = LabelMap::new(1, 1, vec![1], 2, None).unwrap();
        let l1 = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.3f64, -0.1]).unwrap();
        assert!((loss - loss_softmax_xent(&l1, &[&only], None).unwrap().0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let labels = LabelMap::new(1, 1, vec![4], 5, None).unwrap();
        let logits = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        assert!(matches!(loss_softmax_xent(&logits, &[&labels], None), Err(Error::Data(_))));
    }

    #[test]
    fn weighted_l2_cases() {
        let s = Shape::new(1, 1, 2, 2);
        let p = Tensor::from_vec(s, vec![0.1f64, 0.5, 0.9, 0.2]).unwrap();
        let ones = Tensor::full(s, 1.0);
        assert_eq!(loss_weighted_l2(&p, &p, &ones).unwrap().0, 0.0);
        let shifted = p.map(|v| v + 0.3);
        assert!((loss_weighted_l2(&p, &shifted, &ones).unwrap().0 - 0.09).abs() < 1e-12);
        assert!(loss_weighted_l2(&p, &p, &Tensor::zeros(s)).is_err());
    }
}
