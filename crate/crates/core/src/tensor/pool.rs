use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool2`].
///
/// `positions[i]` is the flat `y * w + x` offset, inside the source plane,
/// of the input value that won output element `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub shape: Shape,
    pub source_hw: (usize, usize),
    pub positions: Vec<u32>,
}

fn require_even(op: &'static str, s: Shape) -> Result<()> {
    if s.h % 2 != 0 {
        return Err(Error::shape(op, "h", s.h + 1, s.h));
    }
    if s.w % 2 != 0 {
        return Err(Error::shape(op, "w", s.w + 1, s.w));
    }
    Ok(())
}

/// 2×2 stride-2 max pooling. Ties go to the first position in row-major
/// window order.
pub fn maxpool2<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, PoolIndices)> {
    let s = input.shape();
    require_even("maxpool2", s)?;
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut positions = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * s.w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + s.w, base + s.w + 1] {
                        if plane[cand] > plane[best] {
                            best = cand;
                        }
                    }
                    out.push(plane[best]);
                    positions.push(best as u32);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(out_shape, out)?,
        PoolIndices {
            shape: out_shape,
            source_hw: (s.h, s.w),
            positions,
        },
    ))
}

/// Places each value at its recorded argmax position, zeros elsewhere.
pub fn unpool2<S: Scalar>(
    input: &Tensor<S>,
    indices: &PoolIndices,
    out_hw: (usize, usize),
) -> Result<Tensor<S>> {
    let s = input.shape();
    let is = indices.shape;
    for (axis, x, y) in [("n", is.n, s.n), ("c", is.c, s.c), ("h", is.h, s.h), ("w", is.w, s.w)] {
        if x != y {
            return Err(Error::shape("unpool2", axis, x, y));
        }
    }
    let (h, w) = out_hw;
    if h / 2 != s.h || w / 2 != s.w {
        return Err(Error::shape("unpool2", "h", 2 * s.h, h));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    let oplane = h * w;
    let iplane = s.plane();
    for nc in 0..s.n * s.c {
        let src = &input.data()[nc * iplane..(nc + 1) * iplane];
        let pos = &indices.positions[nc * iplane..(nc + 1) * iplane];
        let dst = &mut out.data_mut()[nc * oplane..(nc + 1) * oplane];
        for (i, (&v, &p)) in src.iter().zip(pos).enumerate() {
            let p = p as usize;
            let (py, px) = (p / w, p % w);
            let (oy, ox) = (i / s.w, i % s.w);
            if p >= oplane || py / 2 != oy || px / 2 != ox {
                return Err(Error::Corruption(format!(
                    "index {p} for pooled position ({oy}, {ox}) lies outside its 2x2 window in a {h}x{w} plane"
                )));
            }
            dst[p] = v;
        }
    }
    Ok(out)
}

/// Gathers the gradient at the recorded positions.
pub fn unpool2_backward<S: Scalar>(grad_out: &Tensor<S>, indices: &PoolIndices) -> Result<Tensor<S>> {
    let gs = grad_out.shape();
    let (h, w) = (gs.h, gs.w);
    let is = indices.shape;
    if gs.n != is.n || gs.c != is.c || h / 2 != is.h || w / 2 != is.w {
        return Err(Error::shape("unpool2_backward", "h", 2 * is.h, h));
    }
    let oplane = h * w;
    let iplane = is.plane();
    let mut data = Vec::with_capacity(is.numel());
    for nc in 0..is.n * is.c {
        let g = &grad_out.data()[nc * oplane..(nc + 1) * oplane];
        for &p in &indices.positions[nc * iplane..(nc + 1) * iplane] {
            let p = p as usize;
            if p >= oplane {
                return Err(Error::Corruption(format!("index {p} outside {h}x{w} plane")));
            }
            data.push(g[p]);
        }
    }
    Tensor::from_vec(is, data)
}

/// Routes the pooled gradient back to the argmax positions only.
pub fn maxpool2_backward<S: Scalar>(grad_out: &Tensor<S>, indices: &PoolIndices) -> Result<Tensor<S>> {
    unpool2(grad_out, indices, indices.source_hw)
}

/// 2×2 stride-2 average pooling.
pub fn avgpool2<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let s = input.shape();
    require_even("avgpool2", s)?;
    let (oh, ow) = (s.h / 2, s.w / 2);
    let quarter = S::cast_from(0.25);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let b = 2 * oy * s.w + 2 * ox;
                    dst[oy * ow + ox] = (src[b] + src[b + 1] + src[b + s.w] + src[b + s.w + 1]) * quarter;
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool2_backward<S: Scalar>(grad_out: &Tensor<S>) -> Tensor<S> {
    let gs = grad_out.shape();
    let (h, w) = (gs.h * 2, gs.w * 2);
    let quarter = S::cast_from(0.25);
    let mut out = Tensor::zeros(Shape::new(gs.n, gs.c, h, w));
    for n in 0..gs.n {
        for c in 0..gs.c {
            let g = grad_out.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = g[(y / 2) * gs.w + x / 2] * quarter;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::random;

    #[test]
    fn single_window_picks_max() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.positions, vec![3]); // (1, 1)
    }

    #[test]
    fn ties_resolve_to_first_window_position() {
        let x = Tensor::full(Shape::new(1, 2, 4, 4), 7.0f32);
        let (y, idx) = maxpool2(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert_eq!(&idx.positions[..4], &[0, 2, 8, 10]);
    }

    #[test]
    fn matches_exhaustive_window_scan() {
        let x = random(Shape::new(1, 1, 6, 6), 9);
        let (y, idx) = maxpool2(&x).unwrap();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut best = (f32::NEG_INFINITY, 0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (yy, xx) = (2 * oy + dy, 2 * ox + dx);
                        if x.at(0, 0, yy, xx) > best.0 {
                            best = (x.at(0, 0, yy, xx), yy * 6 + xx);
                        }
                    }
                }
                assert_eq!(y.at(0, 0, oy, ox), best.0);
                assert_eq!(idx.positions[oy * 3 + ox] as usize, best.1);
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 4));
        assert!(matches!(maxpool2(&x), Err(Error::Shape { axis: "h", .. })));
    }

    #[test]
    fn unpool_restores_window_maxima() {
        let x = random(Shape::new(2, 3, 8, 6), 10);
        let (y, idx) = maxpool2(&x).unwrap();
        let u = unpool2(&y, &idx, (8, 6)).unwrap();
        for nc in 0..6 {
            let (n, c) = (nc / 3, nc % 3);
            let up = u.plane(n, c);
            let src = x.plane(n, c);
            let winners: std::collections::HashSet<usize> =
                idx.positions[nc * 12..(nc + 1) * 12].iter().map(|&p| p as usize).collect();
            for (p, &v) in up.iter().enumerate() {
                if winners.contains(&p) {
                    assert_eq!(v, src[p]);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!((u.sum() - y.sum()).abs() < 1e-5);
        let zeros = Tensor::<f32>::zeros(y.shape());
        assert!(unpool2(&zeros, &idx, (8, 6)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrupted_indices_are_detected() {
        let x = random(Shape::new(1, 1, 4, 4), 1);
        let (y, mut idx) = maxpool2(&x).unwrap();
        idx.positions[0] = 15;
        assert!(matches!(unpool2(&y, &idx, (4, 4)), Err(Error::Corruption(_))));
        idx.positions[0] = 99;
        assert!(matches!(unpool2_backward(&x, &idx), Err(Error::Corruption(_))));
    }

    #[test]
    fn avgpool_backward_is_adjoint() {
        let x = random(Shape::new(1, 2, 4, 6), 3).cast::<f64>();
        let y = avgpool2(&x).unwrap();
        let g = random(y.shape(), 4).cast::<f64>();
        let gx = avgpool2_backward(&g);
        assert!((y.dot(&g) - x.dot(&gx)).abs() < 1e-12);
    }
}
