use crate::boundary::{make_boundary_target, BoundaryParams, BoundaryTarget};
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape, Tensor};

/// Soft boundary target and its per-pixel loss weights, both `(1, 1, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySupervision {
    pub target: Tensor,
    pub weights: Tensor,
}

impl BoundarySupervision {
    pub fn from_target(t: &BoundaryTarget) -> Result<Self> {
        let shape = Shape::new(1, 1, t.height(), t.width());
        Ok(BoundarySupervision {
            target: Tensor::from_vec(shape, t.scores.data().to_vec())?,
            weights: Tensor::from_vec(shape, t.loss_weights())?,
        })
    }
}

/// One aligned training raster: image, height channels, labels and
/// optionally the precomputed boundary supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, image_channels, h, w)`.
    pub image: Tensor,
    /// `(1, height_channels, h, w)`.
    pub height: Tensor,
    pub labels: LabelMap,
    pub boundary: Option<BoundarySupervision>,
}

impl Sample {
    pub fn new(image: Tensor, height: Tensor, labels: LabelMap) -> Result<Self> {
        let (si, sh) = (image.shape(), height.shape());
        for (axis, a, b) in [("n", si.n, 1), ("n", sh.n, 1), ("h", sh.h, si.h), ("w", sh.w, si.w)] {
            if a != b {
                return Err(Error::shape("Sample::new", axis, b, a));
            }
        }
        if labels.height() != si.h {
            return Err(Error::shape("Sample::new", "h", si.h, labels.height()));
        }
        if labels.width() != si.w {
            return Err(Error::shape("Sample::new", "w", si.w, labels.width()));
        }
        Ok(Sample {
            image,
            height,
            labels,
            boundary: None,
        })
    }

    /// Attaches boundary supervision derived from the labels.
    pub fn with_boundary_target(mut self, params: &BoundaryParams) -> Result<Self> {
        let t = make_boundary_target(&self.labels, params)?;
        self.boundary = Some(BoundarySupervision::from_target(&t)?);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    pub fn rows(&self) -> usize {
        self.image.shape().h
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Sample> {
        if x0 + w > self.width() || y0 + h > self.rows() {
            return Err(Error::Data(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} sample",
                self.width(),
                self.rows()
            )));
        }
        let cut = |t: &Tensor| {
            let s = t.shape();
            Tensor::from_fn(Shape::new(1, s.c, h, w), |_, c, y, x| t.at(0, c, y0 + y, x0 + x))
        };
        Ok(Sample {
            image: cut(&self.image),
            height: cut(&self.height),
            labels: self.labels.crop(x0, y0, w, h)?,
            boundary: self.boundary.as_ref().map(|b| BoundarySupervision {
                target: cut(&b.target),
                weights: cut(&b.weights),
            }),
        })
    }
}

/// Stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub image: Tensor,
    pub height: Tensor,
    pub labels: Vec<LabelMap>,
    pub boundary: Option<(Tensor, Tensor)>,
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Batch> {
        if samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
        let heights: Vec<&Tensor> = samples.iter().map(|s| &s.height).collect();
        let boundary = if samples.iter().all(|s| s.boundary.is_some()) {
            let t: Vec<&Tensor> = samples.iter().map(|s| &s.boundary.as_ref().unwrap().target).collect();
            let w: Vec<&Tensor> = samples.iter().map(|s| &s.boundary.as_ref().unwrap().weights).collect();
            Some((Tensor::stack(&t)?, Tensor::stack(&w)?))
        } else {
            None
        };
        Ok(Batch {
            image: Tensor::stack(&images)?,
            height: Tensor::stack(&heights)?,
            labels: samples.iter().map(|s| s.labels.clone()).collect(),
            boundary,
        })
    }
}
