use super::data::{BoundarySupervision, Sample};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, DEFAULT_IGNORE};
use crate::tensor::{Shape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ranges of the random geometric augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_range: [f64; 2],
    /// Degrees.
    pub rotation_range: [f64; 2],
    /// Degrees.
    pub shear_range: [f64; 2],
    /// Pixels.
    pub translation_range: [f64; 2],
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            scale_range: [1.0, 1.2],
            rotation_range: [0.0, 15.0],
            shear_range: [0.0, 8.0],
            translation_range: [-5.0, 5.0],
            hflip_prob: 0.5,
            vflip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, [lo, hi]) in [
            ("scale_range", self.scale_range),
            ("rotation_range", self.rotation_range),
            ("shear_range", self.shear_range),
            ("translation_range", self.translation_range),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("augment.{k} must be an ordered finite pair, got [{lo}, {hi}]")));
            }
        }
        if self.scale_range[0] <= 0.0 {
            return Err(Error::Config("augment.scale_range must be positive".into()));
        }
        if self.shear_range[1].abs() >= 80.0 || self.shear_range[0].abs() >= 80.0 {
            return Err(Error::Config("augment.shear_range must stay below 80 degrees".into()));
        }
        for (k, p) in [("hflip_prob", self.hflip_prob), ("vflip_prob", self.vflip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{k} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// One concrete transform: scale, rotate, shear and translate about the
/// tile center, then optional flips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    /// Radians.
    pub shear: f64,
    pub translate: (f64, f64),
    pub hflip: bool,
    pub vflip: bool,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        scale: 1.0,
        rotation: 0.0,
        shear: 0.0,
        translate: (0.0, 0.0),
        hflip: false,
        vflip: false,
    };

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> AffineParams {
        if !cfg.enabled {
            return Self::IDENTITY;
        }
        let mut range = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let scale = range(cfg.scale_range);
        let rotation = range(cfg.rotation_range).to_radians();
        let shear = range(cfg.shear_range).to_radians();
        let tx = range(cfg.translation_range);
        let ty = range(cfg.translation_range);
        AffineParams {
            scale,
            rotation,
            shear,
            translate: (tx, ty),
            hflip: rng.random_bool(cfg.hflip_prob),
            vflip: rng.random_bool(cfg.vflip_prob),
        }
    }

    /// Source coordinate sampled by output pixel `(x, y)`.
    fn inverse_map(&self, w: usize, h: usize) -> impl Fn(usize, usize) -> (f64, f64) {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        // forward A = scale · R(rotation) · [[1, tan shear], [0, 1]]
        let (c, s, t) = (self.rotation.cos(), self.rotation.sin(), self.shear.tan());
        let a = [
            [self.scale * c, self.scale * (c * t - s)],
            [self.scale * s, self.scale * (s * t + c)],
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let p = *self;
        move |x, y| {
            let x = if p.hflip { w - 1 - x } else { x } as f64;
            let y = if p.vflip { h - 1 - y } else { y } as f64;
            let (dx, dy) = (x - cx - p.translate.0, y - cy - p.translate.1);
            (cx + inv[0][0] * dx + inv[0][1] * dy, cy + inv[1][0] * dx + inv[1][1] * dy)
        }
    }
}

fn bilinear(t: &Tensor, c: usize, sx: f64, sy: f64) -> f32 {
    let s = t.shape();
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let (sx, sy) = (clamp(sx, s.w), clamp(sy, s.h));
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(s.w - 1), (y0 + 1).min(s.h - 1));
    let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
    if fx == 0.0 && fy == 0.0 {
        return t.at(0, c, y0, x0);
    }
    let top = t.at(0, c, y0, x0) * (1.0 - fx) + t.at(0, c, y0, x1) * fx;
    let bot = t.at(0, c, y1, x0) * (1.0 - fx) + t.at(0, c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn nearest(sx: f64, sy: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    let (x, y) = (sx.round(), sy.round());
    (x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64).then_some((x as usize, y as usize))
}

/// Applies one transform to every raster of a sample. Images and heights
/// are resampled bilinearly (edge clamped); labels and boundary targets by
/// nearest neighbour. Label pixels mapped from outside the raster become the
/// ignore label and get zero boundary weight.
pub fn apply_affine(sample: &Sample, p: &AffineParams) -> Sample {
    let (w, h) = (sample.width(), sample.rows());
    let map = p.inverse_map(w, h);
    let coords: Vec<(f64, f64)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| map(x, y)).collect();
    let resample = |t: &Tensor| {
        let s = t.shape();
        Tensor::from_fn(Shape::new(1, s.c, h, w), |_, c, y, x| {
            let (sx, sy) = coords[y * w + x];
            bilinear(t, c, sx, sy)
        })
    };
    let src: Vec<Option<(usize, usize)>> = coords.iter().map(|&(sx, sy)| nearest(sx, sy, w, h)).collect();
    let labels = &sample.labels;
    let ignore = labels.ignore_label().unwrap_or(DEFAULT_IGNORE);
    let values = src.iter().map(|s| s.map_or(ignore, |(x, y)| labels.get(x, y))).collect();
    let labels = LabelMap::new(w, h, values, labels.num_classes(), Some(ignore))
        .expect("resampled labels come from a valid map or the ignore label");
    let pick = |t: &Tensor, outside: f32| {
        Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
            src[y * w + x].map_or(outside, |(sx, sy)| t.at(0, 0, sy, sx))
        })
    };
    Sample {
        image: resample(&sample.image),
        height: resample(&sample.height),
        labels,
        boundary: sample.boundary.as_ref().map(|b| BoundarySupervision {
            target: pick(&b.target, 0.0),
            weights: pick(&b.weights, 0.0),
        }),
    }
}

/// Samples a transform and applies it to the sample.
pub fn augment_pair<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    apply_affine(sample, &AffineParams::sample(cfg, rng))
}
