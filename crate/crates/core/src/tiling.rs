//! Whole-raster prediction from overlapping tiles, ensemble averaging and
//! the final per-pixel decision.

use crate::error::{Error, Result};
use crate::graph::{reflect_pad, ModelGraph};
use crate::labels::LabelMap;
use crate::metrics::{confusion, ConfusionMatrix};
use crate::tensor::{Shape, Tensor};
use crate::train::Sample;
use std::collections::BTreeMap;

pub const DEFAULT_TILE: usize = 256;
pub const DEFAULT_STRIDES: [usize; 3] = [150, 200, 220];

/// Tile origins `(row, col)` covering a raster at one stride.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub stride: usize,
    pub origins: Vec<(usize, usize)>,
}

/// `0, stride, 2·stride, …` with the last origin clamped to `dim − tile`.
/// A dimension no larger than the tile gets the single origin 0.
pub fn axis_origins(dim: usize, tile: usize, stride: usize) -> Vec<usize> {
    if dim <= tile {
        return vec![0];
    }
    let last = dim - tile;
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o < last).collect();
    out.push(last);
    out
}

/// Plans the tiles of one stride. Strides above the tile size step by the
/// tile size instead so no pixel is skipped. Dimensions smaller than the
/// tile are covered by one tile; the caller pads such rasters.
pub fn plan_tiles(hw: (usize, usize), tile: usize, stride: usize) -> Result<TileGrid> {
    if tile == 0 || stride == 0 {
        return Err(Error::Config(format!("tile ({tile}) and stride ({stride}) must be positive")));
    }
    let stride = stride.min(tile);
    let rows = axis_origins(hw.0, tile, stride);
    let cols = axis_origins(hw.1, tile, stride);
    Ok(TileGrid {
        height: hw.0,
        width: hw.1,
        tile,
        stride,
        origins: rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect(),
    })
}

impl TileGrid {
    /// How many windows cover each pixel (row major).
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.height * self.width];
        for &(r, c) in &self.origins {
            for y in r..(r + self.tile).min(self.height) {
                for x in c..(c + self.tile).min(self.width) {
                    cov[y * self.width + x] += 1;
                }
            }
        }
        cov
    }
}

/// Summed per-class scores with per-pixel coverage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// Class-major planes: `scores[k * h * w + y * w + x]`.
    pub scores: Vec<f64>,
    pub coverage: Vec<u32>,
}

impl ScoreMap {
    pub fn zeros(width: usize, height: usize, num_classes: usize) -> Self {
        ScoreMap {
            width,
            height,
            num_classes,
            scores: vec![0.0; width * height * num_classes],
            coverage: vec![0; width * height],
        }
    }

    pub fn plane(&self, class: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.scores[class * n..(class + 1) * n]
    }

    pub fn get(&self, class: usize, x: usize, y: usize) -> f64 {
        self.scores[(class * self.height + y) * self.width + x]
    }

    /// Adds `weight ×` a `(1, C, th, tw)` probability tile at `(row, col)`.
    pub fn add_tile(&mut self, origin: (usize, usize), probs: &Tensor, weight: u32) -> Result<()> {
        let s = probs.shape();
        if s.c != self.num_classes {
            return Err(Error::shape("ScoreMap::add_tile", "c", self.num_classes, s.c));
        }
        if origin.0 + s.h > self.height || origin.1 + s.w > self.width {
            return Err(Error::Data(format!(
                "tile {}x{} at {origin:?} exceeds {}x{} score map",
                s.h, s.w, self.height, self.width
            )));
        }
        let (w, n) = (self.width, self.width * self.height);
        let wf = weight as f64;
        for k in 0..s.c {
            let src = probs.plane(0, k);
            for y in 0..s.h {
                let row = &mut self.scores[k * n + (origin.0 + y) * w + origin.1..][..s.w];
                for (d, &v) in row.iter_mut().zip(&src[y * s.w..(y + 1) * s.w]) {
                    *d += wf * v as f64;
                }
            }
        }
        for y in 0..s.h {
            for c in &mut self.coverage[(origin.0 + y) * w + origin.1..][..s.w] {
                *c += weight;
            }
        }
        Ok(())
    }

    /// Divides by coverage and renormalizes every pixel to sum 1. Pixels
    /// without any mass become uniform.
    pub fn normalized(&self) -> ScoreMap {
        let n = self.width * self.height;
        let mut out = self.clone();
        for i in 0..n {
            let cov = self.coverage[i].max(1) as f64;
            let vals: Vec<f64> = (0..self.num_classes).map(|k| self.scores[k * n + i] / cov).collect();
            let sum: f64 = vals.iter().sum();
            for (k, v) in vals.iter().enumerate() {
                out.scores[k * n + i] = if sum > 0.0 {
                    v / sum
                } else {
                    1.0 / self.num_classes as f64
                };
            }
            out.coverage[i] = 1;
        }
        out
    }

    fn crop(&self, width: usize, height: usize) -> ScoreMap {
        let mut out = ScoreMap::zeros(width, height, self.num_classes);
        let (n, m) = (self.width * self.height, width * height);
        for y in 0..height {
            for k in 0..self.num_classes {
                out.scores[k * m + y * width..][..width].copy_from_slice(&self.scores[k * n + y * self.width..][..width]);
            }
            out.coverage[y * width..][..width].copy_from_slice(&self.coverage[y * self.width..][..width]);
        }
        out
    }
}

/// Anything that maps an image/height tile to per-class probabilities.
pub trait TileModel {
    fn num_classes(&self) -> usize;
    /// Inputs are `(1, c, tile, tile)`; returns `(1, num_classes, tile, tile)`.
    fn predict_tile(&mut self, image: &Tensor, height: &Tensor) -> Result<Tensor>;
}

impl TileModel for ModelGraph {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict_tile(&mut self, image: &Tensor, height: &Tensor) -> Result<Tensor> {
        let mut out = self.infer(&[("image", image), ("height", height)])?;
        out.remove("class_probs")
            .ok_or_else(|| Error::Config("graph has no `class_probs` output".into()))
    }
}

/// Tile size and strides of [`predict_raster`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileConfig {
    pub tile: usize,
    pub strides: Vec<usize>,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            tile: DEFAULT_TILE,
            strides: DEFAULT_STRIDES.to_vec(),
        }
    }
}

fn cut(t: &Tensor, r: usize, c: usize, size: usize) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(Shape::new(1, s.c, size, size), |_, ch, y, x| t.at(0, ch, r + y, c + x))
}

/// Tile origins of all strides with their multiplicity, in a fixed order.
pub fn plan_all(hw: (usize, usize), cfg: &TileConfig) -> Result<BTreeMap<(usize, usize), u32>> {
    if cfg.strides.is_empty() {
        return Err(Error::Config("at least one stride is required".into()));
    }
    let mut counts = BTreeMap::new();
    for &stride in &cfg.strides {
        for o in plan_tiles(hw, cfg.tile, stride)?.origins {
            *counts.entry(o).or_insert(0u32) += 1;
        }
    }
    Ok(counts)
}

/// Predicts a whole raster by summing tile probabilities over every stride
/// grid. A window shared by several grids is evaluated once and added with
/// its multiplicity. Rasters smaller than the tile are reflect-padded and
/// the result cropped back.
pub fn predict_raster<M: TileModel>(model: &mut M, image: &Tensor, height: &Tensor, cfg: &TileConfig) -> Result<ScoreMap> {
    let (si, sh) = (image.shape(), height.shape());
    if si.n != 1 || sh.n != 1 {
        return Err(Error::shape("predict_raster", "n", 1, si.n.max(sh.n)));
    }
    if (sh.h, sh.w) != (si.h, si.w) {
        return Err(Error::shape("predict_raster", if sh.h != si.h { "h" } else { "w" }, si.h, sh.h));
    }
    let (h, w) = (si.h.max(cfg.tile), si.w.max(cfg.tile));
    let (image, height) = if (h, w) != (si.h, si.w) {
        (reflect_pad(image, h, w), reflect_pad(height, h, w))
    } else {
        (image.clone(), height.clone())
    };
    let mut map = ScoreMap::zeros(w, h, model.num_classes());
    for ((r, c), mult) in plan_all((h, w), cfg)? {
        let probs = model.predict_tile(&cut(&image, r, c, cfg.tile), &cut(&height, r, c, cfg.tile))?;
        map.add_tile((r, c), &probs, mult)?;
    }
    Ok(if (h, w) != (si.h, si.w) { map.crop(si.w, si.h) } else { map })
}

/// Mean of the normalized members. Every output pixel sums to 1.
pub fn ensemble_average(maps: &[ScoreMap]) -> Result<ScoreMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Data("ensemble needs at least one score map".into()))?;
    for m in &maps[1..] {
        if m.width != first.width {
            return Err(Error::shape("ensemble_average", "w", first.width, m.width));
        }
        if m.height != first.height {
            return Err(Error::shape("ensemble_average", "h", first.height, m.height));
        }
        if m.num_classes != first.num_classes {
            return Err(Error::shape("ensemble_average", "c", first.num_classes, m.num_classes));
        }
    }
    let mut acc = vec![0.0f64; first.scores.len()];
    for m in maps {
        for (a, &v) in acc.iter_mut().zip(&m.normalized().scores) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    Ok(ScoreMap {
        scores: acc.into_iter().map(|v| v / k).collect(),
        coverage: vec![1; first.width * first.height],
        ..first.clone()
    })
}

/// Per-pixel argmax; ties go to the lowest class id.
pub fn argmax_labels(scores: &ScoreMap) -> LabelMap {
    let n = scores.width * scores.height;
    let values = (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..scores.num_classes {
                if scores.scores[k * n + i] > scores.scores[best * n + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(scores.width, scores.height, values, scores.num_classes, None).expect("argmax is below the class count")
}

/// Normalized score maps of every sample.
pub fn predict_samples<M: TileModel>(model: &mut M, samples: &[Sample], cfg: &TileConfig) -> Result<Vec<ScoreMap>> {
    samples
        .iter()
        .map(|s| predict_raster(model, &s.image, &s.height, cfg).map(|m| m.normalized()))
        .collect()
}

/// Confusion matrix of the argmax of `maps` against the sample labels.
pub fn score_confusion(maps: &[ScoreMap], samples: &[Sample]) -> Result<ConfusionMatrix> {
    if maps.len() != samples.len() {
        return Err(Error::shape("score_confusion", "n", samples.len(), maps.len()));
    }
    let mut total: Option<ConfusionMatrix> = None;
    for (m, s) in maps.iter().zip(samples) {
        let cm = confusion(&argmax_labels(m), &s.labels, s.labels.ignore_label())?;
        match total.as_mut() {
            Some(t) => t.merge(&cm)?,
            None => total = Some(cm),
        }
    }
    total.ok_or_else(|| Error::Data("no samples to evaluate".into()))
}
