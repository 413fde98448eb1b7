//! Soft class-boundary regression targets.
//!
//! Label transitions are extracted with 4-connectivity, widened by a
//! diamond (L1 ball) dilation into an uncertainty band, and every band pixel
//! is scored by its truncated Euclidean distance to the nearest pixel outside
//! the band, multiplied by a class-balance factor β and max-normalized to
//! `[0, 1]`.

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::raster::Raster;
use log::warn;

/// Binary boundary mask together with the dilation radius that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryBand {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    radius: usize,
}

impl BoundaryBand {
    pub fn new(width: usize, height: usize, mask: Vec<bool>, radius: usize) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::shape("BoundaryBand::new", "numel", width * height, mask.len()));
        }
        Ok(BoundaryBand {
            width,
            height,
            mask,
            radius,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }
}

/// How the class-balance factor β is read from the band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// β = (pixels outside the band) / (all pixels).
    #[default]
    BackgroundOverTotal,
    /// β = (pixels outside the band) / (pixels inside the band).
    BackgroundOverBand,
}

/// Parameters of [`make_boundary_target`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryParams {
    pub radius: usize,
    pub truncation: f64,
    pub beta_mode: BetaMode,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        BoundaryParams {
            radius: 3,
            truncation: 4.0,
            beta_mode: BetaMode::default(),
        }
    }
}

/// Soft boundary score in `[0, 1]`, zero outside the dilated band.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTarget {
    pub scores: Raster,
    pub beta: f64,
    pub beta_mode: BetaMode,
    pub radius: usize,
    pub truncation: f64,
    /// Set when the label map has no class transitions at all.
    pub boundary_free: bool,
}

impl BoundaryTarget {
    pub fn width(&self) -> usize {
        self.scores.width()
    }

    pub fn height(&self) -> usize {
        self.scores.height()
    }

    /// Per-pixel loss weights: β inside the band and the complementary
    /// background weight outside. Boundary-free targets weight every pixel 1.
    pub fn loss_weights(&self) -> Vec<f32> {
        if self.boundary_free {
            return vec![1.0; self.scores.data().len()];
        }
        let (band_w, bg_w) = band_weights(self.beta, self.beta_mode);
        self.scores
            .data()
            .iter()
            .map(|&v| if v > 0.0 { band_w } else { bg_w })
            .collect()
    }
}

/// `(band weight, background weight)` for a given β.
pub fn band_weights(beta: f64, mode: BetaMode) -> (f32, f32) {
    match mode {
        BetaMode::BackgroundOverTotal => (beta as f32, (1.0 - beta) as f32),
        BetaMode::BackgroundOverBand => (beta as f32, 1.0),
    }
}

/// Marks every pixel that has a 4-neighbour with a different class id.
/// Pixels carrying the ignore label never produce transitions.
pub fn extract_class_boundaries(labels: &LabelMap) -> BoundaryBand {
    let (w, h) = (labels.width(), labels.height());
    let mut mask = vec![false; w * h];
    let mut mark = |a: usize, b: usize| {
        let (va, vb) = (labels.values()[a], labels.values()[b]);
        if va != vb && !labels.is_ignored(va) && !labels.is_ignored(vb) {
            mask[a] = true;
            mask[b] = true;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                mark(i, i + 1);
            }
            if y + 1 < h {
                mark(i, i + w);
            }
        }
    }
    BoundaryBand {
        width: w,
        height: h,
        mask,
        radius: 0,
    }
}

/// Exact city-block distance to the nearest set pixel (two raster sweeps).
fn l1_distance(width: usize, height: usize, set: &[bool]) -> Vec<usize> {
    let inf = width + height + 1;
    let mut d: Vec<usize> = set.iter().map(|&b| if b { 0 } else { inf }).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x > 0 {
                d[i] = d[i].min(d[i - 1] + 1);
            }
            if y > 0 {
                d[i] = d[i].min(d[i - width] + 1);
            }
        }
    }
    for y in (0..height).rev() {
        for x in (0..width).rev() {
            let i = y * width + x;
            if x + 1 < width {
                d[i] = d[i].min(d[i + 1] + 1);
            }
            if y + 1 < height {
                d[i] = d[i].min(d[i + width] + 1);
            }
        }
    }
    d
}

/// Dilation by the diamond (L1 ball) of the given radius.
pub fn dilate_diamond(band: &BoundaryBand, radius: usize) -> BoundaryBand {
    let mask = if radius == 0 {
        band.mask.clone()
    } else {
        l1_distance(band.width, band.height, &band.mask)
            .into_iter()
            .map(|d| d <= radius)
            .collect()
    };
    BoundaryBand {
        width: band.width,
        height: band.height,
        mask,
        radius: band.radius + radius,
    }
}

/// Stand-in for "no seed" that keeps the parabola arithmetic finite.
const FAR: f64 = 1e20;

/// 1-D squared Euclidean distance transform of a sampled function
/// (lower envelope of parabolas, two passes).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let intersect = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
        let mut s = intersect(v[k]);
        // z[0] is -inf, so this always stops at k = 0 at the latest.
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from each pixel to the nearest pixel
/// where `seed` is true; at least `FAR` when no seed exists.
fn squared_edt(width: usize, height: usize, seed: &[bool]) -> Vec<f64> {
    let n = width.max(height);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut grid: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        edt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    grid
}

/// Truncated Euclidean distance from each band pixel to the nearest pixel
/// outside the band; zero outside the band.
pub fn truncated_edt(band: &BoundaryBand, truncation: f64) -> Result<Raster> {
    if truncation.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Config(format!("EDT truncation must be positive, got {truncation}")));
    }
    let (w, h) = (band.width, band.height);
    let background: Vec<bool> = band.mask.iter().map(|&b| !b).collect();
    if !background.iter().any(|&b| b) {
        warn!("boundary band covers the whole {w}x{h} raster; every distance is truncated");
        return Raster::new(w, h, vec![truncation as f32; w * h]);
    }
    let sq = squared_edt(w, h, &background);
    let data = sq
        .iter()
        .zip(&band.mask)
        .map(|(&d2, &inside)| if inside { d2.sqrt().min(truncation) as f32 } else { 0.0 })
        .collect();
    Raster::new(w, h, data)
}

/// Class-balance factor β of a band.
pub fn compute_beta(band: &BoundaryBand, mode: BetaMode) -> Result<f64> {
    let inside = band.count();
    if inside == 0 {
        return Err(Error::Data("β is undefined for an empty boundary band".into()));
    }
    let total = band.mask.len();
    let outside = total - inside;
    Ok(match mode {
        BetaMode::BackgroundOverTotal => outside as f64 / total as f64,
        BetaMode::BackgroundOverBand => outside as f64 / inside as f64,
    })
}

/// Full target construction: transitions → diamond dilation → β-weighted
/// truncated EDT → max normalization.
pub fn make_boundary_target(labels: &LabelMap, params: &BoundaryParams) -> Result<BoundaryTarget> {
    let raw = extract_class_boundaries(labels);
    let (w, h) = (labels.width(), labels.height());
    if raw.is_empty() {
        return Ok(BoundaryTarget {
            scores: Raster::zeros(w, h),
            beta: 0.0,
            beta_mode: params.beta_mode,
            radius: params.radius,
            truncation: params.truncation,
            boundary_free: true,
        });
    }
    let band = dilate_diamond(&raw, params.radius);
    let beta = compute_beta(&band, params.beta_mode)?;
    let dist = truncated_edt(&band, params.truncation)?;
    // Y = β·D is max-normalized; β cancels, so the division is done on D
    // directly to keep the result independent of β's rounding.
    let dmax = dist.max();
    let data = dist.data().iter().map(|&d| d / dmax).collect();
    Ok(BoundaryTarget {
        scores: Raster::new(w, h, data)?,
        beta,
        beta_mode: params.beta_mode,
        radius: params.radius,
        truncation: params.truncation,
        boundary_free: false,
    })
}

/// Unnormalized score `Y = β · D` of a band.
pub fn raw_scores(band: &BoundaryBand, truncation: f64, mode: BetaMode) -> Result<Raster> {
    let beta = compute_beta(band, mode)?;
    let mut d = truncated_edt(band, truncation)?;
    d.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * beta) as f32);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn split_map(w: usize, h: usize) -> LabelMap {
        let values = (0..w * h).map(|i| u8::from(i % w >= w / 2)).collect();
        LabelMap::new(w, h, values, 2, Some(255)).unwrap()
    }

    fn band_from(w: usize, h: usize, set: &[(usize, usize)]) -> BoundaryBand {
        let mut mask = vec![false; w * h];
        for &(x, y) in set {
            mask[y * w + x] = true;
        }
        BoundaryBand::new(w, h, mask, 0).unwrap()
    }

    fn brute_edt(band: &BoundaryBand) -> Vec<f64> {
        let (w, h) = (band.width(), band.height());
        (0..w * h)
            .map(|i| {
                if !band.mask()[i] {
                    return 0.0;
                }
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                (0..w * h)
                    .filter(|&j| !band.mask()[j])
                    .map(|j| (((j % w) as f64 - x).powi(2) + ((j / w) as f64 - y).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn constant_map_has_no_boundaries() {
        let m = LabelMap::filled(8, 8, 2, 5).unwrap();
        assert!(extract_class_boundaries(&m).is_empty());
    }

    #[test]
    fn vertical_split_marks_two_columns() {
        let b = extract_class_boundaries(&split_map(8, 8));
        assert_eq!(b.count(), 16);
        for y in 0..8 {
            assert!(b.get(3, y) && b.get(4, y));
        }
    }

    #[test]
    fn ignored_pixels_do_not_create_transitions() {
        let m = LabelMap::new(3, 1, vec![0, 255, 1], 2, Some(255)).unwrap();
        assert!(extract_class_boundaries(&m).is_empty());
    }

    #[test]
    fn random_map_matches_neighbour_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<u8> = (0..256).map(|_| rng.random_range(0..3)).collect();
        let m = LabelMap::new(16, 16, values, 3, None).unwrap();
        let b = extract_class_boundaries(&m);
        for y in 0..16i32 {
            for x in 0..16i32 {
                let v = m.get(x as usize, y as usize);
                let want = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    (0..16).contains(&nx) && (0..16).contains(&ny) && m.get(nx as usize, ny as usize) != v
                });
                assert_eq!(b.get(x as usize, y as usize), want);
            }
        }
    }

    #[test]
    fn diamond_radius_one_is_plus_shape() {
        let b = band_from(5, 5, &[(2, 2)]);
        assert_eq!(dilate_diamond(&b, 0), b);
        let d = dilate_diamond(&b, 1);
        assert_eq!(d.count(), 5);
        for (x, y) in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)] {
            assert!(d.get(x, y));
        }
        assert_eq!(d.radius(), 1);
    }

    #[test]
    fn dilation_matches_l1_ball_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask: Vec<bool> = (0..20 * 13).map(|_| rng.random_bool(0.05)).collect();
        let b = BoundaryBand::new(20, 13, mask, 0).unwrap();
        let d = dilate_diamond(&b, 2);
        for y in 0..13i64 {
            for x in 0..20i64 {
                let want = (0..13i64).any(|sy| {
                    (0..20i64).any(|sx| b.get(sx as usize, sy as usize) && (sx - x).abs() + (sy - y).abs() <= 2)
                });
                assert_eq!(d.get(x as usize, y as usize), want);
            }
        }
    }

    #[test]
    fn edt_of_thin_band_and_plus_shape() {
        let thin = dilate_diamond(&extract_class_boundaries(&split_map(8, 6)), 0);
        let d = truncated_edt(&thin, 10.0).unwrap();
        for (v, &m) in d.data().iter().zip(thin.mask()) {
            assert_eq!(*v, if m { 1.0 } else { 0.0 });
        }
        let plus = dilate_diamond(&band_from(7, 7, &[(3, 3)]), 1);
        let d = truncated_edt(&plus, 10.0).unwrap();
        assert_eq!(d.get(3, 3), 2f32.sqrt());
        for (x, y) in [(2, 3), (4, 3), (3, 2), (3, 4)] {
            assert_eq!(d.get(x, y), 1.0);
        }
        let capped = truncated_edt(&plus, 1.0).unwrap();
        assert!(plus.mask().iter().zip(capped.data()).all(|(&m, &v)| !m || v == 1.0));
    }

    #[test]
    fn edt_matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
            let p = rng.random_range(0.1..0.95);
            let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(p)).collect();
            let band = BoundaryBand::new(w, h, mask, 0).unwrap();
            if band.count() == w * h {
                continue;
            }
            let got = truncated_edt(&band, 1e9).unwrap();
            for (g, want) in got.data().iter().zip(brute_edt(&band)) {
                assert_eq!(*g, want as f32);
            }
        }
    }

    #[test]
    fn full_band_saturates_to_truncation() {
        let band = BoundaryBand::new(3, 3, vec![true; 9], 0).unwrap();
        let d = truncated_edt(&band, 2.5).unwrap();
        assert!(d.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn beta_counts() {
        let mut set = vec![];
        for i in 0..10 {
            set.push((i, 0));
        }
        let b = band_from(10, 10, &set);
        assert_eq!(compute_beta(&b, BetaMode::BackgroundOverTotal).unwrap(), 0.9);
        assert_eq!(compute_beta(&b, BetaMode::BackgroundOverBand).unwrap(), 9.0);
        let half: Vec<(usize, usize)> = (0..50).map(|i| (i % 10, i / 10)).collect();
        assert_eq!(compute_beta(&band_from(10, 10, &half), BetaMode::BackgroundOverTotal).unwrap(), 0.5);
        assert!(compute_beta(&band_from(4, 4, &[]), BetaMode::BackgroundOverTotal).is_err());
    }

    #[test]
    fn two_region_worked_example() {
        let params = BoundaryParams {
            radius: 2,
            truncation: 3.0,
            beta_mode: BetaMode::BackgroundOverTotal,
        };
        let t = make_boundary_target(&split_map(16, 16), &params).unwrap();
        assert!(!t.boundary_free);
        let row: Vec<f32> = (0..16).map(|x| t.scores.get(x, 5)).collect();
        let third = 1.0f32 / 3.0;
        let two_thirds = 2.0f32 / 3.0;
        assert_eq!(
            row,
            vec![0.0, 0.0, 0.0, 0.0, 0.0, third, two_thirds, 1.0, 1.0, two_thirds, third, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert!((t.beta - 160.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn constant_map_gives_flagged_zero_target() {
        let t = make_boundary_target(&LabelMap::filled(9, 7, 1, 3).unwrap(), &BoundaryParams::default()).unwrap();
        assert!(t.boundary_free);
        assert!(t.scores.data().iter().all(|&v| v == 0.0));
        assert!(t.loss_weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn beta_mode_does_not_change_normalized_target() {
        let m = split_map(12, 12);
        let a = make_boundary_target(&m, &BoundaryParams::default()).unwrap();
        let b = make_boundary_target(
            &m,
            &BoundaryParams {
                beta_mode: BetaMode::BackgroundOverBand,
                ..BoundaryParams::default()
            },
        )
        .unwrap();
        assert_eq!(a.scores, b.scores);
        assert_ne!(a.beta, b.beta);
    }
}
