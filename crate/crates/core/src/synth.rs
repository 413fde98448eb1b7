//! Synthetic aerial scenes with the five benchmark classes: impervious
//! ground, buildings, low vegetation, trees and cars, plus a digital
//! surface model and its above-ground (normalized) version.

use crate::boundary::{make_boundary_target, BoundaryParams};
use crate::error::{Error, Result};
use crate::io::{
    read_boundary_target, read_heights, read_label_png, read_png_rgb, write_boundary_target, write_heights,
    write_label_png, write_png_rgb, RgbImage,
};
use crate::labels::{LabelMap, DEFAULT_IGNORE};
use crate::raster::Raster;
use crate::tensor::{Shape, Tensor};
use crate::train::{BoundarySupervision, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const IMPERVIOUS: u8 = 0;
pub const BUILDING: u8 = 1;
pub const LOW_VEG: u8 = 2;
pub const TREE: u8 = 3;
pub const CAR: u8 = 4;
pub const NUM_CLASSES: usize = 5;

/// Object counts per scene (inclusive ranges) and the share of the
/// background that is low vegetation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMix {
    pub buildings: (usize, usize),
    pub trees: (usize, usize),
    pub cars: (usize, usize),
    pub low_veg_share: f64,
    /// Probability that a roof has the same gray as the pavement.
    pub gray_roof_prob: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        ClassMix {
            buildings: (2, 4),
            trees: (2, 5),
            cars: (2, 6),
            low_veg_share: 0.45,
            gray_roof_prob: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: RgbImage,
    /// Surface height in meters.
    pub dsm: Raster,
    /// Height above ground in meters.
    pub ndsm: Raster,
    pub labels: LabelMap,
    pub seed: u64,
}

/// Smooth noise in [0, 1]: bilinear interpolation of a random lattice.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: usize) -> Vec<f32> {
    let (gw, gh) = (w / cell + 2, h / cell + 2);
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random()).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f32 / cell as f32, y as f32 / cell as f32);
            let (ix, iy) = (fx as usize, fy as usize);
            let s = |t: f32| t * t * (3.0 - 2.0 * t);
            let (tx, ty) = (s(fx - ix as f32), s(fy - iy as f32));
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
            let bot = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Pixels inside a rectangle of half-sizes `(a, b)` centered at `(cx, cy)`
/// and rotated by `angle`.
fn in_rect(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    let (c, s) = (angle.cos(), angle.sin());
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= a && v.abs() <= b
}

/// Generates one scene. Deterministic in `seed`.
pub fn generate_scene(size: usize, mix: &ClassMix, seed: u64) -> Result<SyntheticScene> {
    if size < 64 {
        return Err(Error::Config(format!("scene size must be at least 64, got {size}")));
    }
    let (w, h) = (size, size);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![IMPERVIOUS; n];
    let mut ndsm = vec![0f32; n];
    let mut color = vec![[0f32; 3]; n];

    // Ground: pavement and grass from thresholded smooth noise, plus a road.
    let field = value_noise(&mut rng, w, h, (size / 4).max(8));
    let mut sorted = field.clone();
    sorted.sort_by(f32::total_cmp);
    let cut = sorted[((1.0 - mix.low_veg_share) * (n - 1) as f64) as usize];
    for i in 0..n {
        labels[i] = if field[i] > cut { LOW_VEG } else { IMPERVIOUS };
    }
    let horizontal = rng.random_bool(0.5);
    let road_at = rng.random_range(size / 6..size - size / 6);
    let road_half = rng.random_range(3..7);
    for y in 0..h {
        for x in 0..w {
            let d = if horizontal { y } else { x } as isize - road_at as isize;
            if d.unsigned_abs() <= road_half {
                labels[y * w + x] = IMPERVIOUS;
            }
        }
    }

    // Buildings: rotated rectangles with flat roofs.
    let nb = rng.random_range(mix.buildings.0..=mix.buildings.1);
    for _ in 0..nb {
        let (a, b) = (rng.random_range(7.0..18.0), rng.random_range(7.0..18.0));
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let angle = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..std::f64::consts::PI) };
        let height = rng.random_range(4.0..12.0f32);
        let roof = if rng.random_bool(mix.gray_roof_prob) {
            [128.0, 128.0, 132.0]
        } else {
            [rng.random_range(150.0..185.0), rng.random_range(70.0..95.0), rng.random_range(55.0..75.0)]
        };
        for y in 0..h {
            for x in 0..w {
                if in_rect(x as f64, y as f64, cx, cy, a, b, angle) {
                    let i = y * w + x;
                    labels[i] = BUILDING;
                    ndsm[i] = height;
                    color[i] = roof;
                }
            }
        }
    }

    // Trees: unions of discs with ragged edges, never over roofs.
    let nt = rng.random_range(mix.trees.0..=mix.trees.1);
    for _ in 0..nt {
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let top = rng.random_range(3.0..9.0f32);
        let discs: Vec<(f64, f64, f64)> = (0..rng.random_range(2..6))
            .map(|_| {
                (
                    cx + rng.random_range(-8.0..8.0),
                    cy + rng.random_range(-8.0..8.0),
                    rng.random_range(4.0..9.0),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if labels[i] == BUILDING {
                    continue;
                }
                let jitter: f64 = rng.random_range(-1.0..1.0);
                let inside = discs.iter().any(|&(dx, dy, r)| {
                    let d2 = (x as f64 - dx).powi(2) + (y as f64 - dy).powi(2);
                    d2.sqrt() <= r + jitter
                });
                if inside {
                    labels[i] = TREE;
                    ndsm[i] = (top + rng.random_range(-1.0..1.0f32)).max(1.5);
                }
            }
        }
    }

    // Cars: small rectangles fully on pavement.
    let nc = rng.random_range(mix.cars.0..=mix.cars.1);
    let car_colors = [[30.0, 30.0, 35.0], [200.0, 40.0, 40.0], [40.0, 60.0, 190.0], [235.0, 235.0, 240.0]];
    let mut placed = 0;
    for _ in 0..400 {
        if placed == nc {
            break;
        }
        let (cw, ch) = if rng.random_bool(0.5) { (3, 6) } else { (6, 3) };
        let (x0, y0) = (rng.random_range(0..w - cw), rng.random_range(0..h - ch));
        let free = (y0..y0 + ch).all(|y| (x0..x0 + cw).all(|x| labels[y * w + x] == IMPERVIOUS));
        if !free {
            continue;
        }
        let c = car_colors[rng.random_range(0..car_colors.len())];
        for y in y0..y0 + ch {
            for x in x0..x0 + cw {
                let i = y * w + x;
                labels[i] = CAR;
                ndsm[i] = 1.5;
                color[i] = c;
            }
        }
        placed += 1;
    }

    // Spectral texture for the ground classes.
    let tex = value_noise(&mut rng, w, h, 3);
    for i in 0..n {
        let t = tex[i] - 0.5;
        match labels[i] {
            IMPERVIOUS => color[i] = [128.0 + 30.0 * t, 128.0 + 30.0 * t, 132.0 + 30.0 * t],
            LOW_VEG => color[i] = [125.0 + 30.0 * t, 175.0 + 30.0 * t, 90.0 + 20.0 * t],
            TREE => color[i] = [50.0 + 40.0 * t, 105.0 + 50.0 * t, 45.0 + 30.0 * t],
            _ => {}
        }
    }
    let mut data = Vec::with_capacity(n * 3);
    for c in &color {
        for v in c {
            data.push((v + rng.random_range(-6.0..6.0f32)).round().clamp(0.0, 255.0) as u8);
        }
    }

    // Terrain: tilted plane with gentle undulation.
    let (gx, gy) = (rng.random_range(-0.05..0.05f32), rng.random_range(-0.05..0.05f32));
    let base = rng.random_range(100.0..300.0f32);
    let hills = value_noise(&mut rng, w, h, (size / 2).max(8));
    let dsm: Vec<f32> = (0..n)
        .map(|i| base + gx * (i % w) as f32 + gy * (i / w) as f32 + 2.0 * hills[i] + ndsm[i])
        .collect();

    Ok(SyntheticScene {
        image: RgbImage { width: w, height: h, data },
        dsm: Raster::new(w, h, dsm)?,
        ndsm: Raster::new(w, h, ndsm)?,
        labels: LabelMap::new(w, h, labels, NUM_CLASSES, Some(DEFAULT_IGNORE))?,
        seed,
    })
}

/// Stacks DSM and nDSM as `(1, 2, h, w)` in meters.
pub fn height_tensor(dsm: &Raster, ndsm: &Raster) -> Tensor {
    Tensor::from_fn(Shape::new(1, 2, dsm.height(), dsm.width()), |_, c, y, x| {
        if c == 0 {
            dsm.get(x, y)
        } else {
            ndsm.get(x, y)
        }
    })
}

/// Network input scaling of height channels: the first channel (surface
/// height) is centered on its mean, all channels are divided by 10 m.
pub fn normalize_heights(t: &Tensor) -> Tensor {
    let s = t.shape();
    let plane = s.h * s.w;
    let mean = t.plane(0, 0).iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
    Tensor::from_fn(s, |n, c, y, x| {
        let v = t.at(n, c, y, x);
        if c == 0 {
            ((v as f64 - mean) / 10.0) as f32
        } else {
            v / 10.0
        }
    })
}

impl SyntheticScene {
    pub fn heights(&self) -> Tensor {
        height_tensor(&self.dsm, &self.ndsm)
    }

    /// Training sample with normalized inputs and boundary supervision.
    pub fn to_sample(&self, params: &BoundaryParams) -> Result<Sample> {
        Sample::new(self.image.to_tensor(), normalize_heights(&self.heights()), self.labels.clone())?
            .with_boundary_target(params)
    }
}

/// Seed of scene `index` in a dataset generated from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

pub fn generate_scenes(count: usize, size: usize, mix: &ClassMix, seed: u64) -> Result<Vec<SyntheticScene>> {
    (0..count).map(|i| generate_scene(size, mix, scene_seed(seed, i))).collect()
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes `count` scenes below `dir` as `images/<id>.png`,
/// `heights/<id>.hght`, `labels/<id>.png` and `boundaries/<id>.btgt`.
pub fn synth_generate(dir: &Path, count: usize, size: usize, mix: &ClassMix, seed: u64, params: &BoundaryParams) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene(size, mix, scene_seed(seed, i))?;
        let id = scene_id(i);
        write_png_rgb(&dir.join("images").join(format!("{id}.png")), &scene.image)?;
        write_heights(&dir.join("heights").join(format!("{id}.hght")), &scene.heights())?;
        write_label_png(&dir.join("labels").join(format!("{id}.png")), &scene.labels)?;
        let target = make_boundary_target(&scene.labels, params)?;
        write_boundary_target(&dir.join("boundaries").join(format!("{id}.btgt")), &target)?;
        ids.push(id);
    }
    Ok(ids)
}

/// Scene ids of a dataset directory (sorted file stems of `images/`).
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let images = dir.join("images");
    let mut ids: Vec<String> = std::fs::read_dir(&images)
        .map_err(|e| Error::io(&images, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            if p.extension()? != "png" {
                return None;
            }
            Some(p.file_stem()?.to_string_lossy().into_owned())
        })
        .collect();
    ids.sort();
    Ok(ids)
}

/// Loads one scene of a dataset directory. Boundary targets come from
/// `boundaries/<id>.btgt` when present and are computed from the labels
/// otherwise.
pub fn load_sample(dir: &Path, id: &str, num_classes: usize, params: &BoundaryParams) -> Result<Sample> {
    let image = read_png_rgb(&dir.join("images").join(format!("{id}.png")))?.to_tensor();
    let heights = normalize_heights(&read_heights(&dir.join("heights").join(format!("{id}.hght")))?);
    let labels = read_label_png(&dir.join("labels").join(format!("{id}.png")), num_classes, Some(DEFAULT_IGNORE))?;
    let sample = Sample::new(image, heights, labels)?;
    let btgt = dir.join("boundaries").join(format!("{id}.btgt"));
    if btgt.exists() {
        let t = read_boundary_target(&btgt)?;
        let mut sample = sample;
        sample.boundary = Some(BoundarySupervision::from_target(&t)?);
        Ok(sample)
    } else {
        sample.with_boundary_target(params)
    }
}

pub fn load_dataset(dir: &Path, num_classes: usize, params: &BoundaryParams) -> Result<Vec<(String, Sample)>> {
    list_ids(dir)?
        .into_iter()
        .map(|id| load_sample(dir, &id, num_classes, params).map(|s| (id, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_contain_every_class() {
        let mix = ClassMix::default();
        let a = generate_scene(96, &mix, 7).unwrap();
        let b = generate_scene(96, &mix, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(96, &mix, 8).unwrap());
        for seed in 0..10 {
            let s = generate_scene(96, &mix, scene_seed(3, seed)).unwrap();
            let hist = s.labels.histogram();
            assert!(hist[..5].iter().all(|&c| c > 0), "seed {seed}: {hist:?}");
        }
    }

    #[test]
    fn heights_follow_the_classes() {
        let s = generate_scene(128, &ClassMix::default(), 1).unwrap();
        for (i, &l) in s.labels.values().iter().enumerate() {
            let h = s.ndsm.data()[i];
            match l {
                IMPERVIOUS | LOW_VEG => assert_eq!(h, 0.0),
                BUILDING => assert!(h >= 4.0),
                TREE => assert!(h >= 1.5),
                CAR => assert_eq!(h, 1.5),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn too_small_scenes_are_rejected() {
        assert!(generate_scene(32, &ClassMix::default(), 0).is_err());
    }
}
