//! File formats: 8-bit PNG for images, labels and previews; little-endian
//! binaries with a 4-byte magic and `u32` version for real-valued rasters.
//!
//! | magic  | content            | after the 16-byte header (magic, version, width, height) |
//! |--------|--------------------|-----------------------------------------------------------|
//! | `BTGT` | boundary target    | β `f64`, truncation `f64`, radius `u32`, flags `u32`, scores `f32` |
//! | `HGHT` | height channels    | channels `u32`, planes `f32` |
//! | `SCOR` | summed class scores| classes `u32`, planes `f64`, coverage `u32` |
//!
//! Label PNGs are 8-bit paletted; the index is the class id.

use crate::boundary::{BetaMode, BoundaryTarget};
use crate::error::{Error, Result};
use crate::graph::{read_file, write_file, Reader};
use crate::labels::LabelMap;
use crate::raster::Raster;
use crate::tensor::{Shape, Tensor};
use crate::tiling::ScoreMap;
use std::io::Cursor;
use std::path::Path;

pub const BOUNDARY_MAGIC: &[u8; 4] = b"BTGT";
pub const HEIGHT_MAGIC: &[u8; 4] = b"HGHT";
pub const SCORE_MAGIC: &[u8; 4] = b"SCOR";
pub const FORMAT_VERSION: u32 = 1;

/// Class colors in legend order: impervious, building, low vegetation,
/// tree, car. The ignore label 255 is drawn red.
pub const PALETTE: [[u8; 3]; 5] = [[255, 255, 255], [0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0]];
pub const IGNORE_COLOR: [u8; 3] = [255, 0, 0];

fn palette_color(index: u8) -> [u8; 3] {
    match index {
        255 => IGNORE_COLOR,
        i if (i as usize) < PALETTE.len() => PALETTE[i as usize],
        i => [i, i, i],
    }
}

/// Interleaved 8-bit RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    /// `(1, 3, h, w)` with values scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |_, c, y, x| {
            self.data[(y * self.width + x) * 3 + c] as f32 / 255.0
        })
    }

    pub fn from_tensor(t: &Tensor) -> RgbImage {
        let s = t.shape();
        let mut data = Vec::with_capacity(s.h * s.w * 3);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    data.push((t.at(0, c.min(s.c - 1), y, x) * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RgbImage {
            width: s.w,
            height: s.h,
            data,
        }
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: Vec<u8>,
}

fn decode(path: &Path, transform: png::Transformations) -> Result<Decoded> {
    let bytes = read_file(path)?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(transform);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.line_size * info.height as usize);
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        palette,
        data: buf,
    })
}

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, palette: Option<Vec<u8>>, data: &[u8]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut w = enc.write_header().map_err(|e| png_err(path, e))?;
        w.write_image_data(data).map_err(|e| png_err(path, e))?;
        w.finish().map_err(|e| png_err(path, e))?;
    }
    write_file(path, &out)
}

/// Reads any 8-bit (or palette / 16-bit, reduced) PNG as RGB.
pub fn read_png_rgb(path: &Path) -> Result<RgbImage> {
    let d = decode(path, png::Transformations::normalize_to_color8())?;
    let n = d.width * d.height;
    let data = match d.color {
        png::ColorType::Rgb => d.data,
        png::ColorType::Rgba => d.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => d.data.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => d.data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(png_err(path, "palette was not expanded")),
    };
    debug_assert_eq!(data.len(), n * 3);
    Ok(RgbImage {
        width: d.width,
        height: d.height,
        data,
    })
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    if img.data.len() != img.width * img.height * 3 {
        return Err(Error::shape("write_png_rgb", "numel", img.width * img.height * 3, img.data.len()));
    }
    encode(path, img.width, img.height, png::ColorType::Rgb, None, &img.data)
}

/// 8-bit grayscale, e.g. boundary previews.
pub fn write_png_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::shape("write_png_gray", "numel", width * height, data.len()));
    }
    encode(path, width, height, png::ColorType::Grayscale, None, data)
}

/// Paletted label PNG; the pixel index is the class id.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    let palette: Vec<u8> = (0..=255u8).flat_map(palette_color).collect();
    encode(path, labels.width(), labels.height(), png::ColorType::Indexed, Some(palette), labels.values())
}

/// Reads a label PNG: paletted or grayscale images give the index directly,
/// RGB images are matched against the class palette.
pub fn read_label_png(path: &Path, num_classes: usize, ignore_label: Option<u8>) -> Result<LabelMap> {
    let d = decode(path, png::Transformations::IDENTITY)?;
    let values = match d.color {
        png::ColorType::Indexed | png::ColorType::Grayscale => d.data,
        png::ColorType::Rgb | png::ColorType::Rgba => {
            let step = if d.color == png::ColorType::Rgb { 3 } else { 4 };
            d.data
                .chunks_exact(step)
                .map(|p| {
                    let rgb = [p[0], p[1], p[2]];
                    (0..=255u8)
                        .find(|&i| palette_color(i) == rgb && ((i as usize) < num_classes || Some(i) == ignore_label))
                        .ok_or_else(|| png_err(path, format!("color {rgb:?} is not in the class palette")))
                })
                .collect::<Result<Vec<u8>>>()?
        }
        other => return Err(png_err(path, format!("unsupported label color type {other:?}"))),
    };
    let _ = d.palette;
    LabelMap::new(d.width, d.height, values, num_classes, ignore_label).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        e => e,
    })
}

fn header(magic: &[u8; 4], width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<(usize, usize)> {
    r.magic(magic)?;
    r.version(FORMAT_VERSION)?;
    let at = r.offset();
    let w = r.u32("width")? as usize;
    let h = r.u32("height")? as usize;
    if w == 0 || h == 0 {
        return Err(r.error(at, format!("empty raster {w}x{h}")));
    }
    Ok((w, h))
}

fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_boundary_target(path: &Path, t: &BoundaryTarget) -> Result<()> {
    let mut out = header(BOUNDARY_MAGIC, t.width(), t.height());
    out.extend_from_slice(&t.beta.to_le_bytes());
    out.extend_from_slice(&t.truncation.to_le_bytes());
    out.extend_from_slice(&(t.radius as u32).to_le_bytes());
    let flags = t.boundary_free as u32 | ((t.beta_mode == BetaMode::BackgroundOverBand) as u32) << 1;
    out.extend_from_slice(&flags.to_le_bytes());
    push_f32s(&mut out, t.scores.data());
    write_file(path, &out)
}

pub fn read_boundary_target(path: &Path) -> Result<BoundaryTarget> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    let (w, h) = read_header(&mut r, BOUNDARY_MAGIC)?;
    let beta = f64::from_le_bytes(r.take(8, "beta")?.try_into().unwrap());
    let truncation = f64::from_le_bytes(r.take(8, "truncation")?.try_into().unwrap());
    let radius = r.u32("radius")? as usize;
    let at = r.offset();
    let flags = r.u32("flags")?;
    if flags > 3 {
        return Err(r.error(at, format!("unknown flags {flags:#x}")));
    }
    let at = r.offset();
    let scores = r.f32s(w * h, "scores")?;
    if let Some(i) = scores.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(r.error(at + 4 * i, format!("score {} outside [0, 1]", scores[i])));
    }
    r.finish()?;
    Ok(BoundaryTarget {
        scores: Raster::new(w, h, scores)?,
        beta,
        beta_mode: if flags & 2 != 0 {
            BetaMode::BackgroundOverBand
        } else {
            BetaMode::BackgroundOverTotal
        },
        radius,
        truncation,
        boundary_free: flags & 1 != 0,
    })
}

/// Grayscale preview of a boundary target (score × 255).
pub fn write_boundary_preview(path: &Path, t: &BoundaryTarget) -> Result<()> {
    let data: Vec<u8> = t.scores.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    write_png_gray(path, t.width(), t.height(), &data)
}

/// Height channels `(1, c, h, w)`.
pub fn write_heights(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.n != 1 {
        return Err(Error::shape("write_heights", "n", 1, s.n));
    }
    let mut out = header(HEIGHT_MAGIC, s.w, s.h);
    out.extend_from_slice(&(s.c as u32).to_le_bytes());
    push_f32s(&mut out, t.data());
    write_file(path, &out)
}

pub fn read_heights(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    let (w, h) = read_header(&mut r, HEIGHT_MAGIC)?;
    let at = r.offset();
    let c = r.u32("channels")? as usize;
    if c == 0 {
        return Err(r.error(at, "zero channels"));
    }
    let data = r.f32s(c * w * h, "height data")?;
    r.finish()?;
    Tensor::from_vec(Shape::new(1, c, h, w), data)
}

pub fn write_score_map(path: &Path, m: &ScoreMap) -> Result<()> {
    let mut out = header(SCORE_MAGIC, m.width, m.height);
    out.extend_from_slice(&(m.num_classes as u32).to_le_bytes());
    for v in &m.scores {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in &m.coverage {
        out.extend_from_slice(&c.to_le_bytes());
    }
    write_file(path, &out)
}

pub fn read_score_map(path: &Path) -> Result<ScoreMap> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    let (w, h) = read_header(&mut r, SCORE_MAGIC)?;
    let at = r.offset();
    let c = r.u32("class count")? as usize;
    if c < 2 {
        return Err(r.error(at, format!("class count {c} below 2")));
    }
    let scores = r.f64s(c * w * h, "scores")?;
    let mut coverage = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        coverage.push(r.u32("coverage")?);
    }
    r.finish()?;
    Ok(ScoreMap {
        width: w,
        height: h,
        num_classes: c,
        scores,
        coverage,
    })
}
