//! Integer class rasters.

use crate::error::{Error, Result};

/// Label used for pixels that carry no class (outside the scene, rejected).
pub const DEFAULT_IGNORE: u8 = 255;

/// A 2-D raster of class ids, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    values: Vec<u8>,
    num_classes: usize,
    ignore_label: Option<u8>,
}

impl LabelMap {
    /// Validates that every non-ignored value is below `num_classes`.
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<u8>,
        num_classes: usize,
        ignore_label: Option<u8>,
    ) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape("LabelMap::new", "numel", width * height, values.len()));
        }
        if let Some(bad) = values
            .iter()
            .find(|&&v| Some(v) != ignore_label && v as usize >= num_classes)
        {
            return Err(Error::Data(format!(
                "label {bad} is not below the class count {num_classes}"
            )));
        }
        Ok(LabelMap {
            width,
            height,
            values,
            num_classes,
            ignore_label,
        })
    }

    pub fn filled(width: usize, height: usize, class: u8, num_classes: usize) -> Result<Self> {
        Self::new(width, height, vec![class; width * height], num_classes, Some(DEFAULT_IGNORE))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_label(&self) -> Option<u8> {
        self.ignore_label
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_ignored(&self, v: u8) -> bool {
        Some(v) == self.ignore_label
    }

    /// Pixel count per class (ignored pixels excluded).
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &v in &self.values {
            if !self.is_ignored(v) {
                h[v as usize] += 1;
            }
        }
        h
    }

    /// Sub-window `[x0, x0 + w) × [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Data(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} label map",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(LabelMap { width: w, height: h, values, ..self.clone() })
    }
}
