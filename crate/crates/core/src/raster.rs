//! Per-pixel rasters: class-index masks, probability tensors and depth maps.
//!
//! All rasters are row-major. Class index 0 is reserved for void/unlabeled in
//! ground-truth masks; predicted masks built by [`argmax_mask`] use indices
//! `1..=c` so the two share one class numbering.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index reserved for void / unlabeled pixels.
pub const VOID: u16 = 0;

/// Tolerance for the per-pixel probability simplex check.
pub const PROB_SUM_TOLERANCE: f32 = 1e-4;

/// Per-pixel class-index raster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMask {
    width: usize,
    height: usize,
    classes: u16,
    data: Vec<u16>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, classes: u16, data: Vec<u16>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::InvalidRaster(format!(
                "{}x{} mask with {} values",
                width,
                height,
                data.len()
            )));
        }
        if let Some((i, &v)) = data.iter().enumerate().find(|(_, &v)| v > classes) {
            return Err(Error::InvalidRaster(format!(
                "pixel {} has class {} > {}",
                i, v, classes
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    /// All-void mask.
    pub fn void(width: usize, height: usize, classes: u16) -> Self {
        Self {
            width,
            height,
            classes,
            data: vec![VOID; width * height],
        }
    }

    /// Builds a mask from a closure over `(row, col)`.
    pub fn from_fn(width: usize, height: usize, classes: u16, mut f: impl FnMut(usize, usize) -> u16) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, classes, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn classes(&self) -> u16 {
        self.classes
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    /// Sets a pixel; the value must not exceed the class count.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, class: u16) {
        debug_assert!(class <= self.classes);
        self.data[row * self.width + col] = class;
    }

    pub fn check_same_dims(&self, other: &SegMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Per-pixel class probability tensor with layout `(height, width, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    classes: u16,
    data: Vec<f32>,
}

impl ProbMap {
    /// Validating constructor: every entry in `[0, 1]` and every per-pixel
    /// vector summing to one within [`PROB_SUM_TOLERANCE`].
    pub fn new(width: usize, height: usize, classes: u16, data: Vec<f32>) -> Result<Self> {
        let map = Self::new_unchecked(width, height, classes, data)?;
        map.validate()?;
        Ok(map)
    }

    /// Only checks the payload length.
    pub fn new_unchecked(width: usize, height: usize, classes: u16, data: Vec<f32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidRaster("probability map with zero classes".into()));
        }
        if width * height * classes as usize != data.len() {
            return Err(Error::InvalidRaster(format!(
                "{}x{}x{} probability map with {} values",
                height,
                width,
                classes,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (i, px) in self.data.chunks_exact(self.classes as usize).enumerate() {
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidRaster(format!(
                    "pixel {} has a probability outside [0, 1]",
                    i
                )));
            }
            let sum: f32 = px.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidRaster(format!(
                    "pixel {} probabilities sum to {}",
                    i, sum
                )));
            }
        }
        Ok(())
    }

    /// One-hot encoding of a mask. Class `k >= 1` maps to channel `k - 1`;
    /// void pixels get a uniform vector.
    pub fn one_hot(mask: &SegMask) -> Self {
        let c = mask.classes().max(1) as usize;
        let mut data = vec![0.0f32; mask.data().len() * c];
        for (i, &v) in mask.data().iter().enumerate() {
            let px = &mut data[i * c..(i + 1) * c];
            if v == VOID {
                px.iter_mut().for_each(|p| *p = 1.0 / c as f32);
            } else {
                px[v as usize - 1] = 1.0;
            }
        }
        Self {
            width: mask.width(),
            height: mask.height(),
            classes: c as u16,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn classes(&self) -> u16 {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Probability vector of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let c = self.classes as usize;
        let start = (row * self.width + col) * c;
        &self.data[start..start + c]
    }
}

/// Per-pixel depth, larger values are farther from the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width * height != data.len() {
            return Err(Error::InvalidRaster(format!(
                "{}x{} depth map with {} values",
                width,
                height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn uniform(width: usize, height: usize, depth: f32) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Index of the largest entry, ties resolved to the lowest index.
#[inline]
pub fn argmax(px: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in px.iter().enumerate().skip(1) {
        if p > px[best] {
            best = i;
        }
    }
    best
}

/// Predicted mask: per pixel the most probable class, shifted by one so that
/// channel `i` becomes class index `i + 1`.
pub fn argmax_mask(probs: &ProbMap) -> SegMask {
    let c = probs.classes() as usize;
    let data = probs.data().chunks_exact(c).map(|px| argmax(px) as u16 + 1).collect();
    SegMask {
        width: probs.width(),
        height: probs.height(),
        classes: probs.classes(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_second_class() {
        let p = ProbMap::new(1, 1, 3, vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(argmax_mask(&p).data(), &[2]);
    }

    #[test]
    fn uniform_vector_ties_to_lowest() {
        let third = 1.0 / 3.0;
        let p = ProbMap::new(1, 1, 3, vec![third, third, third]).unwrap();
        assert_eq!(argmax_mask(&p).data(), &[1]);
    }

    #[test]
    fn one_hot_identity() {
        let mask = SegMask::new(2, 2, 4, vec![1, 2, 3, 4]).unwrap();
        let p = ProbMap::one_hot(&mask);
        assert!(p.validate().is_ok());
        assert_eq!(argmax_mask(&p), mask);
    }

    #[test]
    fn rejects_bad_rasters() {
        assert!(SegMask::new(2, 2, 1, vec![0, 1, 2, 0]).is_err());
        assert!(SegMask::new(2, 2, 3, vec![0, 1]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![1.5, -0.5]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.5]).is_err());
    }
}
