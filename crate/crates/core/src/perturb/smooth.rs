use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, SegMask};

/// Annotation smoothing parameters. `intensity` is the value painted on
/// class pixels before blurring; a pixel becomes a candidate for the class
/// when the blurred value exceeds `threshold * intensity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    /// Classes to smooth, processed in this order.
    pub classes: Vec<u16>,
    pub intensity: f64,
    pub sigma: f64,
    pub threshold: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            classes: Vec::new(),
            intensity: 10.0,
            sigma: 2.0,
            threshold: 0.5,
        }
    }
}

/// Normalized Gaussian truncated at radius `ceil(3 sigma)`; `[1.0]` for
/// `sigma <= 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = libm::ceil(3.0 * sigma) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution with zero padding.
fn blur(values: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let c = col as isize + k as isize - r;
                if c >= 0 && (c as usize) < w {
                    acc += kv * values[row * w + c as usize];
                }
            }
            tmp[row * w + col] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let rr = row as isize + k as isize - r;
                if rr >= 0 && (rr as usize) < h {
                    acc += kv * tmp[rr as usize * w + col];
                }
            }
            out[row * w + col] = acc;
        }
    }
    out
}

/// Blurs each configured class and lets it grow into neighbouring pixels,
/// but only where the class is not behind what it would cover: a candidate
/// pixel is overwritten when the nearest pixel of the class has depth less
/// than or equal to the candidate's depth.
pub fn smooth_annotation(mask: &SegMask, depth: Option<&DepthMap>, cfg: &SmoothConfig) -> Result<SegMask> {
    if cfg.classes.is_empty() {
        return Ok(mask.clone());
    }
    let depth = depth.ok_or(Error::MissingDepth)?;
    if depth.dims() != mask.dims() {
        return Err(Error::dims(mask.dims(), depth.dims()));
    }
    if cfg.intensity.is_nan() || cfg.intensity <= 0.0 {
        return Err(Error::InvalidParameter(
            "smoothing intensity must be positive".to_string(),
        ));
    }
    let (w, h) = mask.dims();
    let kernel = gaussian_kernel(cfg.sigma);
    let radius = (kernel.len() / 2) as isize;
    let level = cfg.threshold * cfg.intensity;
    let mut current = mask.clone();

    for &class in &cfg.classes {
        let snapshot: Vec<bool> = current.data().iter().map(|&v| v == class).collect();
        let binary: Vec<f64> = snapshot.iter().map(|&b| if b { cfg.intensity } else { 0.0 }).collect();
        let smoothed = blur(&binary, w, h, &kernel);
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                if snapshot[i] || smoothed[i] <= level {
                    continue;
                }
                if let Some(src) = nearest_in_window(&snapshot, w, h, row, col, radius) {
                    if depth.data()[src] <= depth.data()[i] {
                        current.set(row, col, class);
                    }
                }
            }
        }
    }
    Ok(current)
}

/// Index of the nearest `true` pixel within a square window; ties resolved
/// to the first in raster order.
fn nearest_in_window(set: &[bool], w: usize, h: usize, row: usize, col: usize, radius: isize) -> Option<usize> {
    let mut best: Option<(isize, usize)> = None;
    for dr in -radius..=radius {
        let r = row as isize + dr;
        if r < 0 || r as usize >= h {
            continue;
        }
        for dc in -radius..=radius {
            let c = col as isize + dc;
            if c < 0 || c as usize >= w {
                continue;
            }
            let i = r as usize * w + c as usize;
            if !set[i] {
                continue;
            }
            let d = dr * dr + dc * dc;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(classes: Vec<u16>, sigma: f64) -> SmoothConfig {
        SmoothConfig {
            classes,
            sigma,
            ..Default::default()
        }
    }

    /// Two 5x5 class-2 blocks separated by a one-pixel road column.
    fn notch_scene() -> SegMask {
        SegMask::from_fn(15, 9, 2, |r, c| {
            if (2..7).contains(&r) && ((2..7).contains(&c) || (8..13).contains(&c)) {
                2
            } else {
                1
            }
        })
        .unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let m = notch_scene();
        let d = DepthMap::uniform(15, 9, 1.0);
        assert_eq!(smooth_annotation(&m, Some(&d), &cfg(vec![2], 0.0)).unwrap(), m);
        assert_eq!(smooth_annotation(&m, Some(&d), &cfg(vec![2], 1e-3)).unwrap(), m);
    }

    #[test]
    fn kernel_is_normalized() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_between_blocks_closes_at_equal_depth() {
        let m = notch_scene();
        let d = DepthMap::uniform(15, 9, 5.0);
        let out = smooth_annotation(&m, Some(&d), &cfg(vec![2], 1.0)).unwrap();
        for r in 3..6 {
            assert_eq!(out.get(r, 7), 2, "row {}", r);
        }
    }

    #[test]
    fn object_behind_everything_does_not_grow() {
        let m = notch_scene();
        let d = DepthMap::new(
            15,
            9,
            m.data().iter().map(|&v| if v == 2 { 50.0 } else { 10.0 }).collect(),
        )
        .unwrap();
        let out = smooth_annotation(&m, Some(&d), &cfg(vec![2], 1.0)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn missing_depth() {
        let m = notch_scene();
        assert_eq!(
            smooth_annotation(&m, None, &cfg(vec![2], 1.0)),
            Err(Error::MissingDepth)
        );
        assert_eq!(smooth_annotation(&m, None, &cfg(vec![], 1.0)).unwrap(), m);
    }
}
