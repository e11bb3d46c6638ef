//! Hand-crafted features of a predicted component.
//!
//! Geometry (size, boundary, interior), softmax dispersion pooled over the
//! interior and the boundary, centroid and predicted class. A pixel is on the
//! boundary when one of its 8 neighbours lies outside the component; pixels
//! outside the raster count as outside.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::component::{Component, ComponentMap};
use crate::error::{Error, Result};
use crate::raster::ProbMap;

/// Column names of the feature schema, in order.
pub const FEATURE_NAMES: [&str; 18] = [
    "size",
    "boundary_size",
    "interior_size",
    "interior_fraction",
    "entropy_mean_interior",
    "entropy_var_interior",
    "entropy_mean_boundary",
    "entropy_var_boundary",
    "margin_mean_interior",
    "margin_var_interior",
    "margin_mean_boundary",
    "margin_var_boundary",
    "entropy_mean",
    "margin_mean",
    "max_prob_mean",
    "centroid_row",
    "centroid_col",
    "class_id",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

/// Index of a named feature in [`FEATURE_NAMES`].
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != NUM_FEATURES {
            return Err(Error::SchemaMismatch {
                expected: NUM_FEATURES,
                got: values.len(),
            });
        }
        if let Some(column) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row: 0, column });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn var(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0)
    }
}

/// Normalized entropy `H / ln c`, top-1 minus top-2 margin, and max probability.
pub fn pixel_uncertainty(px: &[f32]) -> (f64, f64, f64) {
    let c = px.len();
    let mut entropy = 0.0;
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in px {
        let p = p as f64;
        if p > 0.0 {
            entropy -= p * libm::log(p);
        }
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    let norm = if c > 1 { entropy / libm::log(c as f64) } else { 0.0 };
    let margin = if c > 1 { first - second } else { first };
    (norm.clamp(0.0, 1.0), margin.clamp(0.0, 1.0), first)
}

/// Feature vector of a predicted component `k_hat` of `pred`.
pub fn featurize(k_hat: &Component, probs: &ProbMap, pred: &ComponentMap) -> Result<FeatureVector> {
    if k_hat.size() == 0 {
        return Err(Error::EmptyComponent);
    }
    if probs.dims() != pred.dims() {
        return Err(Error::dims(probs.dims(), pred.dims()));
    }
    if k_hat.dims != pred.dims() {
        return Err(Error::dims(k_hat.dims, pred.dims()));
    }
    let (w, h) = pred.dims();
    let inside = |r: i64, c: i64| {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && pred.label_at(r as usize, c as usize) == k_hat.id
    };

    let (mut ent_in, mut ent_bd, mut mar_in, mut mar_bd) = Default::default();
    let (mut ent_all, mut mar_all, mut max_all) = (0.0, 0.0, 0.0);
    let (mut row_sum, mut col_sum) = (0.0, 0.0);
    let mut boundary = 0usize;
    for (r, c) in k_hat.pixels.iter() {
        let (ri, ci) = (r as i64, c as i64);
        let on_boundary = (-1..=1)
            .flat_map(|dr| (-1..=1).map(move |dc| (dr, dc)))
            .any(|(dr, dc)| !inside(ri + dr, ci + dc));
        let (e, m, p) = pixel_uncertainty(probs.pixel(r as usize, c as usize));
        let (ent, mar): (&mut Moments, &mut Moments) = if on_boundary {
            boundary += 1;
            (&mut ent_bd, &mut mar_bd)
        } else {
            (&mut ent_in, &mut mar_in)
        };
        ent.push(e);
        mar.push(m);
        ent_all += e;
        mar_all += m;
        max_all += p;
        row_sum += r as f64;
        col_sum += c as f64;
    }

    let n = k_hat.size() as f64;
    let interior = k_hat.size() - boundary;
    // thin components have no interior; reuse the boundary aggregates
    if interior == 0 {
        ent_in = ent_bd;
        mar_in = mar_bd;
    }
    let values = alloc::vec![
        n,
        boundary as f64,
        interior as f64,
        interior as f64 / n,
        ent_in.mean(),
        ent_in.var(),
        ent_bd.mean(),
        ent_bd.var(),
        mar_in.mean(),
        mar_in.var(),
        mar_bd.mean(),
        mar_bd.var(),
        ent_all / n,
        mar_all / n,
        max_all / n,
        row_sum / n / h as f64,
        col_sum / n / w as f64,
        k_hat.class_id as f64,
    ];
    FeatureVector::new(values)
}
