//! Label-error candidates.
//!
//! A predicted component becomes a candidate when it is a false positive of
//! the segmentation network (`pi <= tau`) and does not touch any ground-truth
//! pixel of its own class. Candidates are ranked by the meta classifier's
//! estimate that the prediction is correct: a confident prediction that the
//! annotation contradicts points at a missing or flipped label.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::component::{Component, ComponentMap};
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureVector};
use crate::matching::{assign, MatchResult};
use crate::meta::{score, MetaModel};
use crate::pixels::BBox;
use crate::raster::ProbMap;

/// Padding around a candidate's bounding box for review crops.
pub const DEFAULT_CROP_PADDING: u32 = 32;

/// Minimum size (exclusive) of components reviewed by the first baseline.
pub const BASELINE1_MIN_SIZE: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposeConfig {
    pub crop_padding: u32,
    /// Candidates smaller than this are discarded.
    pub min_size: usize,
}

impl Default for ProposeConfig {
    fn default() -> Self {
        Self {
            crop_padding: DEFAULT_CROP_PADDING,
            min_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub image: String,
    pub component: Component,
    pub score: f64,
    pub class_id: u16,
    pub size: usize,
    pub crop_bbox: BBox,
}

impl Candidate {
    pub fn new(image: &str, component: Component, score: f64, crop_padding: u32) -> Self {
        let (w, h) = component.dims;
        Self {
            image: image.to_string(),
            class_id: component.class_id,
            size: component.size(),
            crop_bbox: component.bbox.padded(crop_padding, w, h),
            component,
            score,
        }
    }

    pub fn component_id(&self) -> u32 {
        self.component.id
    }
}

/// Score descending, then image id and component id ascending.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image.cmp(&b.image))
        .then_with(|| a.component.id.cmp(&b.component.id))
}

pub fn sort_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(rank_order);
}

/// Predicted components that are FP and have no same-class ground-truth
/// pixel, in component-id order.
pub fn unmatched_false_positives<'a>(
    pred: &'a ComponentMap,
    matches: &'a MatchResult,
    min_size: usize,
) -> impl Iterator<Item = &'a Component> + 'a {
    pred.components().iter().filter(move |k| {
        k.size() >= min_size
            && matches
                .pred_match(k.id)
                .is_some_and(|m| m.is_false_positive() && m.matched_gt_ids.is_empty())
    })
}

/// Scored candidates of one image from precomputed matches.
pub fn propose_matched(
    image: &str,
    pred: &ComponentMap,
    probs: &ProbMap,
    matches: &MatchResult,
    model: &MetaModel,
    cfg: &ProposeConfig,
) -> Result<Vec<Candidate>> {
    if probs.dims() != pred.dims() {
        return Err(Error::dims(probs.dims(), pred.dims()));
    }
    let mut out = unmatched_false_positives(pred, matches, cfg.min_size)
        .map(|k| {
            let s = score(model, &featurize(k, probs, pred)?)?;
            Ok(Candidate::new(image, k.clone(), s, cfg.crop_padding))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_candidates(&mut out);
    Ok(out)
}

/// Same as [`propose_matched`] with feature rows computed beforehand, one per
/// predicted component in id order.
pub fn propose_featurized(
    image: &str,
    pred: &ComponentMap,
    features: &[FeatureVector],
    matches: &MatchResult,
    model: &MetaModel,
    cfg: &ProposeConfig,
) -> Result<Vec<Candidate>> {
    if features.len() != pred.len() {
        return Err(Error::InvalidParameter(
            "one feature row per predicted component expected".to_string(),
        ));
    }
    let mut out = unmatched_false_positives(pred, matches, cfg.min_size)
        .map(|k| {
            let s = score(model, &features[k.id as usize - 1])?;
            Ok(Candidate::new(image, k.clone(), s, cfg.crop_padding))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_candidates(&mut out);
    Ok(out)
}

/// Matches one image at `tau` and returns its scored candidates, sorted.
pub fn propose(
    image: &str,
    gt: &ComponentMap,
    pred: &ComponentMap,
    probs: &ProbMap,
    model: &MetaModel,
    tau: f64,
    cfg: &ProposeConfig,
) -> Result<Vec<Candidate>> {
    let matches = assign(gt, pred, tau)?;
    propose_matched(image, pred, probs, &matches, model, cfg)
}

/// Candidates with score at least `t`, order preserved.
pub fn select(candidates: &[Candidate], t: f64) -> Vec<Candidate> {
    candidates.iter().filter(|c| c.score >= t).cloned().collect()
}

/// Review every ground-truth component larger than `min_size` pixels.
pub fn baseline1(image: &str, gt: &ComponentMap, min_size: usize, crop_padding: u32) -> Vec<Candidate> {
    gt.components()
        .iter()
        .filter(|k| k.size() > min_size)
        .map(|k| Candidate::new(image, k.clone(), 1.0, crop_padding))
        .collect()
}

/// Review every unmatched false-positive prediction, unscored.
pub fn baseline2_matched(
    image: &str,
    pred: &ComponentMap,
    matches: &MatchResult,
    cfg: &ProposeConfig,
) -> Vec<Candidate> {
    unmatched_false_positives(pred, matches, cfg.min_size)
        .map(|k| Candidate::new(image, k.clone(), 1.0, cfg.crop_padding))
        .collect()
}

pub fn baseline2(
    image: &str,
    gt: &ComponentMap,
    pred: &ComponentMap,
    tau: f64,
    cfg: &ProposeConfig,
) -> Result<Vec<Candidate>> {
    let matches = assign(gt, pred, tau)?;
    Ok(baseline2_matched(image, pred, &matches, cfg))
}
