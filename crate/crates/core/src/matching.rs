//! Component-level matching between a ground-truth mask and a prediction.
//!
//! For a ground-truth component `k` let `pr(k)` be the union of same-class
//! predicted components intersecting `k`, and `A(k)` the pixels of the other
//! same-class ground-truth components. The adjusted IoU is
//!
//! ```text
//! siou(k) = |k ∩ pr(k)| / |(k ∪ pr(k)) \ A(k)|        (0 when pr(k) is empty)
//! ```
//!
//! For a predicted component `k̂` with `g(k̂)` the union of same-class
//! ground-truth components intersecting it, `pi(k̂) = |k̂ ∩ g(k̂)| / |k̂|`.
//! Ground-truth components with `siou > tau` are TP, the rest FN; predicted
//! components with `pi <= tau` are FP.
//!
//! Two routes are provided: a raster route over [`ComponentMap`] label
//! images ([`assign`], [`siou`], [`pi`]) and a pixel-set route over loose
//! component lists ([`match_components`]) used when no label raster exists.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::component::{Component, ComponentMap};
use crate::error::{Error, Result};
use crate::pixels::PixelSet;
use crate::raster::{SegMask, VOID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GtStatus {
    #[serde(rename = "TP_o")]
    TruePositive,
    #[serde(rename = "FN_o")]
    FalseNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredStatus {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP_o")]
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMatch {
    pub id: u32,
    pub class_id: u16,
    pub size: usize,
    pub siou: f64,
    pub status: GtStatus,
    pub matched_pred_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredMatch {
    pub id: u32,
    pub class_id: u16,
    pub size: usize,
    pub pi: f64,
    pub status: PredStatus,
    pub matched_gt_ids: Vec<u32>,
}

impl PredMatch {
    pub fn is_false_positive(&self) -> bool {
        self.status == PredStatus::FalsePositive
    }
}

/// Per-component match records for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tau: f64,
    pub gt: Vec<GtMatch>,
    pub pred: Vec<PredMatch>,
}

impl MatchResult {
    pub fn pred_match(&self, id: u32) -> Option<&PredMatch> {
        self.pred.iter().find(|p| p.id == id)
    }

    pub fn gt_match(&self, id: u32) -> Option<&GtMatch> {
        self.gt.iter().find(|g| g.id == id)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidParameter(alloc::format!(
            "tau must lie in [0, 1), got {}",
            tau
        )));
    }
    Ok(())
}

fn check_maps(gt: &ComponentMap, pred: &ComponentMap) -> Result<()> {
    if gt.dims() != pred.dims() {
        return Err(Error::dims(gt.dims(), pred.dims()));
    }
    Ok(())
}

fn gt_status(siou: f64, tau: f64) -> GtStatus {
    if siou > tau {
        GtStatus::TruePositive
    } else {
        GtStatus::FalseNegative
    }
}

fn pred_status(pi: f64, tau: f64) -> PredStatus {
    if pi <= tau {
        PredStatus::FalsePositive
    } else {
        PredStatus::TruePositive
    }
}

/// Class of the ground-truth component covering a pixel, if any.
#[inline]
fn gt_class_at(gt: &ComponentMap, idx: usize) -> Option<(u32, u16)> {
    let label = gt.labels()[idx];
    if label == 0 {
        return None;
    }
    gt.get(label).map(|c| (label, c.class_id))
}

/// Number of pixels of `k_hat` covered by same-class ground-truth components,
/// plus the ids of those components.
fn covered_by_gt(k_hat: &Component, gt: &ComponentMap) -> (usize, Vec<u32>) {
    let w = gt.dims().0;
    let mut covered = 0;
    let mut ids = Vec::new();
    for (r, c) in k_hat.pixels.iter() {
        if let Some((label, class)) = gt_class_at(gt, r as usize * w + c as usize) {
            if class == k_hat.class_id {
                covered += 1;
                ids.push(label);
            }
        }
    }
    ids.sort_unstable();
    ids.dedup();
    (covered, ids)
}

/// Same-class predicted components intersecting `k`, and `|k ∩ pr(k)|`.
fn overlapping_preds(k: &Component, pred: &ComponentMap) -> (usize, Vec<u32>) {
    let w = pred.dims().0;
    let mut inter = 0;
    let mut ids = Vec::new();
    for (r, c) in k.pixels.iter() {
        let label = pred.labels()[r as usize * w + c as usize];
        if label == 0 {
            continue;
        }
        if pred.get(label).map(|p| p.class_id) == Some(k.class_id) {
            inter += 1;
            ids.push(label);
        }
    }
    ids.sort_unstable();
    ids.dedup();
    (inter, ids)
}

/// `|(k ∪ pr(k)) \ A(k)|` expressed through per-prediction coverage counts:
/// `|k| + |pr(k)| - Σ_{l ∈ pr(k)} |l ∩ same-class GT|`.
fn siou_from_parts(k_size: usize, inter: usize, pr: &[(usize, usize)]) -> f64 {
    if pr.is_empty() {
        return 0.0;
    }
    let pr_size: usize = pr.iter().map(|p| p.0).sum();
    let covered: usize = pr.iter().map(|p| p.1).sum();
    let denom = k_size + pr_size - covered;
    inter as f64 / denom as f64
}

/// Adjusted IoU of a ground-truth component.
pub fn siou(k: &Component, gt: &ComponentMap, pred: &ComponentMap) -> Result<f64> {
    check_maps(gt, pred)?;
    if k.dims != gt.dims() {
        return Err(Error::dims(k.dims, gt.dims()));
    }
    let (inter, ids) = overlapping_preds(k, pred);
    let parts: Vec<(usize, usize)> = ids
        .iter()
        .filter_map(|&id| pred.get(id))
        .map(|l| (l.size(), covered_by_gt(l, gt).0))
        .collect();
    Ok(siou_from_parts(k.size(), inter, &parts))
}

/// Fraction of a predicted component covered by same-class ground truth.
pub fn pi(k_hat: &Component, gt: &ComponentMap) -> Result<f64> {
    if k_hat.dims != gt.dims() {
        return Err(Error::dims(k_hat.dims, gt.dims()));
    }
    if k_hat.size() == 0 {
        return Ok(0.0);
    }
    let (covered, _) = covered_by_gt(k_hat, gt);
    Ok(covered as f64 / k_hat.size() as f64)
}

/// Labels every ground-truth component TP/FN and every predicted component
/// TP/FP for one image.
pub fn assign(gt: &ComponentMap, pred: &ComponentMap, tau: f64) -> Result<MatchResult> {
    check_tau(tau)?;
    check_maps(gt, pred)?;

    let mut pred_cov = Vec::with_capacity(pred.len());
    let mut pred_records = Vec::with_capacity(pred.len());
    for l in pred.components() {
        let (covered, ids) = covered_by_gt(l, gt);
        let pi = covered as f64 / l.size() as f64;
        pred_cov.push(covered);
        pred_records.push(PredMatch {
            id: l.id,
            class_id: l.class_id,
            size: l.size(),
            pi,
            status: pred_status(pi, tau),
            matched_gt_ids: ids,
        });
    }

    let gt_records = gt
        .components()
        .iter()
        .map(|k| {
            let (inter, ids) = overlapping_preds(k, pred);
            let parts: Vec<(usize, usize)> = ids
                .iter()
                .map(|&id| (pred.components()[id as usize - 1].size(), pred_cov[id as usize - 1]))
                .collect();
            let siou = siou_from_parts(k.size(), inter, &parts);
            GtMatch {
                id: k.id,
                class_id: k.class_id,
                size: k.size(),
                siou,
                status: gt_status(siou, tau),
                matched_pred_ids: ids,
            }
        })
        .collect();

    Ok(MatchResult {
        tau,
        gt: gt_records,
        pred: pred_records,
    })
}

/// Pixel-set route: the same matching over loose component lists that need
/// not come from one label raster (e.g. a label-error registry against
/// selected candidates). Components of different images must not be mixed.
pub fn match_components(gt: &[&Component], pred: &[&Component], tau: f64) -> Result<MatchResult> {
    check_tau(tau)?;
    if let (Some(a), Some(b)) = (gt.first(), pred.first()) {
        if a.dims != b.dims {
            return Err(Error::dims(a.dims, b.dims));
        }
    }

    let overlaps = |a: &Component, b: &Component| {
        a.class_id == b.class_id && a.bbox.intersects(&b.bbox) && a.pixels.intersects(&b.pixels)
    };

    let gt_records = gt
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let hits: Vec<&Component> = pred.iter().copied().filter(|p| overlaps(k, p)).collect();
            let siou = if hits.is_empty() {
                0.0
            } else {
                let pr = PixelSet::union_all(hits.iter().map(|p| &p.pixels));
                let others = PixelSet::union_all(
                    gt.iter()
                        .enumerate()
                        .filter(|&(j, o)| j != i && o.class_id == k.class_id)
                        .map(|(_, o)| &o.pixels),
                );
                let inter = k.pixels.intersection_len(&pr);
                let denom = k.pixels.union(&pr).difference(&others).len();
                inter as f64 / denom as f64
            };
            let mut ids: Vec<u32> = hits.iter().map(|p| p.id).collect();
            ids.sort_unstable();
            GtMatch {
                id: k.id,
                class_id: k.class_id,
                size: k.size(),
                siou,
                status: gt_status(siou, tau),
                matched_pred_ids: ids,
            }
        })
        .collect();

    let pred_records = pred
        .iter()
        .map(|l| {
            let hits: Vec<&Component> = gt.iter().copied().filter(|g| overlaps(l, g)).collect();
            let covered = if hits.is_empty() {
                0
            } else {
                l.pixels
                    .intersection_len(&PixelSet::union_all(hits.iter().map(|g| &g.pixels)))
            };
            let pi = if l.size() == 0 {
                0.0
            } else {
                covered as f64 / l.size() as f64
            };
            let mut ids: Vec<u32> = hits.iter().map(|g| g.id).collect();
            ids.sort_unstable();
            PredMatch {
                id: l.id,
                class_id: l.class_id,
                size: l.size(),
                pi,
                status: pred_status(pi, tau),
                matched_gt_ids: ids,
            }
        })
        .collect();

    Ok(MatchResult {
        tau,
        gt: gt_records,
        pred: pred_records,
    })
}

/// Per-class pixel counters. Pixels whose ground truth is void are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelConfusion {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

impl PixelConfusion {
    /// Counters for class indices `0..=classes`.
    pub fn new(classes: u16) -> Self {
        let n = classes as usize + 1;
        Self {
            tp: vec![0; n],
            fp: vec![0; n],
            fn_: vec![0; n],
        }
    }

    pub fn classes(&self) -> u16 {
        (self.tp.len() - 1) as u16
    }

    pub fn add(&mut self, gt: &SegMask, pred: &SegMask) -> Result<()> {
        gt.check_same_dims(pred)?;
        if gt.classes() != pred.classes() || gt.classes() != self.classes() {
            return Err(Error::ClassCountMismatch(gt.classes(), pred.classes()));
        }
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g == VOID {
                continue;
            }
            if g == p {
                self.tp[g as usize] += 1;
            } else {
                self.fn_[g as usize] += 1;
                self.fp[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PixelConfusion) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&other.fn_) {
            *a += b;
        }
    }

    pub fn report(&self) -> MiouReport {
        let per_class_iou: Vec<Option<f64>> = (0..self.tp.len())
            .map(|c| {
                let denom = self.tp[c] + self.fp[c] + self.fn_[c];
                (denom > 0).then(|| self.tp[c] as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        MiouReport { per_class_iou, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// Indexed by class; `None` for classes absent from both masks.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean: f64,
}

/// Class-wise pixel IoU and its mean over the classes that occur.
pub fn miou(gt: &SegMask, pred: &SegMask) -> Result<MiouReport> {
    let mut conf = PixelConfusion::new(gt.classes());
    conf.add(gt, pred)?;
    Ok(conf.report())
}

/// Per-class counts of matched components, keyed by class id.
pub fn status_counts(result: &MatchResult) -> BTreeMap<u16, (usize, usize, usize)> {
    let mut out: BTreeMap<u16, (usize, usize, usize)> = BTreeMap::new();
    for g in &result.gt {
        let e = out.entry(g.class_id).or_default();
        match g.status {
            GtStatus::TruePositive => e.0 += 1,
            GtStatus::FalseNegative => e.1 += 1,
        }
    }
    for p in &result.pred {
        if p.is_false_positive() {
            out.entry(p.class_id).or_default().2 += 1;
        }
    }
    out
}
