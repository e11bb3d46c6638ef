//! Logistic meta classifier over component features.
//!
//! The classifier estimates the probability that a predicted component is a
//! true positive of the segmentation network. It is fit by full-batch
//! gradient descent on standardized features with an L2 penalty on the
//! feature weights (the bias is not penalized). Training is single-threaded
//! and bit-deterministic for a fixed configuration.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::component::ComponentMap;
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::matching::MatchResult;
use crate::raster::ProbMap;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Where a dataset row came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub image: String,
    pub component_id: u32,
}

/// One row per predicted component: features, TP target, provenance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetaDataset {
    pub rows: Vec<FeatureVector>,
    /// `true` when the component is not FP.
    pub targets: Vec<bool>,
    pub provenance: Vec<Provenance>,
    /// Matching threshold shared by every row, `None` while empty.
    pub tau: Option<f64>,
}

impl MetaDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_names() -> &'static [&'static str] {
        &FEATURE_NAMES
    }

    pub fn push(&mut self, row: FeatureVector, target: bool, provenance: Provenance) {
        self.rows.push(row);
        self.targets.push(target);
        self.provenance.push(provenance);
    }

    /// Appends all rows of `other`; both must share one tau.
    pub fn extend(&mut self, other: MetaDataset) -> Result<()> {
        self.merge_tau(other.tau)?;
        self.rows.extend(other.rows);
        self.targets.extend(other.targets);
        self.provenance.extend(other.provenance);
        Ok(())
    }

    /// Rows whose image satisfies the predicate.
    pub fn filter_images(&self, mut keep: impl FnMut(&str) -> bool) -> MetaDataset {
        let mut out = MetaDataset {
            tau: self.tau,
            ..Default::default()
        };
        for i in 0..self.len() {
            if keep(&self.provenance[i].image) {
                out.push(self.rows[i].clone(), self.targets[i], self.provenance[i].clone());
            }
        }
        out
    }

    fn merge_tau(&mut self, tau: Option<f64>) -> Result<()> {
        match (self.tau, tau) {
            (Some(a), Some(b)) if a != b => Err(Error::InconsistentTau(a, b)),
            (None, t) => {
                self.tau = t;
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Inputs of one image for [`build_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct ImageSample<'a> {
    pub image: &'a str,
    pub probs: &'a ProbMap,
    pub pred: &'a ComponentMap,
    pub matches: &'a MatchResult,
}

/// Featurizes every predicted component of every image.
pub fn build_dataset(images: &[ImageSample<'_>]) -> Result<MetaDataset> {
    let mut data = MetaDataset::default();
    for img in images {
        data.merge_tau(Some(img.matches.tau))?;
        for k in img.pred.components() {
            let status = img
                .matches
                .pred_match(k.id)
                .ok_or(Error::InvalidParameter(alloc::format!(
                    "no match record for component {} of image {}",
                    k.id,
                    img.image
                )))?;
            data.push(
                featurize(k, img.probs, img.pred)?,
                !status.is_false_positive(),
                Provenance {
                    image: img.image.to_string(),
                    component_id: k.id,
                },
            );
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Initial step size; epoch `t` (1-based) uses `learning_rate / sqrt(t)`,
    /// halved (for good) whenever a step would increase the objective.
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Weight rows by inverse class frequency.
    pub balance_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1.0,
            l2: 1e-3,
            seed: 42,
            balance_classes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    /// One weight per feature followed by the bias.
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub config: TrainConfig,
}

impl MetaModel {
    /// Model with all weights zero; scores every row 0.5.
    pub fn zero() -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: vec![0.0; NUM_FEATURES + 1],
            means: vec![0.0; NUM_FEATURES],
            stds: vec![1.0; NUM_FEATURES],
            config: TrainConfig::default(),
        }
    }

    pub fn num_features(&self) -> usize {
        self.means.len()
    }

    fn logit(&self, values: &[f64]) -> f64 {
        let d = self.num_features();
        let mut z = self.weights[d];
        for (j, v) in values.iter().enumerate().take(d) {
            z += self.weights[j] * (v - self.means[j]) / self.stds[j];
        }
        z
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Estimated probability that the component behind `row` is a true positive.
pub fn score(model: &MetaModel, row: &FeatureVector) -> Result<f64> {
    score_values(model, row.values())
}

pub fn score_values(model: &MetaModel, values: &[f64]) -> Result<f64> {
    if values.len() != model.num_features() || model.weights.len() != values.len() + 1 {
        return Err(Error::SchemaMismatch {
            expected: model.num_features(),
            got: values.len(),
        });
    }
    Ok(sigmoid(model.logit(values)))
}

/// Weighted mean cross-entropy plus `l2 / 2 * |w|^2` over the feature
/// weights, and its gradient. `weights` holds the bias last; rows of `x`
/// are already standardized.
pub fn objective(
    weights: &[f64],
    x: &[Vec<f64>],
    targets: &[bool],
    sample_weights: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = weights.len() - 1;
    let total: f64 = sample_weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for ((row, &y), &s) in x.iter().zip(targets).zip(sample_weights) {
        let mut z = weights[d];
        for j in 0..d {
            z += weights[j] * row[j];
        }
        let y = if y { 1.0 } else { 0.0 };
        loss += s * (softplus(z) - y * z);
        let r = s * (sigmoid(z) - y);
        for j in 0..d {
            grad[j] += r * row[j];
        }
        grad[d] += r;
    }
    loss /= total;
    for (j, g) in grad.iter_mut().enumerate() {
        *g /= total;
        if j < d {
            *g += l2 * weights[j];
        }
    }
    let penalty: f64 = weights[..d].iter().map(|w| w * w).sum::<f64>();
    (loss + 0.5 * l2 * penalty, grad)
}

/// Standardization constants; zero-variance features get std 1 and are
/// reported as degenerate.
fn standardization(data: &MetaDataset) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let d = NUM_FEATURES;
    let n = data.len() as f64;
    let mut means = vec![0.0; d];
    for row in &data.rows {
        for (m, v) in means.iter_mut().zip(row.values()) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for row in &data.rows {
        for j in 0..d {
            let dv = row.values()[j] - means[j];
            stds[j] += dv * dv;
        }
    }
    let mut degenerate = vec![false; d];
    for j in 0..d {
        stds[j] = libm::sqrt(stds[j] / n);
        if stds[j].is_nan() || stds[j] <= 1e-12 {
            stds[j] = 1.0;
            degenerate[j] = true;
        }
    }
    (means, stds, degenerate)
}

fn validate(data: &MetaDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (row, fv) in data.rows.iter().enumerate() {
        if fv.values().len() != NUM_FEATURES {
            return Err(Error::SchemaMismatch {
                expected: NUM_FEATURES,
                got: fv.values().len(),
            });
        }
        if let Some(column) = fv.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row, column });
        }
    }
    let positives = data.targets.iter().filter(|&&t| t).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Fits the meta classifier. See [`train_meta_with_history`].
pub fn train_meta(data: &MetaDataset, config: &TrainConfig) -> Result<MetaModel> {
    train_meta_with_history(data, config).map(|(m, _)| m)
}

/// Fits the meta classifier and returns the objective before every epoch
/// plus the final value (`epochs + 1` entries).
pub fn train_meta_with_history(data: &MetaDataset, config: &TrainConfig) -> Result<(MetaModel, Vec<f64>)> {
    validate(data)?;
    if !(config.learning_rate > 0.0 && config.l2 >= 0.0) {
        return Err(Error::InvalidParameter(
            "learning rate must be positive and l2 non-negative".to_string(),
        ));
    }
    let d = NUM_FEATURES;
    let (means, stds, degenerate) = standardization(data);
    let x: Vec<Vec<f64>> = data
        .rows
        .iter()
        .map(|r| {
            r.values()
                .iter()
                .enumerate()
                .map(|(j, v)| if degenerate[j] { 0.0 } else { (v - means[j]) / stds[j] })
                .collect()
        })
        .collect();

    let n = data.len() as f64;
    let positives = data.targets.iter().filter(|&&t| t).count() as f64;
    let sample_weights: Vec<f64> = data
        .targets
        .iter()
        .map(|&t| match (config.balance_classes, t) {
            (false, _) => 1.0,
            (true, true) => n / (2.0 * positives),
            (true, false) => n / (2.0 * (n - positives)),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: Vec<f64> = (0..=d)
        .map(|j| {
            if j < d && degenerate[j] {
                0.0
            } else {
                // small symmetric jitter in [-0.01, 0.01)
                ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.02
            }
        })
        .collect();

    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut current = objective(&weights, &x, &data.targets, &sample_weights, config.l2);
    let mut scale = 1.0;
    for epoch in 1..=config.epochs {
        history.push(current.0);
        let base = config.learning_rate / libm::sqrt(epoch as f64);
        loop {
            let lr = scale * base;
            let mut next = weights.clone();
            for j in 0..=d {
                if j < d && degenerate[j] {
                    continue;
                }
                next[j] -= lr * current.1[j];
            }
            let eval = objective(&next, &x, &data.targets, &sample_weights, config.l2);
            if eval.0 <= current.0 || scale < 1e-12 {
                weights = next;
                current = eval;
                break;
            }
            scale *= 0.5;
        }
    }
    history.push(current.0);

    Ok((
        MetaModel {
            schema_version: MODEL_SCHEMA_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights,
            means,
            stds,
            config: config.clone(),
        },
        history,
    ))
}

/// One equal-width score bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// `None` for empty bins.
    pub mean_score: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

/// Reliability table of arbitrary scores against binary targets.
pub fn reliability_from_scores(scores: &[f64], targets: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if bins < 2 {
        return Err(Error::InvalidParameter("reliability needs at least 2 bins".to_string()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scores.len() != targets.len() {
        return Err(Error::InvalidParameter(
            "scores and targets differ in length".to_string(),
        ));
    }
    let mut sums = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&s, &t) in scores.iter().zip(targets) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        sums[b] += s;
        counts[b] += 1;
        hits[b] += t as usize;
    }
    Ok((0..bins)
        .map(|b| {
            let count = counts[b];
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                mean_score: (count > 0).then(|| sums[b] / count as f64),
                accuracy: (count > 0).then(|| hits[b] as f64 / count as f64),
                count,
            }
        })
        .collect())
}

/// Reliability table of a model on a dataset.
pub fn reliability(model: &MetaModel, data: &MetaDataset, bins: usize) -> Result<Vec<ReliabilityBin>> {
    let scores = data.rows.iter().map(|r| score(model, r)).collect::<Result<Vec<_>>>()?;
    reliability_from_scores(&scores, &data.targets, bins)
}
