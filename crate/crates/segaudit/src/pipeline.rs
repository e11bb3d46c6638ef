//! End-to-end detection run: match every image, train the meta classifier
//! on the train-meta images, score candidates on the search images and, when
//! the manifest names a registry, evaluate against it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segaudit_core::detect::{self, sort_candidates, Candidate};
use segaudit_core::evaluate::{Benchmark, ClassReport, DetectionOutcome, PrCurve, PrPoint};
use segaudit_core::features::{featurize, FeatureVector};
use segaudit_core::matching::{assign, PixelConfusion};
use segaudit_core::meta::{score, train_meta, MetaDataset, MetaModel, Provenance};
use segaudit_core::perturb::{keyed_uniform, ErrorRegistry};
use segaudit_core::Error as CoreError;
use segaudit_core::{argmax_mask, extract_components, Component, Origin};

use crate::config::{Config, SplitMode};
use crate::error::{Error, Result};
use crate::io::{to_json_bytes, write_file};
use crate::manifest::{LoadedManifest, Record, Split};
use crate::records::{read_registry, write_candidates, write_dataset, write_model};

/// Key of the split draw; component keys are ids, so this never collides.
const SPLIT_KEY: u64 = u64::MAX;

/// Everything the later stages need from one image; the rasters themselves
/// are dropped after matching.
#[derive(Debug, Clone)]
pub struct ImageResult {
    pub image: String,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<bool>,
    /// Unmatched FP components; the feature row of component `id` is `id - 1`.
    pub unmatched: Vec<Component>,
    /// Ground-truth components reviewed by the first baseline.
    pub baseline1: Vec<Candidate>,
    pub confusion: PixelConfusion,
}

pub fn process_image(lm: &LoadedManifest, record: &Record, cfg: &Config) -> Result<ImageResult> {
    let gt = lm.load_gt(record)?;
    let probs = lm.load_probs(record)?;
    if gt.dims() != probs.dims() {
        return Err(Error::format(
            lm.resolve(&record.probs),
            format!("probabilities are {:?} but the mask is {:?}", probs.dims(), gt.dims()),
        ));
    }
    let pred = argmax_mask(&probs);
    let gt_map = extract_components(&gt, true, Origin::GroundTruth);
    let pred_map = extract_components(&pred, true, Origin::Prediction);
    let matches = assign(&gt_map, &pred_map, cfg.tau)?;

    let mut features = Vec::with_capacity(pred_map.len());
    let mut targets = Vec::with_capacity(pred_map.len());
    for k in pred_map.components() {
        features.push(featurize(k, &probs, &pred_map)?);
        let m = matches.pred_match(k.id).expect("assign covers every component");
        targets.push(!m.is_false_positive());
    }
    let unmatched = detect::unmatched_false_positives(&pred_map, &matches, cfg.propose.min_size)
        .cloned()
        .collect();
    let baseline1 = detect::baseline1(&record.image, &gt_map, cfg.baseline.min_size, cfg.propose.crop_padding);
    let mut confusion = PixelConfusion::new(gt.classes());
    confusion.add(&gt, &pred)?;
    Ok(ImageResult {
        image: record.image.clone(),
        features,
        targets,
        unmatched,
        baseline1,
        confusion,
    })
}

/// Image indices used for training and for search in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub train: Vec<usize>,
    pub search: Vec<usize>,
}

/// Seeded fold of every image: images are ordered by a keyed uniform draw
/// and dealt round-robin.
pub fn assign_folds(images: &[&str], k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| {
        keyed_uniform(seed, images[a], SPLIT_KEY)
            .total_cmp(&keyed_uniform(seed, images[b], SPLIT_KEY))
            .then_with(|| images[a].cmp(images[b]))
    });
    let mut fold = vec![0; images.len()];
    for (rank, &i) in order.iter().enumerate() {
        fold[i] = rank % k;
    }
    fold
}

/// Seeded half split: fold 0 trains, fold 1 is searched.
pub fn seeded_splits(images: &[&str], seed: u64) -> Vec<Split> {
    assign_folds(images, 2, seed)
        .into_iter()
        .map(|f| if f == 0 { Split::TrainMeta } else { Split::Search })
        .collect()
}

pub fn plan_rounds(records: &[Record], mode: SplitMode, seed: u64) -> Result<Vec<Round>> {
    let images: Vec<&str> = records.iter().map(|r| r.image.as_str()).collect();
    let rounds = match mode {
        SplitMode::Half => {
            let splits: Vec<Split> = if records.iter().all(|r| r.split.is_some()) && !records.is_empty() {
                records.iter().map(|r| r.split.expect("checked")).collect()
            } else {
                seeded_splits(&images, seed)
            };
            let pick = |s: Split| (0..records.len()).filter(|&i| splits[i] == s).collect::<Vec<_>>();
            vec![Round {
                train: pick(Split::TrainMeta),
                search: pick(Split::Search),
            }]
        }
        SplitMode::KFold(k) => {
            let folds = assign_folds(&images, k, seed);
            (0..k)
                .map(|f| Round {
                    train: (0..records.len()).filter(|&i| folds[i] != f).collect(),
                    search: (0..records.len()).filter(|&i| folds[i] == f).collect(),
                })
                .collect()
        }
    };
    for (n, r) in rounds.iter().enumerate() {
        if r.train.is_empty() || r.search.is_empty() {
            return Err(Error::Manifest(format!(
                "round {n} has an empty train-meta or search split ({} / {} images)",
                r.train.len(),
                r.search.len()
            )));
        }
    }
    Ok(rounds)
}

fn dataset_of(results: &[ImageResult], indices: &[usize], tau: f64) -> MetaDataset {
    let mut data = MetaDataset {
        tau: Some(tau),
        ..Default::default()
    };
    for &i in indices {
        let r = &results[i];
        for (j, (row, &target)) in r.features.iter().zip(&r.targets).enumerate() {
            data.push(
                row.clone(),
                target,
                Provenance {
                    image: r.image.clone(),
                    component_id: j as u32 + 1,
                },
            );
        }
    }
    data
}

fn candidates_of(r: &ImageResult, model: &MetaModel, padding: u32) -> Result<Vec<Candidate>> {
    r.unmatched
        .iter()
        .map(|k| {
            let s = score(model, &r.features[k.id as usize - 1])?;
            Ok(Candidate::new(&r.image, k.clone(), s, padding))
        })
        .collect()
}

/// Trains the meta model; a training set without both targets gets a
/// constant model at the smoothed positive rate instead.
fn fit(data: &MetaDataset, cfg: &Config, round: usize) -> Result<MetaModel> {
    match train_meta(data, &cfg.train) {
        Err(CoreError::SingleClass | CoreError::EmptyDataset) => {
            let pos = data.targets.iter().filter(|&&t| t).count() as f64;
            let rate = (pos + 1.0) / (data.len() as f64 + 2.0);
            warn!(
                "round {round}: {} training rows with one target class, scoring by a constant",
                data.len()
            );
            let mut model = MetaModel::zero();
            model.config = cfg.train.clone();
            *model.weights.last_mut().expect("bias") = (rate / (1.0 - rate)).ln();
            Ok(model)
        }
        other => Ok(other?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub train_images: usize,
    pub search_images: usize,
    pub train_rows: usize,
    /// Share of training rows that are not FP.
    pub train_positive_rate: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub registry_entries: usize,
    /// Method at the F1-maximizing threshold.
    pub method: DetectionOutcome,
    pub ap: f64,
    pub pr_curve: Vec<PrPoint>,
    pub per_class: ClassReport,
    /// Every reviewable perturbed-GT component, scored by coverage.
    pub baseline1: DetectionOutcome,
    /// Baseline 1 restricted to registry entries above its size limit.
    pub baseline1_large: DetectionOutcome,
    pub baseline2: DetectionOutcome,
    pub baseline1_reviews: usize,
    pub baseline2_reviews: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub config: Config,
    pub images: usize,
    pub search_images: usize,
    pub rounds: Vec<RoundSummary>,
    /// Prediction mIoU over the search images.
    pub miou: f64,
    pub candidates: usize,
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: Report,
    pub candidates: Vec<Candidate>,
    pub dataset: MetaDataset,
    pub models: Vec<MetaModel>,
}

fn restrict(registry: &ErrorRegistry, keep: impl Fn(&segaudit_core::perturb::RegistryEntry) -> bool) -> ErrorRegistry {
    ErrorRegistry {
        entries: registry.entries.iter().filter(|e| keep(e)).cloned().collect(),
    }
}

pub fn evaluate_run(
    search: &BTreeSet<&str>,
    registry: &ErrorRegistry,
    candidates: &[Candidate],
    baseline1: &[Candidate],
    baseline2: &[Candidate],
    cfg: &Config,
) -> Result<Evaluation> {
    let registry = restrict(registry, |e| search.contains(e.image.as_str()));
    let bench = Benchmark::new(search.iter().copied(), &registry, cfg.tau)?;
    let (method, curve) = if candidates.is_empty() {
        (bench.evaluate(candidates, 1.0)?, PrCurve::from_outcomes(&[]))
    } else {
        let curve = bench.average_precision(candidates)?;
        (bench.best_f1(candidates)?, curve)
    };
    let large = restrict(&registry, |e| e.size() > cfg.baseline.min_size);
    let large_bench = Benchmark::new(search.iter().copied(), &large, cfg.tau)?;
    Ok(Evaluation {
        registry_entries: registry.len(),
        method,
        ap: curve.ap,
        pr_curve: curve.points,
        per_class: bench.per_class(candidates, method.t)?,
        baseline1: bench.coverage(baseline1)?,
        baseline1_large: large_bench.coverage(baseline1)?,
        baseline2: bench.evaluate(baseline2, 1.0)?,
        baseline1_reviews: baseline1.len(),
        baseline2_reviews: baseline2.len(),
    })
}

pub fn run(lm: &LoadedManifest, cfg: &Config) -> Result<PipelineOutput> {
    cfg.validate()?;
    let records = &lm.manifest.records;
    let rounds = plan_rounds(records, cfg.split_mode, cfg.seed)?;
    let registry = match &lm.manifest.registry {
        Some(p) => Some(read_registry(&lm.resolve(p))?),
        None => None,
    };

    info!("matching {} images at tau = {}", records.len(), cfg.tau);
    let results: Vec<ImageResult> = records
        .par_iter()
        .map(|r| process_image(lm, r, cfg))
        .collect::<Result<_>>()?;

    let mut candidates = Vec::new();
    let mut models = Vec::new();
    let mut summaries = Vec::new();
    let mut searched = BTreeSet::new();
    for (n, round) in rounds.iter().enumerate() {
        let data = dataset_of(&results, &round.train, cfg.tau);
        info!(
            "round {n}: training on {} rows from {} images",
            data.len(),
            round.train.len()
        );
        let model = fit(&data, cfg, n)?;
        let before = candidates.len();
        for &i in &round.search {
            candidates.extend(candidates_of(&results[i], &model, cfg.propose.crop_padding)?);
            searched.insert(i);
        }
        summaries.push(RoundSummary {
            train_images: round.train.len(),
            search_images: round.search.len(),
            train_rows: data.len(),
            train_positive_rate: data.targets.iter().filter(|&&t| t).count() as f64 / data.len().max(1) as f64,
            candidates: candidates.len() - before,
        });
        models.push(model);
    }
    sort_candidates(&mut candidates);

    let mut confusion = PixelConfusion::new(lm.manifest.num_classes());
    for &i in &searched {
        confusion.merge(&results[i].confusion);
    }
    let search_images: BTreeSet<&str> = searched.iter().map(|&i| results[i].image.as_str()).collect();

    let evaluation = match &registry {
        Some(reg) => {
            let mut b1 = Vec::new();
            let mut b2 = Vec::new();
            for &i in &searched {
                let r = &results[i];
                b1.extend(r.baseline1.iter().cloned());
                b2.extend(
                    r.unmatched
                        .iter()
                        .map(|k| Candidate::new(&r.image, k.clone(), 1.0, cfg.propose.crop_padding)),
                );
            }
            Some(evaluate_run(&search_images, reg, &candidates, &b1, &b2, cfg)?)
        }
        None => None,
    };

    let report = Report {
        dataset: lm.manifest.dataset.clone(),
        config: cfg.clone(),
        images: records.len(),
        search_images: searched.len(),
        rounds: summaries,
        miou: confusion.report().mean,
        candidates: candidates.len(),
        evaluation,
    };
    let all: Vec<usize> = (0..results.len()).collect();
    Ok(PipelineOutput {
        report,
        candidates,
        dataset: dataset_of(&results, &all, cfg.tau),
        models,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Plain-text tables: one row per method, then the per-class breakdown.
pub fn render_report(report: &Report, class_names: &BTreeMap<u16, String>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dataset {}  images {}  searched {}",
        report.dataset, report.images, report.search_images
    );
    let _ = writeln!(
        s,
        "tau {}  split {}  seed {}",
        report.config.tau, report.config.split_mode, report.config.seed
    );
    let _ = writeln!(s, "candidates {}", report.candidates);
    let Some(ev) = &report.evaluation else {
        let _ = writeln!(s, "mIoU {}  (no registry, nothing to evaluate)", pct(report.miou));
        return s;
    };
    let _ = writeln!(s, "registry entries {}", ev.registry_entries);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>7} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7} {:>7} {:>8}",
        "run", "mIoU", "TP", "FN", "FP", "AP", "Prec", "Rec", "F1", "t"
    );
    let rows = [
        ("method", &ev.method, Some(ev.ap)),
        ("baseline 1", &ev.baseline1, None),
        ("baseline 1*", &ev.baseline1_large, None),
        ("baseline 2", &ev.baseline2, None),
    ];
    for (name, o, ap) in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7} {:>7} {:>8}",
            name,
            pct(report.miou),
            o.tp,
            o.fn_,
            o.fp,
            ap.map_or("-".to_string(), pct),
            pct(o.precision),
            pct(o.recall),
            pct(o.f1),
            if name == "method" {
                format!("{:.4}", o.t)
            } else {
                "-".to_string()
            },
        );
    }
    let _ = writeln!(
        s,
        "(baseline 1* counts only registry entries above {} px)",
        report.config.baseline.min_size
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}",
        "class", "TP", "FN", "FP", "Prec", "Rec", "F1"
    );
    let class_rows = ev.per_class.rows.iter().map(|r| {
        let name = class_names
            .get(&r.class_id)
            .cloned()
            .unwrap_or_else(|| r.class_id.to_string());
        (name, &r.outcome)
    });
    for (name, o) in class_rows.chain([("overall".to_string(), &ev.per_class.overall)]) {
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}",
            name,
            o.tp,
            o.fn_,
            o.fp,
            pct(o.precision),
            pct(o.recall),
            pct(o.f1)
        );
    }
    s
}

/// Writes candidates, the meta dataset, the models and both report forms.
pub fn write_outputs(out: &Path, lm: &LoadedManifest, output: &PipelineOutput) -> Result<()> {
    write_candidates(&out.join("candidates.jsonl"), &output.candidates)?;
    write_dataset(&out.join("meta_dataset.csv"), &output.dataset)?;
    if let [model] = output.models.as_slice() {
        write_model(&out.join("model.json"), model)?;
    } else {
        for (i, m) in output.models.iter().enumerate() {
            write_model(&out.join(format!("model_fold{i}.json")), m)?;
        }
    }
    write_file(&out.join("report.json"), &to_json_bytes(&output.report))?;
    let names = lm.manifest.classes.iter().map(|c| (c.id, c.name.clone())).collect();
    write_file(
        &out.join("report.txt"),
        render_report(&output.report, &names).as_bytes(),
    )
}
