//! Benchmark construction: drop ground-truth components of every record and
//! write the perturbed annotations, the registry and a new manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segaudit_core::perturb::{
    drop_probability, perturb_polygons, perturb_raster, rasterize, smooth_annotation, ClassTable, ErrorRegistry,
    FillRule, PerturbConfig, PolygonAnnotation, SmoothConfig,
};
use segaudit_core::{extract_components, Origin};

use crate::config::{Config, FillMode};
use crate::error::{Error, Result};
use crate::io::{encode_mask, read_depth, read_file, read_json, read_mask, to_json_bytes, write_file};
use crate::manifest::{sha256_hex, LoadedManifest, Manifest, Record};
use crate::pipeline::seeded_splits;
use crate::records::write_registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSummary {
    pub images: usize,
    pub registry_entries: usize,
    pub dropped_objects: usize,
    /// Sum of drop probabilities over eligible components.
    pub expected_drops: f64,
    pub perturb: PerturbConfig,
    pub smooth: Option<SmoothConfig>,
    pub fill: FillMode,
}

struct Perturbed {
    /// Path of the new ground truth inside the output directory.
    gt_rel: PathBuf,
    /// New annotation bytes, or `None` to copy the source unchanged.
    bytes: Option<Vec<u8>>,
    registry: ErrorRegistry,
    dropped: usize,
    expected: f64,
}

fn class_ids(table: &ClassTable, names: &[String]) -> Result<Vec<u16>> {
    names
        .iter()
        .map(|n| table.id(n).map_err(|_| Error::Config(format!("unknown class `{n}`"))))
        .collect()
}

/// File stem for an image id that may contain path separators.
fn file_stem(image: &str) -> String {
    image
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn unique_stems(records: &[Record]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let stem = file_stem(&r.image);
            if seen.insert(stem.clone()) {
                stem
            } else {
                format!("{stem}-{i}")
            }
        })
        .collect()
}

fn perturb_record(
    lm: &LoadedManifest,
    record: &Record,
    stem: &str,
    pcfg: &PerturbConfig,
    smooth: Option<&SmoothConfig>,
    fill: FillMode,
    table: &ClassTable,
) -> Result<Perturbed> {
    if let Some(p) = &record.gt_polygons {
        let p = lm.resolve(p);
        let ann: PolygonAnnotation = read_json(&p)?;
        let clean = rasterize(&ann, table)?;
        if !clean.skipped.is_empty() {
            warn!("{}: skipped degenerate polygons {:?}", record.image, clean.skipped);
        }
        let mut expected = 0.0;
        for (i, obj) in ann.objects.iter().enumerate() {
            if pcfg.is_eligible(table.id(&obj.label)?) {
                expected += drop_probability(clean.visible(i).len(), pcfg);
            }
        }
        let out = perturb_polygons(&ann, table, pcfg, &record.image)?;
        return Ok(Perturbed {
            gt_rel: PathBuf::from(format!("gt/{stem}.json")),
            bytes: (!out.dropped.is_empty()).then(|| to_json_bytes(&out.annotation)),
            registry: out.registry,
            dropped: out.dropped.len(),
            expected,
        });
    }

    let src = lm.resolve(record.gt_mask.as_ref().expect("validated record"));
    let mut clean = read_mask(&src, lm.manifest.num_classes())?;
    if let Some(s) = smooth {
        let depth = match &record.depth {
            Some(d) => Some(read_depth(&lm.resolve(d))?),
            None => None,
        };
        clean = smooth_annotation(&clean, depth.as_ref(), s)?;
    }
    let background = match (&record.background, fill) {
        (Some(b), FillMode::Auto | FillMode::Background) => Some(read_mask(&lm.resolve(b), lm.manifest.num_classes())?),
        (None, FillMode::Background) => {
            return Err(Error::Manifest(format!(
                "{}: fill = background but no background mask",
                record.image
            )));
        }
        _ => None,
    };
    let rule = match &background {
        Some(bg) => FillRule::Background(bg),
        None => FillRule::NearestLabel,
    };
    let expected = extract_components(&clean, true, Origin::GroundTruth)
        .components()
        .iter()
        .filter(|k| pcfg.is_eligible(k.class_id))
        .map(|k| drop_probability(k.size(), pcfg))
        .sum();
    let out = perturb_raster(&clean, rule, pcfg, &record.image)?;
    let changed = smooth.is_some() || !out.dropped.is_empty();
    Ok(Perturbed {
        gt_rel: PathBuf::from(format!("gt/{stem}.png")),
        bytes: changed.then(|| encode_mask(&out.perturbed)),
        registry: out.registry,
        dropped: out.dropped.len(),
        expected,
    })
}

fn absolute(lm: &LoadedManifest, p: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    p.as_ref()
        .map(|p| {
            let r = lm.resolve(p);
            fs::canonicalize(&r).map_err(|e| Error::io(r, e))
        })
        .transpose()
}

/// Staging directory next to `out`; removed again on failure.
fn staging_dir(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!(".{name}.partial"))
}

pub fn run_perturb(lm: &LoadedManifest, cfg: &Config, out: &Path) -> Result<PerturbSummary> {
    cfg.validate()?;
    if out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        return Err(Error::Config(format!(
            "output directory {} is not empty",
            out.display()
        )));
    }
    let table = lm.manifest.class_table()?;
    let eligible: BTreeSet<u16> = class_ids(&table, &cfg.perturb.eligible_classes)?.into_iter().collect();
    let pcfg = cfg.perturb_config(eligible);
    let smooth = (!cfg.smooth.classes.is_empty())
        .then(|| {
            Ok::<_, Error>(SmoothConfig {
                classes: class_ids(&table, &cfg.smooth.classes)?,
                intensity: cfg.smooth.intensity,
                sigma: cfg.smooth.sigma,
                threshold: cfg.smooth.threshold,
            })
        })
        .transpose()?;

    let records = &lm.manifest.records;
    let stems = unique_stems(records);
    let staging = staging_dir(out);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }

    let result = (|| {
        let outcomes: Vec<std::result::Result<(Perturbed, Record), String>> = records
            .par_iter()
            .zip(&stems)
            .map(|(r, stem)| {
                let write = || -> Result<(Perturbed, Record)> {
                    let p = perturb_record(lm, r, stem, &pcfg, smooth.as_ref(), cfg.perturb.fill, &table)?;
                    let dest = staging.join(&p.gt_rel);
                    let bytes = match &p.bytes {
                        Some(b) => b.clone(),
                        None => {
                            read_file(&lm.resolve(r.gt_mask.as_ref().or(r.gt_polygons.as_ref()).expect("validated")))?
                        }
                    };
                    write_file(&dest, &bytes)?;
                    let mut rec = Record {
                        image: r.image.clone(),
                        rgb: absolute(lm, &r.rgb)?,
                        gt_mask: None,
                        gt_polygons: None,
                        probs: absolute(lm, &Some(r.probs.clone()))?.expect("present"),
                        depth: absolute(lm, &r.depth)?,
                        background: absolute(lm, &r.background)?,
                        split: r.split,
                        sha256: BTreeMap::new(),
                    };
                    for (field, hash) in &r.sha256 {
                        if field != "gt_mask" && field != "gt_polygons" {
                            rec.sha256.insert(field.clone(), hash.clone());
                        }
                    }
                    let gt_field = if r.gt_polygons.is_some() {
                        rec.gt_polygons = Some(p.gt_rel.clone());
                        "gt_polygons"
                    } else {
                        rec.gt_mask = Some(p.gt_rel.clone());
                        "gt_mask"
                    };
                    rec.sha256.insert(gt_field.to_string(), sha256_hex(&bytes));
                    Ok((p, rec))
                };
                write().map_err(|e| format!("{}: {e}", r.image))
            })
            .collect();

        let mut failures = Vec::new();
        let mut done = Vec::new();
        for o in outcomes {
            match o {
                Ok(v) => done.push(v),
                Err(m) => failures.push(m),
            }
        }
        if !failures.is_empty() {
            return Err(Error::Files(failures));
        }

        let mut registry = ErrorRegistry::default();
        let mut new_records = Vec::with_capacity(done.len());
        let (mut dropped, mut expected) = (0, 0.0);
        for (p, rec) in done {
            registry.extend(p.registry);
            dropped += p.dropped;
            expected += p.expected;
            new_records.push(rec);
        }
        if new_records.iter().any(|r| r.split.is_none()) {
            let images: Vec<&str> = new_records.iter().map(|r| r.image.as_str()).collect();
            let splits = seeded_splits(&images, cfg.seed);
            for (r, s) in new_records.iter_mut().zip(splits) {
                r.split = Some(s);
            }
        }
        write_registry(&staging.join("registry.jsonl"), &registry)?;
        let manifest = Manifest {
            schema_version: lm.manifest.schema_version,
            dataset: format!("{}-perturbed", lm.manifest.dataset),
            classes: lm.manifest.classes.clone(),
            registry: Some(PathBuf::from("registry.jsonl")),
            records: new_records,
        };
        write_file(&staging.join("manifest.json"), &to_json_bytes(&manifest))?;
        let summary = PerturbSummary {
            images: records.len(),
            registry_entries: registry.len(),
            dropped_objects: dropped,
            expected_drops: expected,
            perturb: pcfg.clone(),
            smooth: smooth.clone(),
            fill: cfg.perturb.fill,
        };
        write_file(&staging.join("perturb.json"), &to_json_bytes(&summary))?;
        Ok(summary)
    })();

    match result {
        Ok(summary) => {
            if out.exists() {
                fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
            }
            fs::rename(&staging, out).map_err(|e| Error::io(out, e))?;
            info!(
                "dropped {} objects ({:.1} expected), {} registry entries",
                summary.dropped_objects, summary.expected_drops, summary.registry_entries
            );
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}
