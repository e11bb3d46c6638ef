//! Line-oriented artifact records: registry and candidate JSONL, the meta
//! dataset CSV and the model JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use segaudit_core::detect::Candidate;
use segaudit_core::features::{FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use segaudit_core::meta::{MetaDataset, MetaModel, Provenance};
use segaudit_core::perturb::{DropReason, ErrorRegistry, RegistryEntry};
use segaudit_core::{BBox, Component, Origin, PixelSet};

use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_file, write_json, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub image: String,
    pub component_id: u32,
    pub class_id: u16,
    pub size: usize,
    pub bbox: BBox,
    /// Runs `[row, col_start, col_end)`.
    pub pixels_rle: PixelSet,
    pub width: usize,
    pub height: usize,
    pub seed_key: u64,
    pub reason: DropReason,
}

impl From<&RegistryEntry> for RegistryRecord {
    fn from(e: &RegistryEntry) -> Self {
        let k = &e.component;
        Self {
            image: e.image.clone(),
            component_id: k.id,
            class_id: k.class_id,
            size: k.size(),
            bbox: k.bbox,
            pixels_rle: k.pixels.clone(),
            width: k.dims.0,
            height: k.dims.1,
            seed_key: e.seed_key,
            reason: e.reason.clone(),
        }
    }
}

fn component(
    id: u32,
    class_id: u16,
    pixels: PixelSet,
    origin: Origin,
    dims: (usize, usize),
    size: usize,
    what: &str,
) -> std::result::Result<Component, String> {
    let k = Component::from_pixels(id, class_id, pixels, origin, dims)
        .ok_or_else(|| format!("{what} {id} has no pixels"))?;
    if k.size() != size {
        return Err(format!(
            "{what} {id}: size {size} disagrees with {} encoded pixels",
            k.size()
        ));
    }
    Ok(k)
}

impl RegistryRecord {
    pub fn into_entry(self) -> std::result::Result<RegistryEntry, String> {
        let k = component(
            self.component_id,
            self.class_id,
            self.pixels_rle,
            Origin::GroundTruth,
            (self.width, self.height),
            self.size,
            "registry entry",
        )?;
        Ok(RegistryEntry {
            image: self.image,
            component: k,
            reason: self.reason,
            seed_key: self.seed_key,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image: String,
    pub component_id: u32,
    pub class_id: u16,
    pub size: usize,
    pub bbox: BBox,
    pub crop_bbox: BBox,
    pub score: f64,
    pub pixels_rle: PixelSet,
    pub width: usize,
    pub height: usize,
}

impl From<&Candidate> for CandidateRecord {
    fn from(c: &Candidate) -> Self {
        let k = &c.component;
        Self {
            image: c.image.clone(),
            component_id: k.id,
            class_id: c.class_id,
            size: c.size,
            bbox: k.bbox,
            crop_bbox: c.crop_bbox,
            score: c.score,
            pixels_rle: k.pixels.clone(),
            width: k.dims.0,
            height: k.dims.1,
        }
    }
}

impl CandidateRecord {
    pub fn into_candidate(self) -> std::result::Result<Candidate, String> {
        let k = component(
            self.component_id,
            self.class_id,
            self.pixels_rle,
            Origin::Prediction,
            (self.width, self.height),
            self.size,
            "candidate",
        )?;
        Ok(Candidate {
            image: self.image,
            class_id: self.class_id,
            size: self.size,
            crop_bbox: self.crop_bbox,
            score: self.score,
            component: k,
        })
    }
}

pub fn write_registry(path: &Path, registry: &ErrorRegistry) -> Result<()> {
    let rows: Vec<RegistryRecord> = registry.entries.iter().map(RegistryRecord::from).collect();
    write_jsonl(path, &rows)
}

pub fn read_registry(path: &Path) -> Result<ErrorRegistry> {
    let entries = read_jsonl::<RegistryRecord>(path)?
        .into_iter()
        .map(|r| r.into_entry().map_err(|m| Error::format(path, m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorRegistry { entries })
}

/// Candidates in the given order (callers keep them score-sorted).
pub fn write_candidates(path: &Path, candidates: &[Candidate]) -> Result<()> {
    let rows: Vec<CandidateRecord> = candidates.iter().map(CandidateRecord::from).collect();
    write_jsonl(path, &rows)
}

pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>> {
    read_jsonl::<CandidateRecord>(path)?
        .into_iter()
        .map(|r| r.into_candidate().map_err(|m| Error::format(path, m)))
        .collect()
}

/// CSV with columns `image, component_id, target` followed by the features.
pub fn dataset_csv(data: &MetaDataset) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["image", "component_id", "target"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header).expect("in-memory CSV");
    for ((row, target), prov) in data.rows.iter().zip(&data.targets).zip(&data.provenance) {
        let mut rec = vec![
            prov.image.clone(),
            prov.component_id.to_string(),
            (*target as u8).to_string(),
        ];
        rec.extend(row.values().iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

pub fn write_dataset(path: &Path, data: &MetaDataset) -> Result<()> {
    write_file(path, &dataset_csv(data))
}

pub fn read_dataset(path: &Path) -> Result<MetaDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let expected: Vec<&str> = ["image", "component_id", "target"]
        .into_iter()
        .chain(FEATURE_NAMES)
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(path, "unexpected dataset columns"));
    }
    let mut data = MetaDataset::default();
    for (line, rec) in r.records().enumerate() {
        let bad = |m: String| Error::format(path, format!("row {}: {m}", line + 1));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let component_id = rec[1].parse().map_err(|_| bad("bad component id".into()))?;
        let target = match &rec[2] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("bad target `{other}`"))),
        };
        let values = (3..3 + NUM_FEATURES)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value in column {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let prov = Provenance {
            image: rec[0].to_string(),
            component_id,
        };
        data.push(FeatureVector::new(values)?, target, prov);
    }
    Ok(data)
}

pub fn write_model(path: &Path, model: &MetaModel) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<MetaModel> {
    let model: MetaModel = read_json(path)?;
    if model.feature_names.iter().map(String::as_str).ne(FEATURE_NAMES) {
        return Err(Error::format(path, "model feature schema differs from this build"));
    }
    Ok(model)
}
