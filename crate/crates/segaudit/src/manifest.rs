//! Dataset manifests.
//!
//! A manifest is a versioned JSON document listing the images of a dataset.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segaudit_core::perturb::{ClassTable, PolygonAnnotation};
use segaudit_core::{ProbMap, SegMask};

use crate::error::{Error, Result};
use crate::io::{load_probmap, read_file, read_json, read_mask, read_rgb, RgbImage};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    TrainMeta,
    Search,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u16,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_polygons: Option<PathBuf>,
    pub probs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    /// Mask of the scene without removable objects, used to fill drops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Hex SHA-256 of referenced files, keyed by the field name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sha256: BTreeMap<String, String>,
}

impl Record {
    /// Referenced files by field name.
    pub fn files(&self) -> Vec<(&'static str, &Path)> {
        let mut out = vec![("probs", self.probs.as_path())];
        let optional = [
            ("rgb", &self.rgb),
            ("gt_mask", &self.gt_mask),
            ("gt_polygons", &self.gt_polygons),
            ("depth", &self.depth),
            ("background", &self.background),
        ];
        for (name, p) in optional {
            if let Some(p) = p {
                out.push((name, p.as_path()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset: String,
    pub classes: Vec<ClassEntry>,
    /// Label-error registry (JSONL) for benchmark datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    pub records: Vec<Record>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn num_classes(&self) -> u16 {
        self.classes.iter().map(|c| c.id).max().unwrap_or(0)
    }

    pub fn class_table(&self) -> Result<ClassTable> {
        Ok(ClassTable::new(
            self.num_classes(),
            self.classes.iter().map(|c| (c.name.clone(), c.id)),
        )?)
    }

    pub fn class_name(&self, id: u16) -> Option<&str> {
        self.classes.iter().find(|c| c.id == id).map(|c| c.name.as_str())
    }

    /// Structural checks that need no file access.
    pub fn validate_structure(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if c.id == 0 {
                return Err(Error::Manifest(format!("class `{}` uses reserved id 0", c.name)));
            }
            if !ids.insert(c.id) || !names.insert(c.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate class `{}` ({})", c.name, c.id)));
            }
        }
        if ids.len() != self.num_classes() as usize {
            return Err(Error::Manifest("class ids must be 1..=c without gaps".into()));
        }
        let mut images = BTreeSet::new();
        for r in &self.records {
            if !images.insert(r.image.as_str()) {
                return Err(Error::Manifest(format!("duplicate image id `{}`", r.image)));
            }
            if r.gt_mask.is_some() == r.gt_polygons.is_some() {
                return Err(Error::Manifest(format!(
                    "record `{}` needs exactly one of gt_mask and gt_polygons",
                    r.image
                )));
            }
        }
        let with_split = self.records.iter().filter(|r| r.split.is_some()).count();
        if with_split != 0 && with_split != self.records.len() {
            return Err(Error::Manifest(
                "splits must be given for all records or for none".into(),
            ));
        }
        Ok(())
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub root: PathBuf,
    pub path: PathBuf,
}

impl LoadedManifest {
    /// Reads and validates a manifest: structure, file existence and any
    /// recorded hashes.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self {
            manifest,
            root,
            path: path.to_path_buf(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn from_parts(manifest: Manifest, root: PathBuf) -> Result<Self> {
        let loaded = Self {
            path: root.join("manifest.json"),
            manifest,
            root,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<()> {
        self.manifest.validate_structure()?;
        let mut problems = Vec::new();
        for r in &self.manifest.records {
            for (field, rel) in r.files() {
                let p = self.resolve(rel);
                if !p.is_file() {
                    problems.push(format!("{}: {field} file {} does not exist", r.image, p.display()));
                    continue;
                }
                if let Some(expected) = r.sha256.get(field) {
                    let got = sha256_hex(&read_file(&p)?);
                    if &got != expected {
                        problems.push(format!("{}: {field} hash mismatch for {}", r.image, p.display()));
                    }
                }
            }
        }
        if let Some(reg) = &self.manifest.registry {
            if !self.resolve(reg).is_file() {
                problems.push(format!("registry {} does not exist", self.resolve(reg).display()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(problems.join("; ")))
        }
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        }
    }

    pub fn record(&self, image: &str) -> Option<&Record> {
        self.manifest.records.iter().find(|r| r.image == image)
    }

    /// Ground truth of a record, rasterizing polygons when needed.
    pub fn load_gt(&self, r: &Record) -> Result<SegMask> {
        let classes = self.manifest.num_classes();
        if let Some(p) = &r.gt_mask {
            return read_mask(&self.resolve(p), classes);
        }
        let p = self.resolve(r.gt_polygons.as_ref().expect("validated record"));
        let ann: PolygonAnnotation = read_json(&p)?;
        let table = self.manifest.class_table()?;
        Ok(segaudit_core::perturb::rasterize(&ann, &table)?.mask)
    }

    pub fn load_probs(&self, r: &Record) -> Result<ProbMap> {
        let probs = load_probmap(&self.resolve(&r.probs))?;
        if probs.classes() != self.manifest.num_classes() {
            return Err(Error::format(
                self.resolve(&r.probs),
                format!(
                    "{} probability channels for {} classes",
                    probs.classes(),
                    self.manifest.num_classes()
                ),
            ));
        }
        Ok(probs)
    }

    pub fn load_rgb(&self, r: &Record) -> Result<Option<RgbImage>> {
        r.rgb.as_ref().map(|p| read_rgb(&self.resolve(p))).transpose()
    }
}
