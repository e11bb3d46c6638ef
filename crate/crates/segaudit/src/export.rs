//! Review bundles: the top-ranked candidates with rendered crops, in a
//! directory the review service can serve on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segaudit_core::detect::{rank_order, Candidate};
use segaudit_core::{argmax_mask, SegMask, VOID};

use crate::error::{Error, Result};
use crate::io::{read_json, to_json_bytes, write_file, RgbImage};
use crate::manifest::{ClassEntry, LoadedManifest, Split};
use crate::records::{read_candidates, write_candidates};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

const PALETTE: [[u8; 3]; 12] = [
    [128, 64, 128],
    [70, 70, 70],
    [220, 20, 60],
    [0, 0, 142],
    [220, 220, 0],
    [107, 142, 35],
    [70, 130, 180],
    [250, 170, 30],
    [119, 11, 32],
    [0, 80, 100],
    [190, 153, 153],
    [152, 251, 152],
];
const OUTLINE: [u8; 3] = [255, 255, 255];

/// Fixed colour per class; void is black.
pub fn class_color(class: u16) -> [u8; 3] {
    if class == VOID {
        return [0, 0, 0];
    }
    let i = (class - 1) as usize;
    let base = PALETTE[i % PALETTE.len()];
    // later cycles are darkened so neighbouring ids stay distinguishable
    let shade = (i / PALETTE.len()) as u16 % 4;
    base.map(|v| (v as u16 * (4 - shade) / 4) as u8)
}

fn blend(a: [u8; 3], b: [u8; 3]) -> [u8; 3] {
    [0, 1, 2].map(|i| ((a[i] as u16 + b[i] as u16) / 2) as u8)
}

/// Side-by-side crop over the candidate's padded box: prediction overlay on
/// the left, ground-truth overlay on the right, candidate outline on both.
/// Without an RGB image the panels show the class colours alone.
pub fn render_crop(rgb: Option<&RgbImage>, gt: &SegMask, pred: &SegMask, cand: &Candidate) -> Result<Vec<u8>> {
    gt.check_same_dims(pred)?;
    if let Some(img) = rgb {
        if (img.width, img.height) != gt.dims() {
            return Err(Error::Manifest(format!(
                "{}: rgb is {}x{} but the mask is {}x{}",
                cand.image,
                img.width,
                img.height,
                gt.width(),
                gt.height()
            )));
        }
    }
    let b = cand.crop_bbox;
    let (w, h) = (b.width() as usize, b.height() as usize);
    let k = &cand.component.pixels;
    let outline = |r: u32, c: u32| {
        k.contains(r, c)
            && [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dr, dc)| {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                rr < 0 || cc < 0 || !k.contains(rr as u32, cc as u32)
            })
    };
    let mut out = RgbImage::new(2 * w, h);
    for y in 0..h {
        for x in 0..w {
            let (r, c) = (b.min_row + y as u32, b.min_col + x as u32);
            for (panel, mask) in [(0, pred), (1, gt)] {
                let class = mask.get(r as usize, c as usize);
                let mut px = match rgb {
                    Some(img) if class == VOID => img.get(r as usize, c as usize),
                    Some(img) => blend(img.get(r as usize, c as usize), class_color(class)),
                    None => class_color(class),
                };
                if outline(r, c) {
                    px = OUTLINE;
                }
                out.set(y, panel * w + x, px);
            }
        }
    }
    Ok(out.encode_png())
}

/// Classes reviewed together with a fixed quota.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassGroup {
    pub name: String,
    pub classes: BTreeSet<u16>,
    pub quota: usize,
}

impl ClassGroup {
    /// Parses `name[,name...]:quota` against the manifest's class names.
    pub fn parse(spec: &str, classes: &[ClassEntry]) -> Result<Self> {
        let (names, quota) = spec
            .rsplit_once(':')
            .ok_or_else(|| Error::Config(format!("class group `{spec}` needs `classes:quota`")))?;
        let quota = quota
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad quota in class group `{spec}`")))?;
        let ids = names
            .split(',')
            .map(|n| {
                let n = n.trim();
                classes
                    .iter()
                    .find(|c| c.name == n)
                    .map(|c| c.id)
                    .ok_or_else(|| Error::Config(format!("unknown class `{n}` in group `{spec}`")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: names.to_string(),
            classes: ids,
            quota,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub image: String,
    pub component_id: u32,
    pub split: Option<Split>,
    pub group: Option<String>,
    /// Crop path relative to the bundle directory.
    pub crop: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleIndex {
    pub schema_version: u32,
    pub dataset: String,
    pub classes: Vec<ClassEntry>,
    pub groups: Vec<ClassGroup>,
    pub top_n: usize,
    /// Parallel to the lines of `candidates.jsonl`.
    pub entries: Vec<BundleEntry>,
}

#[derive(Debug, Clone)]
pub struct Selected {
    pub candidate: Candidate,
    pub split: Option<Split>,
    pub group: Option<String>,
}

/// Top `n` candidates per split or, with groups, the top `quota` of each
/// group per split. A candidate is taken at most once. The result is in
/// rank order.
pub fn select_top(
    candidates: &[Candidate],
    splits: &BTreeMap<String, Option<Split>>,
    n: usize,
    groups: &[ClassGroup],
) -> Vec<Selected> {
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let mut by_split: BTreeMap<Option<Split>, Vec<&Candidate>> = BTreeMap::new();
    for c in ranked {
        by_split
            .entry(splits.get(&c.image).copied().flatten())
            .or_default()
            .push(c);
    }
    let mut out = Vec::new();
    for (split, cands) in by_split {
        let label = split.map_or("all".to_string(), |s| format!("{s:?}"));
        if groups.is_empty() {
            if cands.len() < n {
                warn!("split {label}: {n} requested but only {} candidates", cands.len());
            }
            out.extend(cands.iter().take(n).map(|c| Selected {
                candidate: (*c).clone(),
                split,
                group: None,
            }));
            continue;
        }
        let mut taken = BTreeSet::new();
        for g in groups {
            let pick: Vec<&Candidate> = cands
                .iter()
                .copied()
                .filter(|c| g.classes.contains(&c.class_id) && !taken.contains(&(c.image.as_str(), c.component_id())))
                .take(g.quota)
                .collect();
            if pick.len() < g.quota {
                warn!(
                    "split {label}, group {}: {} requested but only {} candidates",
                    g.name,
                    g.quota,
                    pick.len()
                );
            }
            for c in pick {
                taken.insert((c.image.as_str(), c.component_id()));
                out.push(Selected {
                    candidate: c.clone(),
                    split,
                    group: Some(g.name.clone()),
                });
            }
        }
    }
    out.sort_by(|a, b| rank_order(&a.candidate, &b.candidate));
    out
}

fn crop_name(i: usize) -> PathBuf {
    PathBuf::from(format!("crops/{i:05}.png"))
}

pub fn export_bundle(
    lm: &LoadedManifest,
    candidates_path: &Path,
    n: usize,
    groups: &[ClassGroup],
    out: &Path,
) -> Result<BundleIndex> {
    if n == 0 && groups.is_empty() {
        return Err(Error::Config("top-n must be at least 1".into()));
    }
    let candidates = read_candidates(candidates_path)?;
    let splits: BTreeMap<String, Option<Split>> =
        lm.manifest.records.iter().map(|r| (r.image.clone(), r.split)).collect();
    if let Some(c) = candidates.iter().find(|c| !splits.contains_key(&c.image)) {
        return Err(Error::Manifest(format!(
            "candidate image `{}` is not in the manifest",
            c.image
        )));
    }
    let selected = select_top(&candidates, &splits, n, groups);

    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in selected.iter().enumerate() {
        by_image.entry(s.candidate.image.as_str()).or_default().push(i);
    }
    let crops: Vec<(usize, Vec<u8>)> = by_image
        .par_iter()
        .map(|(image, idx)| {
            let record = lm.record(image).expect("checked above");
            let gt = lm.load_gt(record)?;
            let pred = argmax_mask(&lm.load_probs(record)?);
            let rgb = lm.load_rgb(record)?;
            idx.iter()
                .map(|&i| Ok((i, render_crop(rgb.as_ref(), &gt, &pred, &selected[i].candidate)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (i, png) in &crops {
        write_file(&out.join(crop_name(*i)), png)?;
    }
    let chosen: Vec<Candidate> = selected.iter().map(|s| s.candidate.clone()).collect();
    write_candidates(&out.join("candidates.jsonl"), &chosen)?;
    let index = BundleIndex {
        schema_version: BUNDLE_SCHEMA_VERSION,
        dataset: lm.manifest.dataset.clone(),
        classes: lm.manifest.classes.clone(),
        groups: groups.to_vec(),
        top_n: n,
        entries: selected
            .iter()
            .enumerate()
            .map(|(i, s)| BundleEntry {
                image: s.candidate.image.clone(),
                component_id: s.candidate.component_id(),
                split: s.split,
                group: s.group.clone(),
                crop: crop_name(i),
            })
            .collect(),
    };
    write_file(&out.join("bundle.json"), &to_json_bytes(&index))?;
    info!("exported {} candidates to {}", chosen.len(), out.display());
    Ok(index)
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub index: BundleIndex,
    pub candidates: Vec<Candidate>,
}

impl Bundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let index: BundleIndex = read_json(&dir.join("bundle.json"))?;
        if index.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::format(dir.join("bundle.json"), "unsupported bundle version"));
        }
        let candidates = read_candidates(&dir.join("candidates.jsonl"))?;
        let aligned = candidates.len() == index.entries.len()
            && candidates
                .iter()
                .zip(&index.entries)
                .all(|(c, e)| c.image == e.image && c.component_id() == e.component_id);
        if !aligned {
            return Err(Error::format(
                dir.join("bundle.json"),
                "entries do not match candidates.jsonl",
            ));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
            candidates,
        })
    }
}
