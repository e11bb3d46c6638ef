use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::edt::squared_distance_transform;
use super::registry::{removed_pieces, DropReason, ErrorRegistry, RegistryEntry};
use super::sampling::{drops, PerturbConfig};
use crate::component::{extract_components, Component, Origin};
use crate::error::{Error, Result};
use crate::raster::{SegMask, VOID};

/// What dropped pixels are replaced with.
#[derive(Debug, Clone, Copy)]
pub enum FillRule<'a> {
    /// Value of a background mask at the same pixel (e.g. a recording of
    /// the empty scene).
    Background(&'a SegMask),
    /// Class of the nearest pixel that is neither dropped nor void, by
    /// Euclidean distance; ties go to the lower class id.
    NearestLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterPerturbation {
    pub perturbed: SegMask,
    pub registry: ErrorRegistry,
    /// Ids of the dropped components in the clean component map.
    pub dropped: Vec<u32>,
}

/// Drops eligible components of a clean mask by independent Bernoulli
/// trials keyed on their component id.
pub fn perturb_raster(
    clean: &SegMask,
    fill: FillRule<'_>,
    cfg: &PerturbConfig,
    image: &str,
) -> Result<RasterPerturbation> {
    cfg.validate()?;
    if let FillRule::Background(bg) = fill {
        clean.check_same_dims(bg)?;
        if bg.classes() > clean.classes() {
            return Err(Error::ClassCountMismatch(clean.classes(), bg.classes()));
        }
    }
    let (w, h) = clean.dims();
    let comps = extract_components(clean, true, Origin::GroundTruth);
    let dropped: Vec<&Component> = comps
        .components()
        .iter()
        .filter(|k| cfg.is_eligible(k.class_id))
        .filter(|k| drops(k.size(), cfg, image, k.id as u64))
        .collect();

    let mut is_dropped = vec![false; w * h];
    for k in &dropped {
        for (r, c) in k.pixels.iter() {
            is_dropped[r as usize * w + c as usize] = true;
        }
    }

    let mut data = clean.data().to_vec();
    match fill {
        FillRule::Background(bg) => {
            for (i, d) in is_dropped.iter().enumerate() {
                if *d {
                    data[i] = bg.data()[i];
                }
            }
        }
        FillRule::NearestLabel if !dropped.is_empty() => {
            nearest_label_fill(clean, &is_dropped, &mut data);
        }
        FillRule::NearestLabel => {}
    }
    let perturbed = SegMask::new(w, h, clean.classes(), data)?;

    let mut registry = ErrorRegistry::default();
    for k in &dropped {
        for piece in removed_pieces(&k.pixels, k.class_id, &perturbed) {
            let id = registry.len() as u32 + 1;
            if let Some(component) = Component::from_pixels(id, k.class_id, piece, Origin::GroundTruth, (w, h)) {
                registry.entries.push(RegistryEntry {
                    image: image.to_string(),
                    component,
                    reason: DropReason::Component { clean_id: k.id },
                    seed_key: k.id as u64,
                });
            }
        }
    }

    Ok(RasterPerturbation {
        perturbed,
        registry,
        dropped: dropped.iter().map(|k| k.id).collect(),
    })
}

/// One distance transform per class present among the kept pixels; each
/// dropped pixel takes the class with the smallest distance.
fn nearest_label_fill(clean: &SegMask, is_dropped: &[bool], data: &mut [u16]) {
    let (w, h) = clean.dims();
    let targets: Vec<usize> = (0..w * h).filter(|&i| is_dropped[i]).collect();
    let mut best = vec![(f64::INFINITY, VOID); targets.len()];
    let mut site = vec![false; w * h];
    for class in 1..=clean.classes() {
        let mut any = false;
        for (i, s) in site.iter_mut().enumerate() {
            *s = !is_dropped[i] && clean.data()[i] == class;
            any |= *s;
        }
        if !any {
            continue;
        }
        let dist = squared_distance_transform(w, h, &site);
        for (t, &i) in targets.iter().enumerate() {
            // strict comparison keeps the lower class on ties
            if dist[i] < best[t].0 {
                best[t] = (dist[i], class);
            }
        }
    }
    for (t, &i) in targets.iter().enumerate() {
        data[i] = best[t].1;
    }
}
