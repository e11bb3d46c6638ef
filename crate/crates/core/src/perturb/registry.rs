use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::component::{extract_components, Component, Origin};
use crate::pixels::PixelSet;
use crate::raster::SegMask;

/// Why a region was removed from the ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DropReason {
    /// A polygon of the annotation was dropped.
    Polygon { index: usize, label: String },
    /// A raster component of the clean mask was dropped.
    Component { clean_id: u32 },
}

/// One injected label error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub image: String,
    /// The removed region, as pixels of the clean mask.
    pub component: Component,
    pub reason: DropReason,
    /// Key of the Bernoulli trial that dropped it.
    pub seed_key: u64,
}

impl RegistryEntry {
    pub fn class_id(&self) -> u16 {
        self.component.class_id
    }

    pub fn size(&self) -> usize {
        self.component.size()
    }
}

/// The set of known label errors over a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorRegistry {
    pub entries: Vec<RegistryEntry>,
}

impl ErrorRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: ErrorRegistry) {
        self.entries.extend(other.entries);
    }

    pub fn for_image<'a>(&'a self, image: &'a str) -> impl Iterator<Item = &'a RegistryEntry> + 'a {
        self.entries.iter().filter(move |e| e.image == image)
    }
}

/// Splits a pixel set into its 8-connected pieces, in raster order.
pub fn split_connected(set: &PixelSet) -> Vec<PixelSet> {
    let Some(bbox) = set.bbox() else {
        return Vec::new();
    };
    let (w, h) = (bbox.width() as usize, bbox.height() as usize);
    let local = SegMask::from_fn(w, h, 1, |r, c| {
        set.contains(bbox.min_row + r as u32, bbox.min_col + c as u32) as u16
    })
    .expect("binary mask is valid");
    extract_components(&local, true, Origin::GroundTruth)
        .components()
        .iter()
        .map(|c| c.pixels.translated(bbox.min_row, bbox.min_col))
        .collect()
}

/// Pixels of `region` that no longer carry `class` in `perturbed`, split
/// into connected pieces.
pub(crate) fn removed_pieces(region: &PixelSet, class: u16, perturbed: &SegMask) -> Vec<PixelSet> {
    let removed: PixelSet = region
        .iter()
        .filter(|&(r, c)| perturbed.get(r as usize, c as usize) != class)
        .collect();
    split_connected(&removed)
}
