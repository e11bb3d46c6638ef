//! Connected-component extraction under 8-connectivity.
//!
//! Extraction works on horizontal runs: every row is split into maximal runs
//! of one class, runs in consecutive rows are merged with a union-find when
//! they touch (diagonal contact included), and component ids are handed out
//! in raster-scan order of each component's first pixel.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::{BBox, PixelSet, Run};
use crate::raster::{SegMask, VOID};

/// Which mask a component was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    GroundTruth,
    Prediction,
}

/// A maximal 8-connected same-class region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    /// 1-based, unique per image.
    pub id: u32,
    pub class_id: u16,
    pub pixels: PixelSet,
    pub bbox: BBox,
    pub origin: Origin,
    /// `(width, height)` of the source raster.
    pub dims: (usize, usize),
}

impl Component {
    /// Builds a component from an arbitrary pixel set. Returns `None` for an
    /// empty set. Connectivity is not checked.
    pub fn from_pixels(id: u32, class_id: u16, pixels: PixelSet, origin: Origin, dims: (usize, usize)) -> Option<Self> {
        let bbox = pixels.bbox()?;
        Some(Self {
            id,
            class_id,
            pixels,
            bbox,
            origin,
            dims,
        })
    }

    pub fn size(&self) -> usize {
        self.pixels.len()
    }
}

/// `|a ∩ b|` by pixel coordinates.
pub fn intersect_size(a: &Component, b: &Component) -> Result<usize> {
    if a.dims != b.dims {
        return Err(Error::dims(a.dims, b.dims));
    }
    if !a.bbox.intersects(&b.bbox) {
        return Ok(0);
    }
    Ok(a.pixels.intersection_len(&b.pixels))
}

/// Components of one mask together with a per-pixel id raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMap {
    source: SegMask,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl ComponentMap {
    pub fn source(&self) -> &SegMask {
        &self.source
    }

    pub fn dims(&self) -> (usize, usize) {
        self.source.dims()
    }

    /// Per-pixel component id, 0 where no component exists.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.source.width() + col]
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn get(&self, id: u32) -> Option<&Component> {
        id.checked_sub(1).and_then(|i| self.components.get(i as usize))
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // keep the smaller index as root so roots stay in raster order
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Splits a mask into maximal 8-connected same-class regions.
///
/// With `ignore_void` set, void pixels (class 0) belong to no component.
/// Otherwise void is treated like any other class.
pub fn extract_components(mask: &SegMask, ignore_void: bool, origin: Origin) -> ComponentMap {
    let (w, h) = mask.dims();
    let data = mask.data();

    let mut runs: Vec<Run> = Vec::new();
    let mut run_class: Vec<u16> = Vec::new();
    // runs[row_start[r]..row_start[r + 1]] are the runs of row r
    let mut row_start = Vec::with_capacity(h + 1);
    for r in 0..h {
        row_start.push(runs.len());
        let row = &data[r * w..(r + 1) * w];
        let mut c = 0;
        while c < w {
            let class = row[c];
            let start = c;
            while c < w && row[c] == class {
                c += 1;
            }
            if ignore_void && class == VOID {
                continue;
            }
            runs.push(Run::new(r as u32, start as u32, c as u32));
            run_class.push(class);
        }
    }
    row_start.push(runs.len());

    let mut sets = DisjointSet::new(runs.len());
    for r in 1..h {
        let (prev, cur) = (row_start[r - 1]..row_start[r], row_start[r]..row_start[r + 1]);
        let mut first = prev.start;
        for j in cur {
            let b = runs[j];
            while first < prev.end && runs[first].col_end < b.col_start {
                first += 1;
            }
            // 8-connected when the column ranges overlap after widening by one
            let mut i = first;
            while i < prev.end && runs[i].col_start <= b.col_end {
                if run_class[i] == run_class[j] {
                    sets.union(i as u32, j as u32);
                }
                i += 1;
            }
        }
    }

    let mut root_to_id = vec![0u32; runs.len()];
    let mut run_ids = Vec::with_capacity(runs.len());
    let mut next_id = 0u32;
    for i in 0..runs.len() {
        let root = sets.find(i as u32) as usize;
        if root_to_id[root] == 0 {
            next_id += 1;
            root_to_id[root] = next_id;
        }
        run_ids.push(root_to_id[root]);
    }

    let mut grouped: Vec<Vec<Run>> = vec![Vec::new(); next_id as usize];
    let mut classes = vec![VOID; next_id as usize];
    let mut labels = vec![0u32; w * h];
    for (i, run) in runs.iter().enumerate() {
        let id = run_ids[i];
        grouped[id as usize - 1].push(*run);
        classes[id as usize - 1] = run_class[i];
        let base = run.row as usize * w;
        labels[base + run.col_start as usize..base + run.col_end as usize].fill(id);
    }

    let components = grouped
        .into_iter()
        .zip(classes)
        .enumerate()
        .map(|(i, (runs, class_id))| {
            let pixels = PixelSet::from_runs(runs);
            let bbox = pixels.bbox().expect("component has at least one run");
            Component {
                id: i as u32 + 1,
                class_id,
                pixels,
                bbox,
                origin,
                dims: (w, h),
            }
        })
        .collect();

    ComponentMap {
        source: mask.clone(),
        labels,
        components,
    }
}
