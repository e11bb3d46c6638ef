//! Pixel sets stored as sorted horizontal runs.
//!
//! A [`PixelSet`] keeps its runs sorted by `(row, col_start)`, with no two
//! runs of the same row overlapping or touching. That canonical form makes
//! equality structural and lets set algebra run as a linear merge.

use alloc::vec::Vec;
use core::cmp::{max, min, Ordering};

use serde::{Deserialize, Serialize};

/// Half-open horizontal run `[col_start, col_end)` on `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32, u32)", into = "(u32, u32, u32)")]
pub struct Run {
    pub row: u32,
    pub col_start: u32,
    pub col_end: u32,
}

impl Run {
    pub fn new(row: u32, col_start: u32, col_end: u32) -> Self {
        debug_assert!(col_start < col_end);
        Self {
            row,
            col_start,
            col_end,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.col_end - self.col_start) as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.col_end <= self.col_start
    }
}

impl From<(u32, u32, u32)> for Run {
    fn from((row, col_start, col_end): (u32, u32, u32)) -> Self {
        Self {
            row,
            col_start,
            col_end,
        }
    }
}

impl From<Run> for (u32, u32, u32) {
    fn from(r: Run) -> Self {
        (r.row, r.col_start, r.col_end)
    }
}

/// Inclusive bounding box `(min_row, min_col, max_row, max_col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub min_row: u32,
    pub min_col: u32,
    pub max_row: u32,
    pub max_col: u32,
}

impl BBox {
    pub fn height(&self) -> u32 {
        self.max_row - self.min_row + 1
    }

    pub fn width(&self) -> u32 {
        self.max_col - self.min_col + 1
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_row <= other.max_row
            && other.min_row <= self.max_row
            && self.min_col <= other.max_col
            && other.min_col <= self.max_col
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min_row: min(self.min_row, other.min_row),
            min_col: min(self.min_col, other.min_col),
            max_row: max(self.max_row, other.max_row),
            max_col: max(self.max_col, other.max_col),
        }
    }

    /// Grows the box by `pad` on every side, clamped to a `width x height` raster.
    pub fn padded(&self, pad: u32, width: usize, height: usize) -> BBox {
        BBox {
            min_row: self.min_row.saturating_sub(pad),
            min_col: self.min_col.saturating_sub(pad),
            max_row: min(self.max_row.saturating_add(pad), height.saturating_sub(1) as u32),
            max_col: min(self.max_col.saturating_add(pad), width.saturating_sub(1) as u32),
        }
    }
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        Self {
            min_row: v[0],
            min_col: v[1],
            max_row: v[2],
            max_col: v[3],
        }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.min_row, b.min_col, b.max_row, b.max_col]
    }
}

/// Set of `(row, col)` pixels in canonical run form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Run>", into = "Vec<Run>")]
pub struct PixelSet {
    runs: Vec<Run>,
    count: usize,
}

impl PixelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Canonicalizes arbitrary (possibly unsorted, overlapping) runs.
    pub fn from_runs(mut runs: Vec<Run>) -> Self {
        runs.retain(|r| !r.is_empty());
        runs.sort_unstable();
        Self::from_sorted_runs(runs)
    }

    /// Runs must be sorted by `(row, col_start)`; overlaps are merged.
    fn from_sorted_runs(runs: Vec<Run>) -> Self {
        let mut out: Vec<Run> = Vec::with_capacity(runs.len());
        for r in runs {
            match out.last_mut() {
                Some(last) if last.row == r.row && r.col_start <= last.col_end => {
                    last.col_end = max(last.col_end, r.col_end);
                }
                _ => out.push(r),
            }
        }
        let count = out.iter().map(Run::len).sum();
        Self { runs: out, count }
    }

    pub fn from_pixels<I: IntoIterator<Item = (u32, u32)>>(pixels: I) -> Self {
        let mut px: Vec<(u32, u32)> = pixels.into_iter().collect();
        px.sort_unstable();
        px.dedup();
        let runs = px.into_iter().map(|(r, c)| Run::new(r, c, c + 1)).collect();
        Self::from_sorted_runs(runs)
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Pixels in raster-scan order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.runs
            .iter()
            .flat_map(|r| (r.col_start..r.col_end).map(move |c| (r.row, c)))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let first = self.runs.first()?;
        let last = self.runs.last()?;
        let min_col = self.runs.iter().map(|r| r.col_start).min()?;
        let max_col = self.runs.iter().map(|r| r.col_end - 1).max()?;
        Some(BBox {
            min_row: first.row,
            min_col,
            max_row: last.row,
            max_col,
        })
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        let idx = self.runs.partition_point(|r| (r.row, r.col_start) <= (row, col));
        idx > 0 && {
            let r = &self.runs[idx - 1];
            r.row == row && col < r.col_end
        }
    }

    /// `|self ∩ other|` by a linear merge over both run lists.
    pub fn intersection_len(&self, other: &PixelSet) -> usize {
        let mut n = 0;
        self.merge_overlaps(other, |_, s, e| n += (e - s) as usize);
        n
    }

    pub fn intersects(&self, other: &PixelSet) -> bool {
        // a full merge is fine here; sets are small relative to rasters
        self.intersection_len(other) > 0
    }

    pub fn intersection(&self, other: &PixelSet) -> PixelSet {
        let mut runs = Vec::new();
        self.merge_overlaps(other, |row, s, e| runs.push(Run::new(row, s, e)));
        Self::from_sorted_runs(runs)
    }

    pub fn union(&self, other: &PixelSet) -> PixelSet {
        let mut runs = Vec::with_capacity(self.runs.len() + other.runs.len());
        let (mut i, mut j) = (0, 0);
        while i < self.runs.len() || j < other.runs.len() {
            let take_left = match (self.runs.get(i), other.runs.get(j)) {
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                _ => false,
            };
            if take_left {
                runs.push(self.runs[i]);
                i += 1;
            } else {
                runs.push(other.runs[j]);
                j += 1;
            }
        }
        Self::from_sorted_runs(runs)
    }

    pub fn union_all<'a, I: IntoIterator<Item = &'a PixelSet>>(sets: I) -> PixelSet {
        let runs: Vec<Run> = sets.into_iter().flat_map(|s| s.runs.iter().copied()).collect();
        Self::from_runs(runs)
    }

    /// `self \ other`.
    pub fn difference(&self, other: &PixelSet) -> PixelSet {
        let mut out = Vec::with_capacity(self.runs.len());
        let mut j = 0;
        for a in &self.runs {
            while j < other.runs.len() && other.runs[j].row < a.row {
                j += 1;
            }
            let mut start = a.col_start;
            let mut k = j;
            while k < other.runs.len() && other.runs[k].row == a.row && start < a.col_end {
                let b = &other.runs[k];
                if b.col_end <= start {
                    k += 1;
                    continue;
                }
                if b.col_start >= a.col_end {
                    break;
                }
                if b.col_start > start {
                    out.push(Run::new(a.row, start, b.col_start));
                }
                start = max(start, b.col_end);
                k += 1;
            }
            if start < a.col_end {
                out.push(Run::new(a.row, start, a.col_end));
            }
        }
        Self::from_sorted_runs(out)
    }

    /// Shifts every pixel by a non-negative offset.
    pub fn translated(&self, d_row: u32, d_col: u32) -> PixelSet {
        Self {
            runs: self
                .runs
                .iter()
                .map(|r| Run::new(r.row + d_row, r.col_start + d_col, r.col_end + d_col))
                .collect(),
            count: self.count,
        }
    }

    fn merge_overlaps(&self, other: &PixelSet, mut f: impl FnMut(u32, u32, u32)) {
        let (a, b) = (&self.runs, &other.runs);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].row.cmp(&b[j].row) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    let s = max(a[i].col_start, b[j].col_start);
                    let e = min(a[i].col_end, b[j].col_end);
                    if s < e {
                        f(a[i].row, s, e);
                    }
                    if a[i].col_end <= b[j].col_end {
                        i += 1;
                    } else {
                        j += 1;
                    }
                }
            }
        }
    }
}

impl From<Vec<Run>> for PixelSet {
    fn from(runs: Vec<Run>) -> Self {
        Self::from_runs(runs)
    }
}

impl From<PixelSet> for Vec<Run> {
    fn from(s: PixelSet) -> Self {
        s.runs
    }
}

impl FromIterator<(u32, u32)> for PixelSet {
    fn from_iter<T: IntoIterator<Item = (u32, u32)>>(iter: T) -> Self {
        Self::from_pixels(iter)
    }
}
