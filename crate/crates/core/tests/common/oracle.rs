// Brute-force reference implementations over explicit pixel sets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use segaudit_core::{Component, SegMask};

pub type Pixels = BTreeSet<(u32, u32)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Comp {
    pub class: u16,
    pub pixels: Pixels,
}

impl From<&Component> for Comp {
    fn from(c: &Component) -> Self {
        Comp {
            class: c.class_id,
            pixels: c.pixels.iter().collect(),
        }
    }
}

/// Breadth-first flood fill over the 8-neighbourhood, components ordered by
/// their first pixel in raster order.
pub fn flood_fill(mask: &SegMask, ignore_void: bool) -> Vec<Comp> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let class = mask.get(r, c);
            if seen[r * w + c] || (ignore_void && class == 0) {
                continue;
            }
            let mut pixels = Pixels::new();
            let mut queue = VecDeque::from([(r, c)]);
            seen[r * w + c] = true;
            while let Some((y, x)) = queue.pop_front() {
                pixels.insert((y as u32, x as u32));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if !seen[ny * w + nx] && mask.get(ny, nx) == class {
                            seen[ny * w + nx] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            out.push(Comp { class, pixels });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveMatch {
    /// (sIoU, is true positive) per ground-truth component.
    pub gt: Vec<(f64, bool)>,
    /// (pi, is false positive) per predicted component.
    pub pred: Vec<(f64, bool)>,
}

fn meets(a: &Pixels, b: &Pixels) -> bool {
    a.iter().any(|p| b.contains(p))
}

/// Literal set definitions: pr(k) is the union of same-class predictions
/// meeting k, A(k) the other same-class ground-truth components meeting
/// pr(k).
pub fn naive_match(gt: &[Comp], pred: &[Comp], tau: f64) -> NaiveMatch {
    let gt_rows = gt
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let pr: Pixels = pred
                .iter()
                .filter(|p| p.class == k.class && meets(&k.pixels, &p.pixels))
                .flat_map(|p| p.pixels.iter().copied())
                .collect();
            if pr.is_empty() {
                return (0.0, false);
            }
            let adjust: Pixels = gt
                .iter()
                .enumerate()
                .filter(|&(j, o)| j != i && o.class == k.class && meets(&o.pixels, &pr))
                .flat_map(|(_, o)| o.pixels.iter().copied())
                .collect();
            let inter = k.pixels.intersection(&pr).count();
            let union: Pixels = k.pixels.union(&pr).copied().collect();
            let denom = union.difference(&adjust).count();
            let s = inter as f64 / denom as f64;
            (s, s > tau)
        })
        .collect();
    let pred_rows = pred
        .iter()
        .map(|l| {
            let cover: Pixels = gt
                .iter()
                .filter(|g| g.class == l.class && meets(&g.pixels, &l.pixels))
                .flat_map(|g| g.pixels.iter().copied())
                .collect();
            let p = l.pixels.intersection(&cover).count() as f64 / l.pixels.len() as f64;
            (p, p <= tau)
        })
        .collect();
    NaiveMatch {
        gt: gt_rows,
        pred: pred_rows,
    }
}

/// (tp, fp, fn) over all images with candidates of score >= t selected.
pub fn naive_counts(
    entries: &BTreeMap<String, Vec<Comp>>,
    cands: &[(String, Comp, f64)],
    t: f64,
    tau: f64,
) -> (usize, usize, usize) {
    let mut images: BTreeSet<&str> = entries.keys().map(String::as_str).collect();
    images.extend(cands.iter().map(|c| c.0.as_str()));
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for image in images {
        let gt = entries.get(image).cloned().unwrap_or_default();
        let sel: Vec<Comp> = cands
            .iter()
            .filter(|c| c.0 == image && c.2 >= t)
            .map(|c| c.1.clone())
            .collect();
        let m = naive_match(&gt, &sel, tau);
        tp += m.gt.iter().filter(|g| g.1).count();
        fn_ += m.gt.iter().filter(|g| !g.1).count();
        fp += m.pred.iter().filter(|p| p.1).count();
    }
    (tp, fp, fn_)
}

/// Step-integrated precision over recall at every distinct score.
pub fn naive_ap(entries: &BTreeMap<String, Vec<Comp>>, cands: &[(String, Comp, f64)], tau: f64) -> f64 {
    let mut scores: Vec<f64> = cands.iter().map(|c| c.2).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in scores {
        let (tp, fp, fn_) = naive_counts(entries, cands, t, tau);
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

pub fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// A mask of random rectangles and speckle over a random background, so
/// that components range from single pixels to large touching regions.
pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, classes: u16) -> SegMask {
    let bg = below(rng, classes as u64 + 1) as u16;
    let mut data = vec![bg; w * h];
    for _ in 0..below(rng, 8) {
        let class = below(rng, classes as u64 + 1) as u16;
        let (r0, c0) = (below(rng, h as u64) as usize, below(rng, w as u64) as usize);
        let (rh, cw) = (
            1 + below(rng, h as u64 / 2 + 1) as usize,
            1 + below(rng, w as u64 / 2 + 1) as usize,
        );
        for r in r0..(r0 + rh).min(h) {
            for c in c0..(c0 + cw).min(w) {
                data[r * w + c] = class;
            }
        }
    }
    let speckle = below(rng, 5);
    for v in data.iter_mut() {
        if below(rng, 100) < speckle * 5 {
            *v = below(rng, classes as u64 + 1) as u16;
        }
    }
    SegMask::new(w, h, classes, data).unwrap()
}
