//! Synthetic street-like scenes with a simulated predictor, for desk-scale
//! benchmarks without real data.
//!
//! Each scene has a background (building above a horizon, ground below) and
//! non-overlapping objects (person, car, sign). The predictor starts from the
//! clean annotation, misses some objects, dilates or erodes the rest, adds
//! low-confidence hallucinated blobs and noisy softmax outputs.

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segaudit_core::{ProbMap, SegMask};

use crate::error::Result;
use crate::export::class_color;
use crate::io::{encode_mask, save_probmap, to_json_bytes, write_file, RgbImage};
use crate::manifest::{ClassEntry, Manifest, Record, MANIFEST_SCHEMA_VERSION};

pub const CLASS_NAMES: [&str; 5] = ["ground", "building", "person", "car", "sign"];
const GROUND: u16 = 1;
const BUILDING: u16 = 2;
const PERSON: u16 = 3;
const CAR: u16 = 4;
const SIGN: u16 = 5;

/// Classes the benchmark may drop.
pub const OBJECT_CLASSES: [&str; 3] = ["person", "car", "sign"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Probability that the predictor misses an object entirely.
    pub miss_rate: f64,
    pub max_hallucinations: usize,
    /// Std of the logit noise.
    pub noise: f64,
    /// Factor on the logit margin of pixels at a predicted class boundary.
    pub boundary_factor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 200,
            width: 256,
            height: 256,
            seed: 7,
            miss_rate: 0.08,
            max_hallucinations: 5,
            noise: 0.2,
            boundary_factor: 0.6,
        }
    }
}

struct Rng(ChaCha8Rng);

impl Rng {
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    fn int(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + (self.0.next_u64() % (hi_inclusive - lo + 1) as u64) as usize
    }

    /// Standard normal by Box-Muller.
    fn normal(&mut self) -> f64 {
        let u = self.unit().max(f64::MIN_POSITIVE);
        let v = self.unit();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { top: f64, left: f64, h: f64, w: f64 },
}

impl Shape {
    fn contains(&self, r: usize, c: usize) -> bool {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Rect { top, left, h, w } => y >= top && y < top + h && x >= left && x < left + w,
        }
    }

    /// Inclusive pixel box `(r0, c0, r1, c1)` grown by `margin`.
    fn bounds(&self, margin: f64) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                (cy - ry - margin, cx - rx - margin, cy + ry + margin, cx + rx + margin)
            }
            Shape::Rect { top, left, h, w } => (top - margin, left - margin, top + h + margin, left + w + margin),
        }
    }
}

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

fn random_object(rng: &mut Rng, w: usize, h: usize, horizon: usize, class: u16) -> Shape {
    let (w, h) = (w as f64, h as f64);
    match class {
        PERSON => {
            let (ry, rx) = (rng.range(14.0, 36.0), rng.range(6.0, 13.0));
            Shape::Ellipse {
                cy: rng.range(horizon as f64, h - ry),
                cx: rng.range(rx, w - rx),
                ry,
                rx,
            }
        }
        CAR => {
            let (bh, bw) = (rng.range(22.0, 55.0), rng.range(40.0, 110.0));
            Shape::Rect {
                top: rng.range(horizon as f64 - bh / 2.0, h - bh),
                left: rng.range(0.0, w - bw),
                h: bh,
                w: bw,
            }
        }
        _ => {
            let r = rng.range(8.0, 24.0);
            Shape::Ellipse {
                cy: rng.range(r, h - r),
                cx: rng.range(r, w - r),
                ry: r,
                rx: r,
            }
        }
    }
}

/// Places up to `n` shapes whose boxes (grown by `gap`) avoid `taken`.
fn place(
    rng: &mut Rng,
    n: usize,
    taken: &mut Vec<(f64, f64, f64, f64)>,
    gap: f64,
    mut make: impl FnMut(&mut Rng) -> (u16, Shape),
) -> Vec<(u16, Shape)> {
    let mut out = Vec::new();
    for _ in 0..n {
        for _attempt in 0..50 {
            let (class, s) = make(rng);
            let b = s.bounds(gap);
            if taken.iter().all(|t| !overlaps(*t, b)) {
                taken.push(b);
                out.push((class, s));
                break;
            }
        }
    }
    out
}

fn paint(mask: &mut [u16], w: usize, h: usize, class: u16, s: &Shape) {
    let (r0, c0, r1, c1) = s.bounds(1.0);
    let rows = (r0.max(0.0) as usize)..=(r1.min(h as f64 - 1.0).max(0.0) as usize);
    for r in rows {
        for c in (c0.max(0.0) as usize)..=(c1.min(w as f64 - 1.0).max(0.0) as usize) {
            if s.contains(r, c) {
                mask[r * w + c] = class;
            }
        }
    }
}

/// Pixels of `class` in `mask`, dilated (`radius > 0`) or eroded
/// (`radius < 0`) with a square window, written into `out` as `class`.
/// Eroded-away pixels are left to `fallback`.
fn morph(mask: &[u16], w: usize, h: usize, class: u16, radius: i64, fallback: &[u16], out: &mut [u16]) {
    let r = radius.unsigned_abs() as i64;
    let at = |y: i64, x: i64| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize] == class
    };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let window = || (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (y + dy, x + dx)));
            if radius >= 0 {
                if at(y, x) || (radius > 0 && window().any(|(yy, xx)| at(yy, xx))) {
                    out[i] = class;
                }
            } else if at(y, x) {
                out[i] = if window().all(|(yy, xx)| at(yy, xx)) {
                    class
                } else {
                    fallback[i]
                };
            }
        }
    }
}

pub struct Scene {
    pub clean: SegMask,
    pub background: SegMask,
    pub probs: ProbMap,
    pub rgb: RgbImage,
}

pub fn scene(cfg: &SynthConfig, index: usize) -> Scene {
    let mut rng = Rng({
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(index as u64);
        r
    });
    let (w, h) = (cfg.width, cfg.height);
    let classes = CLASS_NAMES.len() as u16;
    let horizon = rng.int(h * 27 / 100, h * 50 / 100);
    let background: Vec<u16> = (0..w * h)
        .map(|i| if i / w < horizon { BUILDING } else { GROUND })
        .collect();

    let mut taken = Vec::new();
    let n_objects = rng.int(5, 9);
    let objects = place(&mut rng, n_objects, &mut taken, 4.0, |rng| {
        let u = rng.unit();
        let class = if u < 0.4 {
            CAR
        } else if u < 0.75 {
            PERSON
        } else {
            SIGN
        };
        (class, random_object(rng, w, h, horizon, class))
    });
    let n_fake = rng.int(1, cfg.max_hallucinations.max(1));
    let fakes = place(&mut rng, n_fake, &mut taken, 4.0, |rng| {
        let class = [PERSON, CAR, SIGN][rng.int(0, 2)];
        let (ry, rx) = (rng.range(4.0, 22.0), rng.range(4.0, 22.0));
        let s = Shape::Ellipse {
            cy: rng.range(ry, h as f64 - ry),
            cx: rng.range(rx, w as f64 - rx),
            ry,
            rx,
        };
        (class, s)
    });

    let mut clean = background.clone();
    for (class, s) in &objects {
        paint(&mut clean, w, h, *class, s);
    }

    // predicted labels and per-pixel confidence margin
    let mut pred = background.clone();
    let mut margin = vec![0.0f64; w * h];
    let base_margin = rng.range(3.0, 4.0);
    margin.iter_mut().for_each(|m| *m = base_margin);
    let mut single = vec![0u16; w * h];
    let mut draw = |class: u16, s: &Shape, radius: i64, conf: f64, pred: &mut Vec<u16>, margin: &mut Vec<f64>| {
        single.iter_mut().for_each(|v| *v = 0);
        paint(&mut single, w, h, class, s);
        let mut grown = vec![0u16; w * h];
        morph(&single, w, h, class, radius, &vec![0; w * h], &mut grown);
        for i in 0..w * h {
            if grown[i] == class {
                pred[i] = class;
                margin[i] = conf;
            }
        }
    };
    for (class, s) in &objects {
        if rng.unit() < cfg.miss_rate {
            continue;
        }
        let radius = rng.int(0, 4) as i64 - 2;
        let conf = rng.range(2.2, 4.0);
        draw(*class, s, radius, conf, &mut pred, &mut margin);
    }
    for (class, s) in &fakes {
        let conf = if rng.unit() < 0.1 {
            rng.range(2.2, 3.5)
        } else {
            rng.range(0.7, 1.8)
        };
        draw(*class, s, 0, conf, &mut pred, &mut margin);
    }
    // boundaries are less certain
    let soft: Vec<bool> = (0..w * h)
        .map(|i| {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            [(0, 1), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                yy >= 0
                    && xx >= 0
                    && (yy as usize) < h
                    && (xx as usize) < w
                    && pred[yy as usize * w + xx as usize] != pred[i]
            })
        })
        .collect();

    let c = classes as usize;
    let mut data = Vec::with_capacity(w * h * c);
    let mut logits = vec![0.0f64; c];
    for i in 0..w * h {
        let m = if soft[i] {
            margin[i] * cfg.boundary_factor
        } else {
            margin[i]
        };
        for (k, l) in logits.iter_mut().enumerate() {
            *l = cfg.noise * rng.normal();
            if k as u16 + 1 == pred[i] {
                *l += m;
            } else if k as u16 + 1 == background[i] {
                *l += 0.5;
            }
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        data.extend(logits.iter().map(|l| ((l - top).exp() / sum) as f32));
    }

    let mut rgb = RgbImage::new(w, h);
    for (i, &class) in clean.iter().enumerate() {
        let base = class_color(class);
        let jitter = (rng.0.next_u32() % 21) as i16 - 10;
        rgb.set(i / w, i % w, base.map(|v| (v as i16 + jitter).clamp(0, 255) as u8));
    }

    Scene {
        clean: SegMask::new(w, h, classes, clean).expect("valid labels"),
        background: SegMask::new(w, h, classes, background).expect("valid labels"),
        probs: ProbMap::new_unchecked(w, h, classes, data).expect("sized payload"),
        rgb,
    }
}

/// Writes every scene plus a clean manifest and a matching config file.
pub fn generate(out: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    let records = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| {
            let s = scene(cfg, i);
            let name = format!("scene_{i:04}");
            let rel = |dir: &str, ext: &str| PathBuf::from(format!("{dir}/{name}.{ext}"));
            write_file(&out.join(rel("gt", "png")), &encode_mask(&s.clean))?;
            write_file(&out.join(rel("background", "png")), &encode_mask(&s.background))?;
            write_file(&out.join(rel("rgb", "png")), &s.rgb.encode_png())?;
            save_probmap(&out.join(rel("probs", "sapm")), &s.probs)?;
            Ok(Record {
                image: name.clone(),
                rgb: Some(rel("rgb", "png")),
                gt_mask: Some(rel("gt", "png")),
                probs: rel("probs", "sapm"),
                background: Some(rel("background", "png")),
                ..Record::default()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        dataset: "synthetic".into(),
        classes: CLASS_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| ClassEntry {
                id: i as u16 + 1,
                name: n.to_string(),
            })
            .collect(),
        registry: None,
        records,
    };
    write_file(&out.join("manifest.json"), &to_json_bytes(&manifest))?;
    let eligible = OBJECT_CLASSES.map(|c| format!("\"{c}\"")).join(", ");
    let config = format!("[perturb]\neligible_classes = [{eligible}]\nfill = \"background\"\n");
    write_file(&out.join("config.toml"), config.as_bytes())?;
    Ok(manifest)
}
