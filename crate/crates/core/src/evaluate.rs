//! Scoring label-error detection against a registry of known errors.
//!
//! Selected candidates are matched against registry components with the
//! same sIoU / pi rule used for the segmentation itself: a registry entry is
//! found when its sIoU exceeds `tau`, a selected candidate is a false alarm
//! when its pi is at most `tau`. Counts are summed over images.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::component::Component;
use crate::detect::{rank_order, Candidate};
use crate::error::{Error, Result};
use crate::matching::{match_components, GtStatus};
use crate::perturb::ErrorRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    fn sub(&mut self, o: Counts) {
        self.tp -= o.tp;
        self.fp -= o.fp;
        self.fn_ -= o.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub t: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl DetectionOutcome {
    /// Ratios with an empty denominator are 0.
    pub fn from_counts(t: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        Self {
            t,
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }

    /// Outcome of the summed counts.
    pub fn sum<'a>(t: f64, rows: impl IntoIterator<Item = &'a DetectionOutcome>) -> Self {
        let mut c = Counts::default();
        for r in rows {
            c.add(r.counts());
        }
        Self::from_counts(t, c.tp, c.fp, c.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub t: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall at every distinct candidate score, in order of
/// decreasing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

impl PrCurve {
    /// Step integration `sum (r_i - r_{i-1}) p_i` starting from recall 0.
    pub fn from_outcomes(outcomes: &[DetectionOutcome]) -> Self {
        let points: Vec<PrPoint> = outcomes
            .iter()
            .map(|o| PrPoint {
                t: o.t,
                recall: o.recall,
                precision: o.precision,
            })
            .collect();
        let mut ap = 0.0;
        let mut prev = 0.0;
        for p in &points {
            ap += (p.recall - prev) * p.precision;
            prev = p.recall;
        }
        Self { points, ap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: u16,
    pub outcome: DetectionOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub rows: Vec<ClassRow>,
    pub overall: DetectionOutcome,
}

impl ClassReport {
    /// Overall row as the sum of the class rows.
    pub fn from_rows(t: f64, rows: Vec<ClassRow>) -> Self {
        let overall = DetectionOutcome::sum(t, rows.iter().map(|r| &r.outcome));
        Self { rows, overall }
    }
}

/// Registry entries of a fixed image set, grouped per image.
#[derive(Debug, Clone)]
pub struct Benchmark<'a> {
    tau: f64,
    entries: BTreeMap<&'a str, Vec<&'a Component>>,
}

type Grouped<'b> = BTreeMap<&'b str, Vec<&'b Candidate>>;

impl<'a> Benchmark<'a> {
    /// Fails when the registry names an image outside `images`.
    pub fn new<I>(images: I, registry: &'a ErrorRegistry, tau: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::InvalidParameter("tau must lie in [0, 1)".to_string()));
        }
        let mut entries: BTreeMap<&'a str, Vec<&'a Component>> = images.into_iter().map(|i| (i, Vec::new())).collect();
        for e in &registry.entries {
            entries
                .get_mut(e.image.as_str())
                .ok_or_else(|| Error::UnknownImage(e.image.clone()))?
                .push(&e.component);
        }
        Ok(Self { tau, entries })
    }

    /// Image set taken from the registry and the candidates.
    pub fn covering(registry: &'a ErrorRegistry, candidates: &'a [Candidate], tau: f64) -> Result<Self> {
        let images: BTreeSet<&str> = registry
            .entries
            .iter()
            .map(|e| e.image.as_str())
            .chain(candidates.iter().map(|c| c.image.as_str()))
            .collect();
        Self::new(images, registry, tau)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn images(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.entries.keys().copied()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Classes occurring in the registry.
    pub fn classes(&self) -> BTreeSet<u16> {
        self.entries.values().flatten().map(|k| k.class_id).collect()
    }

    fn restrict_class(&self, class: u16) -> Benchmark<'a> {
        Benchmark {
            tau: self.tau,
            entries: self
                .entries
                .iter()
                .map(|(i, v)| (*i, v.iter().copied().filter(|k| k.class_id == class).collect()))
                .collect(),
        }
    }

    fn group<'b>(&self, candidates: &'b [Candidate]) -> Result<Grouped<'b>> {
        let mut out: Grouped<'b> = BTreeMap::new();
        for c in candidates {
            if !self.entries.contains_key(c.image.as_str()) {
                return Err(Error::UnknownImage(c.image.clone()));
            }
            if c.score.is_nan() {
                return Err(Error::InvalidParameter("candidate score is NaN".to_string()));
            }
            out.entry(c.image.as_str()).or_default().push(c);
        }
        Ok(out)
    }

    fn image_counts(&self, image: &str, selected: &[&Component]) -> Result<Counts> {
        let entries = &self.entries[image];
        if selected.is_empty() {
            return Ok(Counts {
                fn_: entries.len(),
                ..Counts::default()
            });
        }
        let m = match_components(entries, selected, self.tau)?;
        let tp = m.gt.iter().filter(|g| g.status == GtStatus::TruePositive).count();
        Ok(Counts {
            tp,
            fn_: m.gt.len() - tp,
            fp: m.pred.iter().filter(|p| p.is_false_positive()).count(),
        })
    }

    /// Counts with the candidates of score at least `t` selected.
    pub fn evaluate(&self, candidates: &[Candidate], t: f64) -> Result<DetectionOutcome> {
        let grouped = self.group(candidates)?;
        let mut total = Counts::default();
        for image in self.entries.keys() {
            let selected: Vec<&Component> = grouped
                .get(image)
                .into_iter()
                .flatten()
                .filter(|c| c.score >= t)
                .map(|c| &c.component)
                .collect();
            total.add(self.image_counts(image, &selected)?);
        }
        Ok(DetectionOutcome::from_counts(t, total.tp, total.fp, total.fn_))
    }

    /// Outcome at every distinct candidate score, decreasing. Lowering the
    /// threshold only changes the images that gain a candidate, so only
    /// those are rematched.
    pub fn sweep(&self, candidates: &[Candidate]) -> Result<Vec<DetectionOutcome>> {
        self.group(candidates)?;
        let mut ranked: Vec<&Candidate> = candidates.iter().collect();
        ranked.sort_by(|a, b| rank_order(a, b));

        let mut per_image: BTreeMap<&str, (Vec<&Component>, Counts)> = BTreeMap::new();
        let mut total = Counts::default();
        for (image, entries) in &self.entries {
            let c = Counts {
                fn_: entries.len(),
                ..Counts::default()
            };
            total.add(c);
            per_image.insert(image, (Vec::new(), c));
        }

        let mut out = Vec::new();
        let mut i = 0;
        while i < ranked.len() {
            let t = ranked[i].score;
            let mut touched = BTreeSet::new();
            while i < ranked.len() && ranked[i].score == t {
                let c = ranked[i];
                per_image
                    .get_mut(c.image.as_str())
                    .expect("validated image")
                    .0
                    .push(&c.component);
                touched.insert(c.image.as_str());
                i += 1;
            }
            for image in touched {
                let (selected, counts) = per_image.get_mut(image).expect("validated image");
                total.sub(*counts);
                *counts = self.image_counts(image, selected)?;
                total.add(*counts);
            }
            out.push(DetectionOutcome::from_counts(t, total.tp, total.fp, total.fn_));
        }
        Ok(out)
    }

    /// Threshold with maximal F1 among the distinct candidate scores; ties go
    /// to the largest threshold.
    pub fn best_f1(&self, candidates: &[Candidate]) -> Result<DetectionOutcome> {
        let mut best: Option<DetectionOutcome> = None;
        for o in self.sweep(candidates)? {
            if best.is_none_or(|b| o.f1 > b.f1) {
                best = Some(o);
            }
        }
        best.ok_or(Error::NoCandidates)
    }

    pub fn average_precision(&self, candidates: &[Candidate]) -> Result<PrCurve> {
        Ok(PrCurve::from_outcomes(&self.sweep(candidates)?))
    }

    /// One row per class present among registry entries or candidates.
    /// Matching never pairs different classes, so the rows add up to the
    /// overall outcome.
    pub fn per_class(&self, candidates: &[Candidate], t: f64) -> Result<ClassReport> {
        self.group(candidates)?;
        let mut classes = self.classes();
        classes.extend(candidates.iter().map(|c| c.class_id));
        let rows = classes
            .into_iter()
            .map(|class| {
                let own: Vec<Candidate> = candidates.iter().filter(|c| c.class_id == class).cloned().collect();
                Ok(ClassRow {
                    class_id: class,
                    outcome: self.restrict_class(class).evaluate(&own, t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassReport::from_rows(t, rows))
    }

    /// Class-agnostic coverage for reviews of whole annotation components:
    /// an entry is found when any reviewed component overlaps it, and a
    /// reviewed component is a false alarm when it overlaps no entry. The
    /// reported threshold is 0 since everything is reviewed.
    pub fn coverage(&self, reviewed: &[Candidate]) -> Result<DetectionOutcome> {
        let grouped = self.group(reviewed)?;
        let mut total = Counts::default();
        for (image, entries) in &self.entries {
            let comps: Vec<&Component> = grouped.get(image).into_iter().flatten().map(|c| &c.component).collect();
            let touches = |a: &Component, b: &Component| a.bbox.intersects(&b.bbox) && a.pixels.intersects(&b.pixels);
            let found = entries.iter().filter(|e| comps.iter().any(|c| touches(e, c))).count();
            total.tp += found;
            total.fn_ += entries.len() - found;
            total.fp += comps.iter().filter(|c| !entries.iter().any(|e| touches(e, c))).count();
        }
        Ok(DetectionOutcome::from_counts(0.0, total.tp, total.fp, total.fn_))
    }
}

/// Detection outcome over the images named by the registry and candidates.
pub fn evaluate_detection(
    candidates: &[Candidate],
    registry: &ErrorRegistry,
    t: f64,
    tau: f64,
) -> Result<DetectionOutcome> {
    Benchmark::covering(registry, candidates, tau)?.evaluate(candidates, t)
}

pub fn best_f1_threshold(
    candidates: &[Candidate],
    registry: &ErrorRegistry,
    tau: f64,
) -> Result<(f64, DetectionOutcome)> {
    let best = Benchmark::covering(registry, candidates, tau)?.best_f1(candidates)?;
    Ok((best.t, best))
}

pub fn average_precision(candidates: &[Candidate], registry: &ErrorRegistry, tau: f64) -> Result<PrCurve> {
    Benchmark::covering(registry, candidates, tau)?.average_precision(candidates)
}

pub fn per_class_report(candidates: &[Candidate], registry: &ErrorRegistry, t: f64, tau: f64) -> Result<ClassReport> {
    Benchmark::covering(registry, candidates, tau)?.per_class(candidates, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::Origin;
    use crate::perturb::{DropReason, RegistryEntry};
    use crate::pixels::PixelSet;
    use alloc::string::String;
    use alloc::vec;

    const DIMS: (usize, usize) = (16, 16);

    fn square(id: u32, class: u16, row: u32, col: u32, side: u32) -> Component {
        let px = (row..row + side).flat_map(|r| (col..col + side).map(move |c| (r, c)));
        Component::from_pixels(id, class, PixelSet::from_pixels(px), Origin::Prediction, DIMS).unwrap()
    }

    fn entry(image: &str, k: Component) -> RegistryEntry {
        RegistryEntry {
            image: String::from(image),
            reason: DropReason::Component { clean_id: k.id },
            seed_key: k.id as u64,
            component: Component {
                origin: Origin::GroundTruth,
                ..k
            },
        }
    }

    fn cand(image: &str, k: Component, score: f64) -> Candidate {
        Candidate::new(image, k, score, 32)
    }

    #[test]
    fn empty_everything() {
        let o = evaluate_detection(&[], &ErrorRegistry::default(), 0.5, 0.25).unwrap();
        assert_eq!((o.tp, o.fp, o.fn_), (0, 0, 0));
        assert_eq!((o.precision, o.recall, o.f1), (0.0, 0.0, 0.0));
        let ap = average_precision(&[], &ErrorRegistry::default(), 0.25).unwrap();
        assert_eq!(ap.ap, 0.0);
        assert_eq!(
            best_f1_threshold(&[], &ErrorRegistry::default(), 0.25),
            Err(Error::NoCandidates)
        );
    }

    #[test]
    fn exact_cover_is_perfect() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3)), entry("b", square(1, 3, 5, 5, 2))],
        };
        let cands = vec![
            cand("a", square(4, 2, 0, 0, 3), 0.8),
            cand("b", square(2, 3, 5, 5, 2), 0.6),
        ];
        let o = evaluate_detection(&cands, &reg, 0.5, 0.25).unwrap();
        assert_eq!((o.precision, o.recall, o.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_of_two_found_with_two_false_alarms() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3)), entry("a", square(2, 2, 10, 10, 3))],
        };
        let cands = vec![
            cand("a", square(1, 2, 0, 0, 3), 0.9),
            cand("a", square(2, 2, 5, 5, 2), 0.9),
            cand("a", square(3, 1, 10, 10, 3), 0.9),
        ];
        let o = evaluate_detection(&cands, &reg, 0.5, 0.25).unwrap();
        assert_eq!((o.tp, o.fn_, o.fp), (1, 1, 2));
        assert!((o.precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(o.recall, 0.5);
    }

    #[test]
    fn best_threshold_skips_trailing_false_alarm() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3))],
        };
        let cands = vec![
            cand("a", square(1, 2, 0, 0, 3), 0.9),
            cand("a", square(2, 2, 8, 8, 3), 0.1),
        ];
        let (t, o) = best_f1_threshold(&cands, &reg, 0.25).unwrap();
        assert_eq!(t, 0.9);
        assert_eq!(o.f1, 1.0);
    }

    #[test]
    fn all_false_ties_to_largest_threshold() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3))],
        };
        let cands = vec![
            cand("a", square(1, 2, 8, 8, 3), 0.7),
            cand("a", square(2, 2, 12, 0, 3), 0.3),
        ];
        let (t, o) = best_f1_threshold(&cands, &reg, 0.25).unwrap();
        assert_eq!((t, o.f1), (0.7, 0.0));
    }

    #[test]
    fn ap_of_false_alarm_ranked_first() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3))],
        };
        let cands = vec![
            cand("a", square(1, 2, 8, 8, 3), 0.9),
            cand("a", square(2, 2, 0, 0, 3), 0.5),
        ];
        let curve = average_precision(&cands, &reg, 0.25).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!((curve.points[0].recall, curve.points[0].precision), (0.0, 0.0));
        assert_eq!((curve.points[1].recall, curve.points[1].precision), (1.0, 0.5));
        assert_eq!(curve.ap, 0.5);
    }

    #[test]
    fn perfect_ranking_ap_is_one() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3)), entry("a", square(2, 3, 10, 10, 3))],
        };
        let cands = vec![
            cand("a", square(1, 2, 0, 0, 3), 0.9),
            cand("a", square(2, 3, 10, 10, 3), 0.8),
            cand("a", square(3, 1, 5, 5, 2), 0.2),
        ];
        assert_eq!(average_precision(&cands, &reg, 0.25).unwrap().ap, 1.0);
    }

    #[test]
    fn sweep_matches_pointwise_evaluation() {
        let reg = ErrorRegistry {
            entries: vec![
                entry("a", square(1, 2, 0, 0, 3)),
                entry("b", square(1, 2, 4, 4, 4)),
                entry("b", square(2, 1, 12, 12, 2)),
            ],
        };
        let cands = vec![
            cand("a", square(1, 2, 0, 0, 2), 0.4),
            cand("b", square(1, 2, 4, 4, 2), 0.9),
            cand("b", square(2, 2, 6, 6, 2), 0.4),
            cand("b", square(3, 1, 0, 12, 2), 0.7),
        ];
        let bench = Benchmark::covering(&reg, &cands, 0.25).unwrap();
        for o in bench.sweep(&cands).unwrap() {
            assert_eq!(o, bench.evaluate(&cands, o.t).unwrap());
        }
    }

    #[test]
    fn unknown_image_rejected() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3))],
        };
        let bench = Benchmark::new(["a"], &reg, 0.25).unwrap();
        let cands = vec![cand("z", square(1, 2, 0, 0, 3), 0.9)];
        assert_eq!(bench.evaluate(&cands, 0.5), Err(Error::UnknownImage("z".into())));
        assert!(matches!(Benchmark::new(["b"], &reg, 0.25), Err(Error::UnknownImage(_))));
    }

    #[test]
    fn class_rows_add_up() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3)), entry("a", square(2, 3, 10, 10, 3))],
        };
        let cands = vec![
            cand("a", square(1, 2, 0, 0, 3), 0.9),
            cand("a", square(2, 1, 5, 5, 2), 0.8),
        ];
        let rep = per_class_report(&cands, &reg, 0.5, 0.25).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert_eq!(rep.overall, evaluate_detection(&cands, &reg, 0.5, 0.25).unwrap());
    }

    #[test]
    fn single_class_row_equals_overall() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 0, 0, 3))],
        };
        let cands = vec![cand("a", square(1, 2, 0, 0, 3), 0.9)];
        let rep = per_class_report(&cands, &reg, 0.5, 0.25).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].outcome, rep.overall);
    }

    #[test]
    fn coverage_ignores_class() {
        let reg = ErrorRegistry {
            entries: vec![entry("a", square(1, 2, 2, 2, 3)), entry("a", square(2, 2, 12, 12, 2))],
        };
        // a large road component swallowing the first dropped region
        let road = square(1, 1, 0, 0, 8);
        let sky = square(2, 3, 9, 0, 2);
        let o = Benchmark::covering(&reg, &[], 0.25)
            .unwrap()
            .coverage(&[cand("a", road, 1.0), cand("a", sky, 1.0)])
            .unwrap();
        assert_eq!((o.tp, o.fn_, o.fp), (1, 1, 1));
    }
}
