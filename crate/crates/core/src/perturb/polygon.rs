use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::registry::{removed_pieces, DropReason, ErrorRegistry, RegistryEntry};
use super::sampling::{drops, PerturbConfig};
use crate::component::{Component, Origin};
use crate::error::{Error, Result};
use crate::pixels::{PixelSet, Run};
use crate::raster::SegMask;

/// Polygon annotation in the layout of Cityscapes `gtFine_polygons.json`.
/// Vertices are `[x, y]` in pixel units; objects are drawn in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolygonAnnotation {
    pub img_height: usize,
    pub img_width: usize,
    pub objects: Vec<PolygonObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonObject {
    pub label: String,
    pub polygon: Vec<[f64; 2]>,
}

impl PolygonObject {
    /// Shoelace area, unsigned.
    pub fn area(&self) -> f64 {
        let p = &self.polygon;
        if p.len() < 3 {
            return 0.0;
        }
        let mut twice = 0.0;
        for i in 0..p.len() {
            let (a, b) = (p[i], p[(i + 1) % p.len()]);
            twice += a[0] * b[1] - b[0] * a[1];
        }
        (twice / 2.0).abs()
    }
}

/// Class name to class id. Names may map to 0 to paint void.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassTable {
    pub classes: u16,
    pub ids: BTreeMap<String, u16>,
}

impl ClassTable {
    pub fn new<I, S>(classes: u16, names: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u16)>,
        S: Into<String>,
    {
        let ids: BTreeMap<String, u16> = names.into_iter().map(|(n, i)| (n.into(), i)).collect();
        if let Some((n, &i)) = ids.iter().find(|(_, &i)| i > classes) {
            return Err(Error::InvalidParameter(alloc::format!(
                "class `{}` has id {} > {}",
                n,
                i,
                classes
            )));
        }
        Ok(Self { classes, ids })
    }

    pub fn id(&self, name: &str) -> Result<u16> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.ids.iter().find(|(_, &i)| i == id).map(|(n, _)| n.as_str())
    }
}

/// Result of [`rasterize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterization {
    pub mask: SegMask,
    /// Per pixel, `index + 1` of the top-most object covering it (0: none).
    pub top_object: Vec<u32>,
    /// Objects skipped for having zero area or fewer than 3 vertices.
    pub skipped: Vec<usize>,
}

impl Rasterization {
    /// Pixels where object `index` is on top.
    pub fn visible(&self, index: usize) -> PixelSet {
        let w = self.mask.width();
        let key = index as u32 + 1;
        let mut runs = Vec::new();
        for (r, row) in self.top_object.chunks_exact(w.max(1)).enumerate() {
            let mut c = 0;
            while c < w {
                if row[c] == key {
                    let s = c;
                    while c < w && row[c] == key {
                        c += 1;
                    }
                    runs.push(Run::new(r as u32, s as u32, c as u32));
                } else {
                    c += 1;
                }
            }
        }
        PixelSet::from_runs(runs)
    }
}

/// Column spans `[start, end)` whose pixel centres lie inside the polygon on
/// row `row` (even-odd rule).
fn row_spans(poly: &[[f64; 2]], row: usize, width: usize, out: &mut Vec<(usize, usize)>) {
    let y = row as f64 + 0.5;
    let mut xs: Vec<f64> = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ya, yb) = (a[1], b[1]);
        if (ya <= y && y < yb) || (yb <= y && y < ya) {
            xs.push(a[0] + (y - ya) * (b[0] - a[0]) / (yb - ya));
        }
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    for pair in xs.chunks_exact(2) {
        // centre c + 0.5 in [x0, x1)
        let start = libm::ceil(pair[0] - 0.5).max(0.0);
        let end = libm::ceil(pair[1] - 0.5).min(width as f64);
        if start < end {
            out.push((start as usize, end as usize));
        }
    }
}

/// Scanline fill of all objects in draw order; later objects overwrite
/// earlier ones. Uncovered pixels stay void.
pub fn rasterize(ann: &PolygonAnnotation, table: &ClassTable) -> Result<Rasterization> {
    let (w, h) = (ann.img_width, ann.img_height);
    let mut data = vec![0u16; w * h];
    let mut top = vec![0u32; w * h];
    let mut skipped = Vec::new();
    let mut spans = Vec::new();
    for (i, obj) in ann.objects.iter().enumerate() {
        let class = table.id(&obj.label)?;
        if !(obj.polygon.len() >= 3 && obj.area() > 0.0) {
            skipped.push(i);
            continue;
        }
        let (min_y, max_y) = obj
            .polygon
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[1]), hi.max(p[1]))
            });
        let r0 = libm::floor(min_y).max(0.0) as usize;
        let r1 = (libm::ceil(max_y).max(0.0) as usize).min(h);
        for r in r0..r1 {
            spans.clear();
            row_spans(&obj.polygon, r, w, &mut spans);
            for &(s, e) in &spans {
                data[r * w + s..r * w + e].fill(class);
                top[r * w + s..r * w + e].fill(i as u32 + 1);
            }
        }
    }
    Ok(Rasterization {
        mask: SegMask::new(w, h, table.classes, data)?,
        top_object: top,
        skipped,
    })
}

/// Result of [`perturb_polygons`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonPerturbation {
    pub annotation: PolygonAnnotation,
    pub clean: SegMask,
    pub perturbed: SegMask,
    pub registry: ErrorRegistry,
    /// Indices (into the clean annotation) of the dropped objects.
    pub dropped: Vec<usize>,
}

/// Drops eligible polygons by independent Bernoulli trials on their visible
/// pixel count in the clean rasterization.
///
/// Registry entries are the connected pieces of each dropped polygon's
/// visible region that lost the polygon's class in the perturbed mask.
pub fn perturb_polygons(
    ann: &PolygonAnnotation,
    table: &ClassTable,
    cfg: &PerturbConfig,
    image: &str,
) -> Result<PolygonPerturbation> {
    cfg.validate()?;
    let clean = rasterize(ann, table)?;
    let mut dropped = Vec::new();
    for (i, obj) in ann.objects.iter().enumerate() {
        let class = table.id(&obj.label)?;
        if !cfg.is_eligible(class) {
            continue;
        }
        if drops(clean.visible(i).len(), cfg, image, i as u64) {
            dropped.push(i);
        }
    }

    let annotation = PolygonAnnotation {
        img_height: ann.img_height,
        img_width: ann.img_width,
        objects: ann
            .objects
            .iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, o)| o.clone())
            .collect(),
    };
    let perturbed = rasterize(&annotation, table)?.mask;

    let mut registry = ErrorRegistry::default();
    let dims = perturbed.dims();
    for &i in &dropped {
        let obj = &ann.objects[i];
        let class = table.id(&obj.label)?;
        for piece in removed_pieces(&clean.visible(i), class, &perturbed) {
            let id = registry.len() as u32 + 1;
            if let Some(component) = Component::from_pixels(id, class, piece, Origin::GroundTruth, dims) {
                registry.entries.push(RegistryEntry {
                    image: image.to_string(),
                    component,
                    reason: DropReason::Polygon {
                        index: i,
                        label: obj.label.clone(),
                    },
                    seed_key: i as u64,
                });
            }
        }
    }

    Ok(PolygonPerturbation {
        annotation,
        clean: clean.mask,
        perturbed,
        registry,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn rect(label: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> PolygonObject {
        PolygonObject {
            label: label.to_string(),
            polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    fn table() -> ClassTable {
        ClassTable::new(3, [("road", 1u16), ("car", 2), ("person", 3)]).unwrap()
    }

    #[test]
    fn integer_rectangle() {
        let ann = PolygonAnnotation {
            img_height: 4,
            img_width: 5,
            objects: vec![rect("car", 1.0, 1.0, 4.0, 3.0)],
        };
        let m = rasterize(&ann, &table()).unwrap().mask;
        let labeled: Vec<(usize, usize)> = (0..4)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .filter(|&(r, c)| m.get(r, c) == 2)
            .collect();
        let expected: Vec<(usize, usize)> = (1..=2).flat_map(|r| (1..=3).map(move |c| (r, c))).collect();
        assert_eq!(labeled, expected);
        assert_eq!(m.data().iter().filter(|&&v| v == 0).count(), 20 - 6);
    }

    #[test]
    fn later_objects_overwrite() {
        let ann = PolygonAnnotation {
            img_height: 4,
            img_width: 4,
            objects: vec![rect("road", 0.0, 0.0, 3.0, 3.0), rect("person", 2.0, 2.0, 4.0, 4.0)],
        };
        let r = rasterize(&ann, &table()).unwrap();
        assert_eq!(r.mask.get(2, 2), 3);
        assert_eq!(r.mask.get(1, 1), 1);
        assert_eq!(r.visible(0).len(), 8);
        assert_eq!(r.visible(1).len(), 4);
    }

    #[test]
    fn empty_annotation_is_void_and_degenerates_are_skipped() {
        let mut ann = PolygonAnnotation {
            img_height: 3,
            img_width: 3,
            objects: vec![],
        };
        assert!(rasterize(&ann, &table()).unwrap().mask.data().iter().all(|&v| v == 0));
        ann.objects.push(PolygonObject {
            label: "car".into(),
            polygon: vec![[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]],
        });
        let r = rasterize(&ann, &table()).unwrap();
        assert_eq!(r.skipped, vec![0]);
        ann.objects.push(rect("bus", 0.0, 0.0, 1.0, 1.0));
        assert!(matches!(rasterize(&ann, &table()), Err(Error::UnknownClass(_))));
    }

    fn big_scene() -> PolygonAnnotation {
        // 500-pixel car visible on top of the road
        PolygonAnnotation {
            img_height: 40,
            img_width: 60,
            objects: vec![rect("road", 0.0, 0.0, 60.0, 40.0), rect("car", 10.0, 10.0, 35.0, 30.0)],
        }
    }

    fn cfg(p_hat: f64) -> PerturbConfig {
        PerturbConfig {
            p_hat,
            eligible_classes: BTreeSet::from([2u16, 3]),
            size_min: 500,
            size_max: 10_000,
            seed: 9,
        }
    }

    #[test]
    fn p_hat_zero_is_identity() {
        let ann = big_scene();
        let out = perturb_polygons(&ann, &table(), &cfg(0.0), "img").unwrap();
        assert_eq!(out.annotation, ann);
        assert!(out.registry.is_empty());
        assert_eq!(out.clean, out.perturbed);
    }

    #[test]
    fn certain_drop_registers_the_component() {
        let out = perturb_polygons(&big_scene(), &table(), &cfg(1.0), "img").unwrap();
        assert_eq!(out.dropped, vec![1]);
        assert_eq!(out.annotation.objects.len(), 1);
        assert_eq!(out.registry.len(), 1);
        let e = &out.registry.entries[0];
        assert_eq!(e.size(), 500);
        assert_eq!(e.class_id(), 2);
        // exposed region falls back to the road underneath
        assert!(e
            .component
            .pixels
            .iter()
            .all(|(r, c)| out.perturbed.get(r as usize, c as usize) == 1));
    }

    #[test]
    fn exposed_pixels_become_void() {
        let ann = PolygonAnnotation {
            img_height: 40,
            img_width: 60,
            objects: vec![rect("car", 10.0, 10.0, 40.0, 30.0)],
        };
        let mut c = cfg(1.0);
        c.size_min = 600;
        let out = perturb_polygons(&ann, &table(), &c, "img").unwrap();
        assert!(out.perturbed.data().iter().all(|&v| v == 0));
        assert_eq!(out.registry.entries[0].size(), 600);
    }
}
