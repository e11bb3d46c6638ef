mod common;

use common::oracle::{random_mask, unit};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segaudit_core::perturb::{
    drop_probability, drops, perturb_polygons, perturb_raster, rasterize, ClassTable, FillRule, PerturbConfig,
    PolygonAnnotation, PolygonObject,
};
use segaudit_core::{extract_components, Origin, PixelSet, SegMask};

fn cfg(p_hat: f64, size_min: usize, size_max: usize, seed: u64) -> PerturbConfig {
    PerturbConfig {
        p_hat,
        size_min,
        size_max,
        seed,
        ..PerturbConfig::default()
    }
}

/// Empirical drop rate over `trials` independent keys.
pub fn drop_rate(size: usize, p_hat: f64, trials: u64, seed: u64) -> f64 {
    let c = cfg(p_hat, 500, 10_000, seed);
    (0..trials).filter(|&k| drops(size, &c, "trial", k)).count() as f64 / trials as f64
}

#[test]
fn sampler_rates_within_three_sigma() {
    for (size, p) in [(500, 0.5), (5250, 0.25), (10_000, 0.0)] {
        assert_eq!(drop_probability(size, &cfg(0.5, 500, 10_000, 0)), p);
        let rate = drop_rate(size, 0.5, 10_000, 17);
        let sigma = (p * (1.0 - p) / 10_000.0).sqrt();
        assert!((rate - p).abs() <= 3.0 * sigma, "size {size}: {rate} vs {p}");
    }
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a[1] <= y) != (b[1] <= y) {
            let xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

fn random_annotation(seed: u64, w: usize, h: usize) -> PolygonAnnotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ["road", "car", "person"];
    let objects = (0..1 + (unit(&mut rng) * 6.0) as usize)
        .map(|i| {
            let n = 3 + (unit(&mut rng) * 5.0) as usize;
            let polygon = (0..n)
                .map(|_| {
                    [
                        unit(&mut rng) * (w as f64 + 4.0) - 2.0,
                        unit(&mut rng) * (h as f64 + 4.0) - 2.0,
                    ]
                })
                .collect();
            PolygonObject {
                label: labels[i % 3].to_string(),
                polygon,
            }
        })
        .collect();
    PolygonAnnotation {
        img_height: h,
        img_width: w,
        objects,
    }
}

fn table() -> ClassTable {
    ClassTable::new(3, [("road", 1), ("car", 2), ("person", 3)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rasterize_matches_point_in_polygon(seed in any::<u64>(), w in 1usize..40, h in 1usize..40) {
        let ann = random_annotation(seed, w, h);
        let r = rasterize(&ann, &table()).unwrap();
        for row in 0..h {
            for col in 0..w {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                let expected = ann
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| !r.skipped.contains(i) && point_in_polygon(&o.polygon, x, y))
                    .map(|(_, o)| table().id(&o.label).unwrap())
                    .next_back()
                    .unwrap_or(0);
                prop_assert_eq!(r.mask.get(row, col), expected);
            }
        }
    }

    #[test]
    fn polygon_perturbation_is_deterministic(seed in any::<u64>()) {
        let ann = random_annotation(seed, 48, 48);
        let c = cfg(1.0, 10, 2000, seed);
        let a = perturb_polygons(&ann, &table(), &c, "img").unwrap();
        prop_assert_eq!(&a, &perturb_polygons(&ann, &table(), &c, "img").unwrap());
        prop_assert_eq!(&a.perturbed, &rasterize(&a.annotation, &table()).unwrap().mask);
        for e in &a.registry.entries {
            for (r, col) in e.component.pixels.iter() {
                prop_assert_eq!(a.clean.get(r as usize, col as usize), e.class_id());
                prop_assert_ne!(a.perturbed.get(r as usize, col as usize), e.class_id());
            }
        }
    }

    #[test]
    fn raster_registry_is_exactly_the_changed_pixels(seed in any::<u64>(), w in 4usize..40, h in 4usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = random_mask(&mut rng, w, h, 4);
        let c = cfg(1.0, 1, 100_000, seed);
        let out = perturb_raster(&clean, FillRule::NearestLabel, &c, "img").unwrap();
        let changed: PixelSet = (0..h)
            .flat_map(|r| (0..w).map(move |col| (r, col)))
            .filter(|&(r, col)| clean.get(r, col) != out.perturbed.get(r, col))
            .map(|(r, col)| (r as u32, col as u32))
            .collect();
        let registered = PixelSet::union_all(out.registry.entries.iter().map(|e| &e.component.pixels));
        prop_assert_eq!(&registered, &changed);
        let total: usize = out.registry.entries.iter().map(|e| e.size()).sum();
        prop_assert_eq!(total, registered.len());
        prop_assert_eq!(&out, &perturb_raster(&clean, FillRule::NearestLabel, &c, "img").unwrap());
    }

    #[test]
    fn zero_p_hat_leaves_masks_alone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = random_mask(&mut rng, 20, 20, 4);
        let bg = SegMask::from_fn(20, 20, 4, |_, _| 1).unwrap();
        let out = perturb_raster(&clean, FillRule::Background(&bg), &cfg(0.0, 1, 1000, seed), "img").unwrap();
        prop_assert_eq!(out.perturbed, clean);
        prop_assert!(out.registry.is_empty());
    }
}

#[test]
fn drop_count_within_three_sigma_of_expectation() {
    // 300 scenes of 64x64; components sized 1..4096 px against a band of 20..2000
    let c = cfg(0.5, 20, 2000, 99);
    let (mut expected, mut variance, mut observed) = (0.0, 0.0, 0usize);
    for i in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let clean = random_mask(&mut rng, 64, 64, 4);
        let image = format!("scene{i}");
        for k in extract_components(&clean, true, Origin::GroundTruth).components() {
            let p = drop_probability(k.size(), &c);
            expected += p;
            variance += p * (1.0 - p);
        }
        let bg = SegMask::void(64, 64, 4);
        observed += perturb_raster(&clean, FillRule::Background(&bg), &c, &image)
            .unwrap()
            .dropped
            .len();
    }
    assert!(expected > 100.0);
    assert!(
        (observed as f64 - expected).abs() <= 3.0 * variance.sqrt(),
        "{observed} vs {expected}"
    );
}
