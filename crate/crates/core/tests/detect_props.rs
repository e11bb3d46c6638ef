mod common;

use common::oracle::random_mask;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segaudit_core::detect::{baseline2, propose, select, ProposeConfig};
use segaudit_core::matching::assign;
use segaudit_core::meta::MetaModel;
use segaudit_core::{extract_components, Origin, ProbMap, SegMask};

/// A model whose score depends on the component size only.
fn size_model() -> MetaModel {
    let mut m = MetaModel::zero();
    m.weights[0] = 0.05;
    m.weights[1] = 0.1;
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn candidates_obey_filters_and_order(seed in any::<u64>(), w in 2usize..=32, h in 2usize..=32, t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_mask(&mut rng, w, h, 4);
        let p = random_mask(&mut rng, w, h, 4);
        let p = SegMask::new(w, h, 4, p.data().iter().map(|&v| v.max(1)).collect()).unwrap();
        let gc = extract_components(&g, true, Origin::GroundTruth);
        let pc = extract_components(&p, true, Origin::Prediction);
        let probs = ProbMap::one_hot(&p);
        let cfg = ProposeConfig::default();
        let cands = propose("i", &gc, &pc, &probs, &size_model(), 0.25, &cfg).unwrap();
        let m = assign(&gc, &pc, 0.25).unwrap();

        prop_assert!(cands.windows(2).all(|w| w[0].score >= w[1].score));
        for c in &cands {
            prop_assert!(m.pred_match(c.component.id).unwrap().is_false_positive());
            let same_class_gt = c.component.pixels.iter().any(|(r, col)| g.get(r as usize, col as usize) == c.class_id);
            prop_assert!(!same_class_gt);
        }

        let mut all: Vec<u32> = select(&cands, 0.0).iter().map(|c| c.component.id).collect();
        all.sort_unstable();
        let base: Vec<u32> = baseline2("i", &gc, &pc, 0.25, &cfg).unwrap().iter().map(|c| c.component.id).collect();
        prop_assert_eq!(&all, &base);

        let high = select(&cands, t);
        let low = select(&cands, t / 2.0);
        prop_assert!(high.iter().all(|c| low.contains(c)));
        prop_assert!(base.len() >= high.len());
    }
}
