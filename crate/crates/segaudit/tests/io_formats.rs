mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use segaudit::io::{decode_mask, encode_mask, load_probmap, read_probmap, save_probmap, write_mask, write_probmap};
use segaudit::manifest::{sha256_hex, ClassEntry, LoadedManifest, Manifest, Record, Split};
use segaudit::records::{
    dataset_csv, read_candidates, read_dataset, read_model, read_registry, write_candidates, write_dataset,
    write_model, write_registry,
};
use segaudit::Error;
use segaudit_core::detect::Candidate;
use segaudit_core::features::{FeatureVector, NUM_FEATURES};
use segaudit_core::meta::{train_meta, MetaDataset, Provenance, TrainConfig};
use segaudit_core::perturb::{perturb_raster, FillRule, PerturbConfig};
use segaudit_core::{extract_components, Origin, ProbMap, SegMask};

fn mask_strategy(max_class: u16) -> impl Strategy<Value = SegMask> {
    (1usize..20, 1usize..20, 1u16..=max_class).prop_flat_map(|(w, h, c)| {
        proptest::collection::vec(0..=c, w * h).prop_map(move |d| SegMask::new(w, h, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sapm_round_trip_is_bit_exact(w in 1usize..12, h in 1usize..12, c in 1u16..6, seed in any::<u64>()) {
        // arbitrary bit patterns, including NaN payloads, survive unvalidated reads
        let mut x = seed | 1;
        let data: Vec<f32> = (0..w * h * c as usize)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                f32::from_bits(x as u32)
            })
            .collect();
        let p = ProbMap::new_unchecked(w, h, c, data.clone()).unwrap();
        let mut buf = Vec::new();
        write_probmap(&mut buf, &p).unwrap();
        prop_assert_eq!(buf.len(), 20 + 4 * data.len());
        let back = read_probmap(buf.as_slice(), false).unwrap();
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.data()), bits(&data));
        prop_assert_eq!(back.dims(), (w, h));
        let mut again = Vec::new();
        write_probmap(&mut again, &back).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn eight_bit_masks_round_trip(mask in mask_strategy(255)) {
        let bytes = encode_mask(&mask);
        let back = decode_mask(&bytes, mask.classes(), &PathBuf::from("m.png")).unwrap();
        prop_assert_eq!(back, mask.clone());
        prop_assert_eq!(encode_mask(&mask), bytes);
    }

    #[test]
    fn sixteen_bit_masks_round_trip(mask in mask_strategy(300)) {
        let mask = SegMask::new(mask.width(), mask.height(), 300, mask.data().to_vec()).unwrap();
        let back = decode_mask(&encode_mask(&mask), 300, &PathBuf::from("m.png")).unwrap();
        prop_assert_eq!(back, mask);
    }
}

#[test]
fn mask_with_labels_beyond_classes_is_rejected() {
    let mask = SegMask::new(2, 1, 9, vec![0, 9]).unwrap();
    assert!(decode_mask(&encode_mask(&mask), 5, &PathBuf::from("m.png")).is_err());
}

#[test]
fn probmap_files_validate_the_simplex() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.sapm");
    let bad = ProbMap::new_unchecked(1, 1, 2, vec![0.7, 0.7]).unwrap();
    save_probmap(&path, &bad).unwrap();
    assert!(matches!(load_probmap(&path), Err(Error::Format { .. })));
    let good = ProbMap::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
    save_probmap(&path, &good).unwrap();
    assert_eq!(load_probmap(&path).unwrap(), good);
}

fn sample_registry() -> segaudit_core::perturb::ErrorRegistry {
    let mut data = vec![1u16; 12 * 10];
    for r in 2..6 {
        for c in 3..8 {
            data[r * 12 + c] = 2;
        }
    }
    let clean = SegMask::new(12, 10, 2, data).unwrap();
    let cfg = PerturbConfig {
        p_hat: 1.0,
        size_min: 1,
        size_max: 10_000,
        eligible_classes: [2].into(),
        seed: 3,
    };
    perturb_raster(&clean, FillRule::NearestLabel, &cfg, "a/b")
        .unwrap()
        .registry
}

#[test]
fn registry_and_candidates_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let reg = sample_registry();
    assert_eq!(reg.len(), 1);
    write_registry(&dir.path().join("r.jsonl"), &reg).unwrap();
    assert_eq!(read_registry(&dir.path().join("r.jsonl")).unwrap(), reg);

    let line = std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    for key in ["image", "class_id", "size", "bbox", "pixels_rle", "seed_key"] {
        assert!(v.get(key).is_some(), "registry line lacks {key}");
    }
    assert_eq!(v["bbox"], serde_json::json!([2, 3, 5, 7]));
    assert_eq!(v["pixels_rle"][0], serde_json::json!([2, 3, 8]));

    let mask = SegMask::new(4, 3, 2, vec![1, 1, 0, 2, 0, 0, 0, 2, 2, 0, 0, 2]).unwrap();
    let comps = extract_components(&mask, true, Origin::Prediction);
    let cands: Vec<Candidate> = comps
        .components()
        .iter()
        .enumerate()
        .map(|(i, k)| Candidate::new("x", k.clone(), 0.1 * i as f64 + 0.05, 1))
        .collect();
    write_candidates(&dir.path().join("c.jsonl"), &cands).unwrap();
    assert_eq!(read_candidates(&dir.path().join("c.jsonl")).unwrap(), cands);
}

#[test]
fn tampered_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    write_registry(&path, &sample_registry()).unwrap();
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("\"size\":20", "\"size\":21");
    std::fs::write(&path, text).unwrap();
    assert!(read_registry(&path).is_err());
}

fn toy_dataset() -> MetaDataset {
    let mut d = MetaDataset {
        tau: Some(0.25),
        ..Default::default()
    };
    for i in 0..40 {
        let mut v = vec![0.0; NUM_FEATURES];
        v[0] = i as f64 * 1.5;
        v[1] = (i % 7) as f64 / 3.0;
        d.push(
            FeatureVector::new(v).unwrap(),
            i % 3 != 0,
            Provenance {
                image: format!("img,{}", i / 10),
                component_id: i % 10 + 1,
            },
        );
    }
    d
}

#[test]
fn dataset_csv_round_trips_and_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset();
    write_dataset(&dir.path().join("d.csv"), &data).unwrap();
    let back = read_dataset(&dir.path().join("d.csv")).unwrap();
    assert_eq!(back.rows, data.rows);
    assert_eq!(back.targets, data.targets);
    assert_eq!(back.provenance, data.provenance);
    let csv = String::from_utf8(dataset_csv(&data)).unwrap();
    assert!(csv.starts_with("image,component_id,target,size,"));
}

#[test]
fn model_json_round_trips_and_checks_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let model = train_meta(&toy_dataset(), &cfg).unwrap();
    let path = dir.path().join("m.json");
    write_model(&path, &model).unwrap();
    assert_eq!(read_model(&path).unwrap(), model);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    for key in ["schema_version", "feature_names", "weights", "means", "stds", "config"] {
        assert!(v.get(key).is_some());
    }
    let renamed = std::fs::read_to_string(&path)
        .unwrap()
        .replacen("\"size\"", "\"area\"", 1);
    std::fs::write(&path, renamed).unwrap();
    assert!(read_model(&path).is_err());
}

fn manifest_fixture(dir: &std::path::Path) -> Manifest {
    let mask = SegMask::new(2, 2, 2, vec![1, 1, 2, 2]).unwrap();
    write_mask(&dir.join("gt/a.png"), &mask).unwrap();
    write_mask(&dir.join("gt/b.png"), &mask).unwrap();
    save_probmap(&dir.join("p.sapm"), &ProbMap::one_hot(&mask)).unwrap();
    let rec = |image: &str, gt: &str| Record {
        image: image.into(),
        gt_mask: Some(PathBuf::from(gt)),
        probs: PathBuf::from("p.sapm"),
        ..Record::default()
    };
    Manifest {
        schema_version: 1,
        dataset: "toy".into(),
        classes: vec![
            ClassEntry {
                id: 1,
                name: "road".into(),
            },
            ClassEntry {
                id: 2,
                name: "car".into(),
            },
        ],
        registry: None,
        records: vec![rec("a", "gt/a.png"), rec("b", "gt/b.png")],
    }
}

#[test]
fn manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let good = manifest_fixture(&root);
    LoadedManifest::from_parts(good.clone(), root.clone()).unwrap();

    let mut dup = good.clone();
    dup.records[1].image = "a".into();
    assert!(matches!(
        LoadedManifest::from_parts(dup, root.clone()),
        Err(Error::Manifest(_))
    ));

    let mut missing = good.clone();
    missing.records[1].probs = PathBuf::from("nope.sapm");
    let err = LoadedManifest::from_parts(missing, root.clone())
        .unwrap_err()
        .to_string();
    assert!(err.contains("nope.sapm"), "{err}");

    let mut partial = good.clone();
    partial.records[0].split = Some(Split::Search);
    assert!(LoadedManifest::from_parts(partial, root.clone()).is_err());

    let mut gap = good.clone();
    gap.classes[1].id = 3;
    assert!(LoadedManifest::from_parts(gap, root.clone()).is_err());

    let bytes = std::fs::read(root.join("gt/a.png")).unwrap();
    let mut hashed = good.clone();
    hashed.records[0].sha256 = BTreeMap::from([("gt_mask".to_string(), sha256_hex(&bytes))]);
    LoadedManifest::from_parts(hashed.clone(), root.clone()).unwrap();
    hashed.records[0].sha256.insert("gt_mask".into(), "00".repeat(32));
    let err = LoadedManifest::from_parts(hashed, root).unwrap_err().to_string();
    assert!(err.contains("hash mismatch"), "{err}");
}

#[test]
fn manifest_json_uses_split_names() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manifest_fixture(dir.path());
    m.records[0].split = Some(Split::TrainMeta);
    m.records[1].split = Some(Split::Search);
    let v = serde_json::to_value(&m).unwrap();
    assert_eq!(v["records"][0]["split"], "train-meta");
    assert_eq!(v["records"][1]["split"], "search");
    assert!(v["records"][0].get("rgb").is_none());
}

#[test]
fn synthetic_scenes_load_through_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    common::synth(dir.path(), 2, 64);
    let lm = LoadedManifest::load(&dir.path().join("manifest.json")).unwrap();
    for r in &lm.manifest.records {
        let gt = lm.load_gt(r).unwrap();
        let probs = lm.load_probs(r).unwrap();
        assert_eq!(gt.dims(), probs.dims());
        assert_eq!(lm.load_rgb(r).unwrap().unwrap().width, 64);
    }
}
