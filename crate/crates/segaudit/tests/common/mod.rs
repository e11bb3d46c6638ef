#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use segaudit::manifest::sha256_hex;
use segaudit::synth::{generate, SynthConfig};

/// Small synthetic dataset: `scenes` scenes of `size x size` pixels.
pub fn synth(dir: &Path, scenes: usize, size: usize) {
    let cfg = SynthConfig {
        scenes,
        width: size,
        height: size,
        ..SynthConfig::default()
    };
    generate(dir, &cfg).unwrap();
}

/// Relative path to SHA-256 of every file below `root`.
pub fn digest(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}
