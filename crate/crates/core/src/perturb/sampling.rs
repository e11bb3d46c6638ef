use alloc::collections::BTreeSet;
use alloc::string::ToString;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Drop probability at `size_min`.
    pub p_hat: f64,
    pub size_min: usize,
    pub size_max: usize,
    /// Classes whose components may be dropped; empty means every class.
    pub eligible_classes: BTreeSet<u16>,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            p_hat: 0.5,
            size_min: 500,
            size_max: 10_000,
            eligible_classes: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_hat) {
            return Err(Error::InvalidParameter("p_hat must lie in [0, 1]".to_string()));
        }
        if self.size_min >= self.size_max {
            return Err(Error::InvalidParameter(
                "size_min must be smaller than size_max".to_string(),
            ));
        }
        Ok(())
    }

    pub fn is_eligible(&self, class: u16) -> bool {
        self.eligible_classes.is_empty() || self.eligible_classes.contains(&class)
    }
}

/// `1{size_min <= size <= size_max} * p_hat * (size_max - size) / (size_max - size_min)`
pub fn drop_probability(size: usize, cfg: &PerturbConfig) -> f64 {
    if size < cfg.size_min || size > cfg.size_max {
        return 0.0;
    }
    cfg.p_hat * (cfg.size_max - size) as f64 / (cfg.size_max - cfg.size_min) as f64
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform draw in `[0, 1)` determined by `(seed, image, key)` alone.
pub fn keyed_uniform(seed: u64, image: &str, key: u64) -> f64 {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&fnv1a(image.as_bytes()).to_le_bytes());
    bytes[16..24].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(bytes);
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Bernoulli trial for one component of `size` pixels, keyed on
/// `(cfg.seed, image, key)`.
pub fn drops(size: usize, cfg: &PerturbConfig, image: &str, key: u64) -> bool {
    let p = drop_probability(size, cfg);
    p > 0.0 && keyed_uniform(cfg.seed, image, key) < p
}
