//! Synthetic corpus generation with a planted-cluster model.
//!
//! Each cluster owns a block of dimensions for its center; every item picks
//! a cluster, a target similarity `s` from a band, and a private mix of
//! shared noise dimensions, then lands at exactly angle `(1-s)*pi` from the
//! center (center and noise supports are disjoint, so the construction is
//! exact). Items from different clusters share no center support and stay
//! near similarity 0.5. Arrivals are a constant `items_per_tick`, which
//! makes index capacities directly comparable across retention policies.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::derive_seed;
use crate::stream::Item;
use crate::vector::SparseVector;
use crate::{Error, Result};

/// Item quality distribution for generated corpora.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualitySpec {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl QualitySpec {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            QualitySpec::Constant { value } => (0.0..=1.0).contains(&value),
            QualitySpec::Uniform { lo, hi } => {
                (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("quality spec outside [0,1]".into()))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            QualitySpec::Constant { value } => value,
            QualitySpec::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            QualitySpec::Constant { value } => value,
            QualitySpec::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// Planted-cluster generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub clusters: usize,
    /// Support size of each cluster center.
    pub center_dims: usize,
    /// Size of the shared noise-dimension pool.
    pub noise_dims: usize,
    /// Noise entries sampled per item.
    pub noise_entries: usize,
    pub items_per_tick: usize,
    pub ticks: u64,
    /// Target similarity band to the cluster center, within (0.5, 1].
    pub similarity_lo: f64,
    pub similarity_hi: f64,
    pub quality: QualitySpec,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.center_dims == 0 {
            return Err(Error::InvalidConfig("need at least one cluster dimension".into()));
        }
        if self.noise_entries == 0 || self.noise_dims < self.noise_entries * 4 {
            return Err(Error::InvalidConfig(
                "noise pool must be at least 4x the entries drawn per item".into(),
            ));
        }
        if !(self.similarity_lo > 0.5
            && self.similarity_lo <= self.similarity_hi
            && self.similarity_hi <= 1.0)
        {
            return Err(Error::InvalidConfig(
                "similarity band must satisfy 0.5 < lo <= hi <= 1".into(),
            ));
        }
        self.quality.validate()
    }

    /// Total dimensionality of the generated space.
    pub fn dims(&self) -> usize {
        self.clusters * self.center_dims + self.noise_dims
    }
}

fn unit_center(spec: &GeneratorSpec, cluster: usize, rng: &mut ChaCha8Rng) -> Vec<(u32, f64)> {
    let base = (cluster * spec.center_dims) as u32;
    let mut entries: Vec<(u32, f64)> =
        (0..spec.center_dims as u32).map(|i| (base + i, rng.gen_range(0.5..1.5))).collect();
    let norm = entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
    entries.iter_mut().for_each(|e| e.1 /= norm);
    entries
}

/// Generates the corpus: exactly `items_per_tick * ticks` items, sorted by
/// tick, byte-identical for a fixed spec.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<Item>> {
    spec.validate()?;
    let mut centers_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "centers", &[]));
    let centers: Vec<Vec<(u32, f64)>> =
        (0..spec.clusters).map(|c| unit_center(spec, c, &mut centers_rng)).collect();
    let noise_base = (spec.clusters * spec.center_dims) as u32;

    let mut items = Vec::with_capacity(spec.items_per_tick * spec.ticks as usize);
    for tick in 0..spec.ticks {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "tick", &[tick]));
        for i in 0..spec.items_per_tick {
            let cluster = rng.gen_range(0..spec.clusters);
            let s = if spec.similarity_lo == spec.similarity_hi {
                spec.similarity_lo
            } else {
                rng.gen_range(spec.similarity_lo..spec.similarity_hi)
            };
            let theta = (1.0 - s) * std::f64::consts::PI;

            // orthogonal direction from the noise pool, disjoint support
            let mut noise: Vec<(u32, f64)> = Vec::with_capacity(spec.noise_entries);
            while noise.len() < spec.noise_entries {
                let d = noise_base + rng.gen_range(0..spec.noise_dims as u32);
                if noise.iter().all(|&(nd, _)| nd != d) {
                    noise.push((d, rng.gen_range(0.5..1.5)));
                }
            }
            let nnorm = noise.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();

            let mut entries: Vec<(u32, f64)> = centers[cluster]
                .iter()
                .map(|&(d, w)| (d, w * theta.cos()))
                .collect();
            if theta.sin() > 0.0 {
                entries.extend(noise.iter().map(|&(d, w)| (d, w / nnorm * theta.sin())));
            }

            items.push(Item {
                id: format!("t{tick}-n{i}"),
                tick,
                vector: SparseVector::new(entries)?,
                quality: spec.quality.sample(&mut rng),
            });
        }
    }
    Ok(items)
}
