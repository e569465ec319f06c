//! Random designs, bulk oracle trajectories, splits and statistics.

mod sampler;
mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use sampler::{sample_design, SamplerConfig, ACTUATOR_LEVELS, SAMPLER_ATTEMPTS};
pub use stats::{design_stats, percentile, StatsReport, Summary};

use crate::error::{Error, Result};
use crate::grid::{layout, GridDesign, PlaneIsometry, Trajectory};
use crate::oracle::{simulate_oracle, OracleConfig, ORACLE_VERSION};

/// Oracle attempts per dataset item; a diverged run is replaced by a fresh
/// design.
pub const ITEM_ATTEMPTS: usize = 10;

/// Fraction of designs held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub oracle: OracleConfig,
    pub oracle_version: String,
    pub layout_hash: u64,
    /// Oracle runs that diverged and were replaced.
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub provenance: Provenance,
    pub trajectories: Vec<Trajectory>,
}

/// Stable content hash of a design.
pub fn design_hash(design: &GridDesign) -> u64 {
    let bytes = serde_json::to_vec(design).expect("design serializes");
    let digest = Sha256::digest(&bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hex form of [`design_hash`], used as the design id.
pub fn design_id(design: &GridDesign) -> String {
    format!("{:016x}", design_hash(design))
}

/// Whether a design belongs to the held-out split. Depends only on the
/// design itself, so growing a dataset never moves existing items.
pub fn is_held_out(design: &GridDesign) -> bool {
    (design_hash(design) as f64) < TEST_FRACTION * u64::MAX as f64
}

fn item_seed(seed: u64, index: usize, attempt: usize) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{index}/{attempt}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Samples `n` designs and simulates each with the oracle. Items are seeded
/// independently, so the result does not depend on thread scheduling.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    sampler: &SamplerConfig,
    oracle: &OracleConfig,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    sampler.validate()?;
    oracle.validate()?;
    let items: Vec<Result<(Trajectory, usize)>> = (0..n)
        .into_par_iter()
        .map(|index| {
            for attempt in 0..ITEM_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, index, attempt));
                let design = sample_design(&mut rng, sampler)?;
                match simulate_oracle(&design, oracle) {
                    Ok(trajectory) => return Ok((trajectory, attempt)),
                    Err(Error::OracleDiverged { frame, strain }) => {
                        log::warn!("item {index}: oracle diverged at frame {frame} (strain {strain:.3}), resampling");
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::SamplerExhausted {
                attempts: ITEM_ATTEMPTS,
            })
        })
        .collect();
    let mut trajectories = Vec::with_capacity(n);
    let mut resampled = 0;
    for item in items {
        let (trajectory, attempts) = item?;
        resampled += attempts;
        trajectories.push(trajectory);
    }
    Ok(Dataset {
        provenance: Provenance {
            seed,
            sampler: sampler.clone(),
            oracle: oracle.clone(),
            oracle_version: ORACLE_VERSION.to_string(),
            layout_hash: layout::layout_hash(),
            resampled,
        },
        trajectories,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Splits into (train, test) by design hash.
    pub fn split(&self) -> (Dataset, Dataset) {
        let (test, train): (Vec<_>, Vec<_>) = self
            .trajectories
            .iter()
            .cloned()
            .partition(|t| is_held_out(&t.design));
        let part = |trajectories| Dataset {
            provenance: self.provenance.clone(),
            trajectories,
        };
        (part(train), part(test))
    }

    pub fn subset(&self, n: usize) -> Dataset {
        Dataset {
            provenance: self.provenance.clone(),
            trajectories: self.trajectories[..n.min(self.len())].to_vec(),
        }
    }

    pub fn stats(&self) -> Result<StatsReport> {
        design_stats(self.trajectories.iter().map(|t| &t.design))
    }

    /// All eight in-plane isometric copies of every trajectory.
    pub fn augmented(&self) -> Dataset {
        Dataset {
            provenance: self.provenance.clone(),
            trajectories: self
                .trajectories
                .iter()
                .flat_map(|t| PlaneIsometry::all().map(move |iso| iso.apply_trajectory(t)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn held_out_fraction_is_near_target() {
        let config = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let held = (0..n)
            .filter(|_| is_held_out(&sample_design(&mut rng, &config).unwrap()))
            .count();
        assert!((held as f64 - 400.0).abs() < 60.0, "{held}");
    }

    #[test]
    fn design_id_is_stable() {
        let d = GridDesign::regular(50.0);
        assert_eq!(design_id(&d), design_id(&d.clone()));
        assert_ne!(design_id(&d), design_id(&GridDesign::regular(51.0)));
        assert_eq!(design_id(&d).len(), 16);
    }
}
