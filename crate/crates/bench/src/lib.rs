//! Fixtures shared by the benchmarks.

use morphsim::dataset::{generate_dataset, SamplerConfig};
use morphsim::sim::{canonicalize_trajectory, fit_normalizers};
use morphsim::{OracleConfig, Surrogate, SurrogateConfig, Trajectory};

/// A small oracle dataset in canonical frames.
pub fn trajectories(n: usize) -> Vec<Trajectory> {
    let ds = generate_dataset(n, 5, &SamplerConfig::default(), &OracleConfig::default()).expect("oracle dataset");
    ds.trajectories.iter().map(canonicalize_trajectory).collect()
}

/// An untrained surrogate of the default size; timing does not depend on
/// the weights.
pub fn model(trajs: &[Trajectory]) -> Surrogate<f32> {
    let norms = fit_normalizers(trajs, 0.98).expect("normalizers");
    Surrogate::new(SurrogateConfig::default(), norms).expect("model")
}
