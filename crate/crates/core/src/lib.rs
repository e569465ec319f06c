//! Learned surrogate simulation for actuated 2×2 morphing grids.

pub mod dataset;
pub mod design;
pub mod error;
pub mod grid;
pub mod io;
pub mod nn;
pub mod oracle;
pub mod sim;
pub mod train;

pub use error::{ElementRef, Error, Result};
pub use grid::{
    augment, build_graph, contiguity_pairs, BeamSpec, ContiguityPairs, Face, GridDesign,
    GridGraph, JointSpec, PlaneIsometry, Source, Trajectory,
};
pub use oracle::{simulate_oracle, OracleConfig, OracleState};
pub use sim::{gather_pairs, NormalizerSet, Surrogate, SurrogateConfig};
