//! The learned simulator: interaction pairs, input normalization, the
//! two-network engine and twelve-frame rollouts.

mod canonical;
mod model;
mod normalize;
mod pairs;

pub use canonical::{anchor, canonical_isometry, canonicalize_trajectory};
pub use model::{stack, unstack, BatchLayout, EngineNets, InteractionNet, StepVars, Surrogate, SurrogateConfig};
pub use normalize::{
    element_deltas, engine_frames, fit_normalizer, fit_normalizers, raw_rows, EngineNormalizers, Normalizer,
    NormalizerSet, Role, TargetScaler, CODE_WIDTH,
};
pub use pairs::{gather_pairs, Pair, PairSet};
