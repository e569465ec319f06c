//! Loss, noise injection, the training loop, evaluation and grid search.

mod eval;
mod loss;
mod trainer;

pub use eval::{
    evaluate, evaluate_predictions, grid_search, EvalReport, ReferencePoints, SearchCell, SearchResult,
    REFERENCE_POINTS,
};
pub use loss::{inject_noise, loss, LossTerms};
pub use trainer::{rollout_loss, step_loss, train, EpochRecord, Hyperparams, LossEval, StepSample, TrainOutcome};
