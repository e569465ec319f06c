use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train, Hyperparams};
use crate::dataset::percentile;
use crate::error::{Error, Result};
use crate::grid::{contiguity_pairs, GridGraph, Trajectory};
use crate::nn::Real;
use crate::sim::Surrogate;

/// Published accuracy of the original FEA-trained model, reported for
/// context only; those figures were measured against a commercial solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoints {
    pub mean_error_mm: f64,
    pub mean_relative_error: f64,
    pub p97_error_mm: f64,
    pub p97_relative_error: f64,
}

pub const REFERENCE_POINTS: ReferencePoints = ReferencePoints {
    mean_error_mm: 2.89,
    mean_relative_error: 0.0303,
    p97_error_mm: 6.93,
    p97_relative_error: 0.0413,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    /// Final-frame mean vertex error, mm.
    pub vertex_error_mm: f64,
    pub vertex_error_p97_mm: f64,
    /// Final-frame error divided by grid dimension.
    pub relative_error: f64,
    pub relative_error_p97: f64,
    /// Mean junction distance over every predicted frame, mm.
    pub dislocation_mm: f64,
    /// Mean vertex error over every predicted frame, mm.
    pub rollout_error_mm: f64,
    /// Mean vertex error per frame, frame 0 included.
    pub frame_error_mm: Vec<f64>,
    /// The same final-frame errors for a predictor that never moves.
    pub baseline_error_mm: f64,
    pub baseline_relative_error: f64,
    /// Wall-clock per rollout in the batched evaluation, seconds.
    pub seconds_per_rollout: f64,
    pub reference: ReferencePoints,
}

struct ItemScores {
    final_error: f64,
    relative: f64,
    baseline: f64,
    baseline_relative: f64,
    frame_errors: Vec<f64>,
    dislocation: f64,
}

fn score(pred: &[GridGraph], truth: &Trajectory) -> Result<ItemScores> {
    let pairs = contiguity_pairs(truth.initial())?;
    let last = pred.len() - 1;
    let dimension = truth.design.grid_dimension().max(f64::MIN_POSITIVE);
    let frame_errors: Vec<f64> = pred.iter().zip(&truth.frames).map(|(p, t)| p.mean_vertex_error(t)).collect();
    let dislocation = pred[1..].iter().map(|g| pairs.mean_dislocation(g)).sum::<f64>() / last.max(1) as f64;
    let baseline = truth.initial().mean_vertex_error(truth.last());
    Ok(ItemScores {
        final_error: frame_errors[last],
        relative: frame_errors[last] / dimension,
        baseline,
        baseline_relative: baseline / dimension,
        frame_errors,
        dislocation,
    })
}

/// Mean final-frame vertex error and mean dislocation of rollouts.
pub(crate) fn final_frame_scores<T: Real>(model: &Surrogate<T>, truth: &[Trajectory]) -> Result<(f64, f64)> {
    let g0s: Vec<GridGraph> = truth.iter().map(|t| t.initial().clone()).collect();
    let preds = model.rollout_batch(&g0s)?;
    let scores = preds.iter().zip(truth).map(|(p, t)| score(p, t)).collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    Ok((
        scores.iter().map(|s| s.final_error).sum::<f64>() / n,
        scores.iter().map(|s| s.dislocation).sum::<f64>() / n,
    ))
}

/// Scores predicted trajectories against the truth, frame by frame.
pub fn evaluate_predictions(preds: &[Vec<GridGraph>], truth: &[Trajectory], seconds: f64) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != truth.len() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} trajectories",
            preds.len(),
            truth.len()
        )));
    }
    for (p, t) in preds.iter().zip(truth) {
        if p.len() != t.frames.len() {
            return Err(Error::Shape("prediction and truth differ in frame count".into()));
        }
    }
    let scores = preds.iter().zip(truth).map(|(p, t)| score(p, t)).collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let mean = |f: fn(&ItemScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let all = |f: fn(&ItemScores) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    let frames = scores[0].frame_errors.len();
    let frame_error_mm: Vec<f64> = (0..frames)
        .map(|k| scores.iter().map(|s| s.frame_errors[k]).sum::<f64>() / n)
        .collect();
    Ok(EvalReport {
        items: scores.len(),
        vertex_error_mm: mean(|s| s.final_error),
        vertex_error_p97_mm: percentile(&all(|s| s.final_error), 97.0),
        relative_error: mean(|s| s.relative),
        relative_error_p97: percentile(&all(|s| s.relative), 97.0),
        dislocation_mm: mean(|s| s.dislocation),
        rollout_error_mm: frame_error_mm[1..].iter().sum::<f64>() / (frames - 1).max(1) as f64,
        frame_error_mm,
        baseline_error_mm: mean(|s| s.baseline),
        baseline_relative_error: mean(|s| s.baseline_relative),
        seconds_per_rollout: seconds / n,
        reference: REFERENCE_POINTS,
    })
}

/// Rolls out every test design from its initial frame and scores it.
pub fn evaluate<T: Real>(model: &Surrogate<T>, test: &[Trajectory]) -> Result<EvalReport> {
    let g0s: Vec<GridGraph> = test.iter().map(|t| t.initial().clone()).collect();
    let started = Instant::now();
    let preds = model.rollout_batch(&g0s)?;
    evaluate_predictions(&preds, test, started.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub penalty: f64,
    pub noise: f64,
    pub dataset_size: usize,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub cells: Vec<SearchCell>,
    /// Cell with the lowest dislocation, ties broken by vertex error.
    pub best: Option<usize>,
}

/// Trains and evaluates one model per (penalty, noise, size) combination.
/// A failing cell is recorded and the search continues.
pub fn grid_search(
    train_set: &[Trajectory],
    test_set: &[Trajectory],
    base: &Hyperparams,
    penalties: &[f64],
    noises: &[f64],
    sizes: &[usize],
) -> Result<SearchResult> {
    if penalties.is_empty() || noises.is_empty() || sizes.is_empty() {
        return Err(Error::InvalidConfig("every search axis needs at least one value".into()));
    }
    let combos: Vec<(f64, f64, usize)> = penalties
        .iter()
        .flat_map(|&a| noises.iter().flat_map(move |&g| sizes.iter().map(move |&n| (a, g, n))))
        .collect();
    let cells: Vec<SearchCell> = combos
        .par_iter()
        .map(|&(penalty, noise, dataset_size)| {
            let hp = Hyperparams {
                penalty,
                noise,
                dataset_size: Some(dataset_size),
                ..base.clone()
            };
            let outcome = train(train_set, &hp).and_then(|o| evaluate(&o.model, test_set));
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    log::warn!("search cell a={penalty} γ={noise} n={dataset_size} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            SearchCell {
                penalty,
                noise,
                dataset_size,
                report,
                error,
            }
        })
        .collect();
    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.report.as_ref().map(|r| (i, r)))
        .min_by(|a, b| {
            a.1.dislocation_mm
                .total_cmp(&b.1.dislocation_mm)
                .then(a.1.vertex_error_mm.total_cmp(&b.1.vertex_error_mm))
        })
        .map(|(i, _)| i);
    Ok(SearchResult { cells, best })
}
