use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::layout::*;
use crate::grid::{ContiguityPairs, GridGraph};

/// Loss value with its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Mean squared error over every geometry and stress channel.
    pub regression: f64,
    /// Summed distance between paired junction vertices.
    pub dislocation: f64,
    pub total: f64,
}

fn state_channels(width: usize) -> impl Iterator<Item = usize> {
    let node = width == NODE_WIDTH;
    (0..width).filter(move |&c| {
        let kind = if node { node_channel(c) } else { edge_channel(c) };
        kind != ChannelKind::Design
    })
}

/// `regression + penalty · dislocation` of a predicted graph against the
/// truth; pairs come from the initial topology.
pub fn loss(pred: &GridGraph, truth: &GridGraph, pairs: &ContiguityPairs, penalty: f64) -> Result<LossTerms> {
    if !pred.same_layout(truth) {
        return Err(Error::Shape("predicted and true graphs differ in layout".into()));
    }
    for &(a, b) in &pairs.pairs {
        a.check(pred)?;
        b.check(pred)?;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for n in 0..pred.n_nodes() {
        for c in state_channels(NODE_WIDTH) {
            sum += (pred.node(n)[c] - truth.node(n)[c]).powi(2);
            count += 1;
        }
    }
    for e in 0..pred.n_edges() {
        for c in state_channels(EDGE_WIDTH) {
            sum += (pred.edge(e)[c] - truth.edge(e)[c]).powi(2);
            count += 1;
        }
    }
    let regression = if count == 0 { 0.0 } else { sum / count as f64 };
    let dislocation = pairs.dislocation(pred);
    Ok(LossTerms {
        regression,
        dislocation,
        total: regression + penalty * dislocation,
    })
}

/// Perturbs every geometry and stress channel by `(g_t − g_0) · n` with
/// `n ~ N(0, γ²)` drawn per channel. Design channels are untouched.
pub fn inject_noise(g_t: &GridGraph, g_0: &GridGraph, gamma: f64, rng: &mut impl Rng) -> Result<GridGraph> {
    if !g_t.same_layout(g_0) {
        return Err(Error::Shape("noise reference has a different layout".into()));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise strength {gamma} must be non-negative")));
    }
    let mut out = g_t.clone();
    if gamma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, gamma).expect("finite positive std");
    for n in 0..g_t.n_nodes() {
        for c in state_channels(NODE_WIDTH) {
            out.node_mut(n)[c] += (g_t.node(n)[c] - g_0.node(n)[c]) * normal.sample(rng);
        }
    }
    for e in 0..g_t.n_edges() {
        for c in state_channels(EDGE_WIDTH) {
            out.edge_mut(e)[c] += (g_t.edge(e)[c] - g_0.edge(e)[c]) * normal.sample(rng);
        }
    }
    Ok(out)
}
