use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::final_frame_scores;
use super::loss::{inject_noise, LossTerms};
use crate::dataset::design_hash;
use crate::error::{Error, Result};
use crate::grid::layout::*;
use crate::grid::{contiguity_pairs, ContiguityPairs, GridGraph, Trajectory, VertexSlot, NUM_FRAMES, STAGE1_STEPS};
use crate::nn::{Adam, AdamConfig, Gradients, Mat, Real, Tape, Var};
use crate::sim::{canonicalize_trajectory, engine_frames, fit_normalizers, stack, BatchLayout, Surrogate, SurrogateConfig};

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight `a` of the dislocation term.
    pub penalty: f64,
    /// Noise strength γ.
    pub noise: f64,
    pub learning_rate: f64,
    /// The learning rate follows a cosine from `learning_rate` down to
    /// this fraction of it at the last epoch.
    pub final_learning_rate_fraction: f64,
    /// Graphs per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Explained-variance cutoff of the input normalizers.
    pub cutoff: f64,
    /// Share of training designs held back to pick the best epoch.
    pub validation_fraction: f64,
    /// Use only the first `n` training trajectories.
    pub dataset_size: Option<usize>,
    /// Differentiate through whole twelve-frame rollouts instead of
    /// single noisy steps.
    pub rollout_backprop: bool,
    pub model: SurrogateConfig,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            penalty: 1.0,
            noise: 0.1,
            learning_rate: 2e-3,
            final_learning_rate_fraction: 0.05,
            batch_size: 16,
            epochs: 80,
            seed: 0,
            cutoff: 0.98,
            validation_fraction: 0.1,
            dataset_size: None,
            rollout_backprop: false,
            model: SurrogateConfig::default(),
        }
    }
}

impl Hyperparams {
    /// Cosine-annealed learning rate for `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = if self.epochs > 1 {
            epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64
        } else {
            0.0
        };
        let floor = self.learning_rate * self.final_learning_rate_fraction;
        floor + (self.learning_rate - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return bad(format!("penalty {} must be non-negative", self.penalty));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.final_learning_rate_fraction) {
            return bad(format!(
                "final learning rate fraction {} must lie in [0, 1]",
                self.final_learning_rate_fraction
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epoch count must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {} outside [0, 1)", self.validation_fraction));
        }
        if self.dataset_size == Some(0) {
            return bad("dataset size must be positive".into());
        }
        self.model.validate()
    }
}

/// Per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_regression: f64,
    pub train_dislocation: f64,
    pub validation_loss: f64,
    /// Mean final-frame vertex error of validation rollouts, mm.
    pub validation_vertex_error: f64,
    /// Mean junction distance over validation rollouts, mm.
    pub validation_dislocation: f64,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation vertex error.
    pub model: Surrogate<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// One teacher-forced step: the (possibly noisy) input state, the true next
/// state and the junction pairs of the initial frame.
#[derive(Clone, Copy)]
pub struct StepSample<'a> {
    pub input: &'a GridGraph,
    pub next: &'a GridGraph,
    pub pairs: &'a ContiguityPairs,
}

pub struct LossEval<T> {
    /// Terms per graph: regression sums squared standardized errors over
    /// the graph's state channels, dislocation sums junction distances.
    pub terms: LossTerms,
    pub grads: Option<Gradients<T>>,
    /// ReLU activation pattern of the evaluation.
    pub relu_pattern: Vec<bool>,
}

/// Vertex rows addressed by junction pairs in a stacked batch.
struct PairCells {
    node: Arc<Vec<(usize, usize)>>,
    edge: Arc<Vec<(usize, usize)>>,
}

fn pair_cells<T: Real>(layout: &BatchLayout<T>, pairs: &[&ContiguityPairs]) -> Result<PairCells> {
    let (mut node, mut edge) = (Vec::new(), Vec::new());
    for (g, p) in pairs.iter().enumerate() {
        for &(a, b) in &p.pairs {
            let (n, e) = match (a, b) {
                (VertexSlot::Node { .. }, VertexSlot::Edge { .. }) => (a, b),
                (VertexSlot::Edge { .. }, VertexSlot::Node { .. }) => (b, a),
                _ => return Err(Error::Index("junction pair must join a node and an edge".into())),
            };
            let VertexSlot::Node { node: ni, .. } = n else { unreachable!() };
            let VertexSlot::Edge { edge: ei, .. } = e else { unreachable!() };
            node.push((layout.node_offsets[g] + ni, n.channel()));
            edge.push((layout.edge_offsets[g] + ei, e.channel()));
        }
    }
    Ok(PairCells {
        node: Arc::new(node),
        edge: Arc::new(edge),
    })
}

/// Summed junction distance of stacked rows, divided by `graphs`.
fn dislocation_on_tape<T: Real>(tape: &mut Tape<T>, cells: &PairCells, nodes: Var, edges: Var, graphs: usize) -> Result<Var> {
    let a = tape.pick(nodes, &cells.node, 3)?;
    let b = tape.pick(edges, &cells.edge, 3)?;
    let d = tape.sub(a, b)?;
    let d = tape.row_norm(d);
    let s = tape.sum(d);
    Ok(tape.scale(s, T::of(1.0 / graphs as f64)))
}

fn finish<T: Real>(
    model: &Surrogate<T>,
    tape: Tape<T>,
    reg: Var,
    disloc: Var,
    penalty: f64,
    with_grads: bool,
) -> Result<LossEval<T>> {
    let mut tape = tape;
    let weighted = tape.scale(disloc, T::of(penalty));
    let total = tape.add(reg, weighted)?;
    let grads = if with_grads {
        Some(tape.backward(total, &model.store)?)
    } else {
        None
    };
    let value = |v: Var| tape.value(v).data[0].f64();
    Ok(LossEval {
        terms: LossTerms {
            regression: value(reg),
            dislocation: value(disloc),
            total: value(total),
        },
        grads,
        relu_pattern: tape.relu_pattern(),
    })
}

/// Loss of one engine step over a batch: summed squared error of the
/// standardized deltas plus `penalty` times the junction dislocation of the
/// predicted next state, both per graph.
pub fn step_loss<T: Real>(
    model: &Surrogate<T>,
    engine: usize,
    samples: &[StepSample],
    penalty: f64,
    with_grads: bool,
) -> Result<LossEval<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let inputs: Vec<&GridGraph> = samples.iter().map(|s| s.input).collect();
    for s in samples {
        s.input.check_grid_layout()?;
        if !s.input.same_layout(s.next) {
            return Err(Error::Shape("step target differs in layout".into()));
        }
    }
    let layout = BatchLayout::<T>::new(&inputs);
    let (nt, et) = (model.target(engine, true), model.target(engine, false));
    let mut node_target = Mat::zeros(layout.nodes, nt.dim());
    let mut node_keep = Mat::zeros(layout.nodes, nt.dim());
    let mut edge_target = Mat::zeros(layout.edges, et.dim());
    for (g, s) in samples.iter().enumerate() {
        let fixed = s.input.fixed_node();
        for n in 0..s.input.n_nodes() {
            if Some(n) == fixed {
                continue;
            }
            let r = layout.node_offsets[g] + n;
            let delta: Vec<f64> = (0..nt.dim()).map(|c| s.next.node(n)[c] - s.input.node(n)[c]).collect();
            for (c, v) in nt.encode(&delta).into_iter().enumerate() {
                node_target.set(r, c, T::of(v));
                node_keep.set(r, c, T::one());
            }
        }
        for e in 0..s.input.n_edges() {
            let r = layout.edge_offsets[g] + e;
            let delta: Vec<f64> = (0..et.dim()).map(|c| s.next.edge(e)[c] - s.input.edge(e)[c]).collect();
            for (c, v) in et.encode(&delta).into_iter().enumerate() {
                edge_target.set(r, c, T::of(v));
            }
        }
    }
    let pairs: Vec<&ContiguityPairs> = samples.iter().map(|s| s.pairs).collect();
    let cells = pair_cells(&layout, &pairs)?;

    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let (n, e) = stack::<T>(&inputs);
    let (n, e) = (tape.constant(n), tape.constant(e));
    let out = model.step_on_tape(&mut tape, &params, engine, &layout, n, e)?;

    let (nr, nc) = (layout.nodes, nt.dim());
    let target = tape.constant(node_target);
    let dn = tape.sub(out.node_out, target)?;
    let dn = tape.mask(dn, &Arc::new(node_keep))?;
    let ssn = tape.mean_square(dn);
    let ssn = tape.scale(ssn, T::of((nr * nc) as f64));
    let target = tape.constant(edge_target);
    let de = tape.sub(out.edge_out, target)?;
    let sse = tape.mean_square(de);
    let sse = tape.scale(sse, T::of((layout.edges * et.dim()) as f64));
    let ss = tape.add(ssn, sse)?;
    let reg = tape.scale(ss, T::of(1.0 / samples.len() as f64));
    let disloc = dislocation_on_tape(&mut tape, &cells, out.nodes, out.edges, samples.len())?;
    finish(model, tape, reg, disloc, penalty, with_grads)
}

/// Loss of complete rollouts from the initial frames: at every step, summed
/// squared standardized error of the predicted state against the true
/// frame, plus `penalty` times the junction dislocation; per graph and
/// averaged over the eleven steps.
pub fn rollout_loss<T: Real>(
    model: &Surrogate<T>,
    trajectories: &[(&[GridGraph], &ContiguityPairs)],
    penalty: f64,
    with_grads: bool,
) -> Result<LossEval<T>> {
    if trajectories.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    for (frames, _) in trajectories {
        if frames.len() != NUM_FRAMES {
            return Err(Error::Shape(format!("trajectory with {} frames", frames.len())));
        }
    }
    let g0s: Vec<&GridGraph> = trajectories.iter().map(|t| &t.0[0]).collect();
    let layout = BatchLayout::<T>::new(&g0s);
    let pairs: Vec<&ContiguityPairs> = trajectories.iter().map(|t| t.1).collect();
    let cells = pair_cells(&layout, &pairs)?;
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let (n0, e0) = stack::<T>(&g0s);
    let (mut n, mut e) = (tape.constant(n0), tape.constant(e0));
    let steps = NUM_FRAMES - 1;
    let mut reg_sum: Option<Var> = None;
    let mut dis_sum: Option<Var> = None;
    for t in 0..steps {
        let engine = usize::from(t >= STAGE1_STEPS);
        let out = model.step_on_tape(&mut tape, &params, engine, &layout, n, e)?;
        (n, e) = (out.nodes, out.edges);
        let truth: Vec<&GridGraph> = trajectories.iter().map(|tr| &tr.0[t + 1]).collect();
        let (tn, te) = stack::<T>(&truth);
        let mut terms = Vec::new();
        for (node, state, truth_rows) in [(true, n, tn), (false, e, te)] {
            let scaler = model.target(engine, node);
            let width = if node { NODE_WIDTH } else { EDGE_WIDTH };
            let rows = truth_rows.rows;
            let w = Mat::from_fn(width, scaler.dim(), |r, c| {
                if r == c && scaler.std[c] > 0.0 {
                    T::of(1.0 / scaler.std[c])
                } else {
                    T::zero()
                }
            });
            let wt = w.transpose();
            let truth_var = tape.constant(truth_rows);
            let diff = tape.sub(state, truth_var)?;
            let z = tape.linear(diff, &Arc::new(w), &Arc::new(wt), &vec![T::zero(); scaler.dim()])?;
            let ms = tape.mean_square(z);
            terms.push(tape.scale(ms, T::of((rows * scaler.dim()) as f64)));
        }
        let ss = tape.add(terms[0], terms[1])?;
        let reg = tape.scale(ss, T::of(1.0 / (trajectories.len() * steps) as f64));
        let dis = dislocation_on_tape(&mut tape, &cells, n, e, trajectories.len())?;
        let dis = tape.scale(dis, T::of(1.0 / steps as f64));
        reg_sum = Some(match reg_sum {
            Some(acc) => tape.add(acc, reg)?,
            None => reg,
        });
        dis_sum = Some(match dis_sum {
            Some(acc) => tape.add(acc, dis)?,
            None => dis,
        });
    }
    finish(model, tape, reg_sum.expect("steps"), dis_sum.expect("steps"), penalty, with_grads)
}

/// A training trajectory in canonical orientation with its junction pairs.
pub(crate) struct Prepared {
    pub trajectory: Trajectory,
    pub pairs: ContiguityPairs,
}

pub(crate) fn prepare(trajectories: &[Trajectory]) -> Result<Vec<Prepared>> {
    trajectories
        .iter()
        .map(|t| {
            if t.frames.len() != NUM_FRAMES {
                return Err(Error::Shape(format!("trajectory with {} frames", t.frames.len())));
            }
            let trajectory = canonicalize_trajectory(t);
            let pairs = contiguity_pairs(trajectory.initial())?;
            Ok(Prepared { trajectory, pairs })
        })
        .collect()
}

fn mix(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn in_validation(t: &Trajectory, fraction: f64) -> bool {
    (mix(&[design_hash(&t.design), 0x7661_6c69_6461_7465]) as f64) < fraction * u64::MAX as f64
}

#[derive(Default)]
struct Running {
    loss: f64,
    regression: f64,
    dislocation: f64,
    weight: f64,
}

impl Running {
    fn add(&mut self, terms: &LossTerms, weight: usize) {
        let w = weight as f64;
        self.loss += terms.total * w;
        self.regression += terms.regression * w;
        self.dislocation += terms.dislocation * w;
        self.weight += w;
    }

    fn mean(&self) -> (f64, f64, f64) {
        let w = self.weight.max(1.0);
        (self.loss / w, self.regression / w, self.dislocation / w)
    }
}

fn one_step_samples(items: &[&Prepared], engine: usize) -> Vec<(usize, usize)> {
    (0..items.len())
        .flat_map(|i| engine_frames(engine).map(move |t| (i, t)))
        .collect()
}

/// Noise-free one-step loss over every step of `items`.
fn validation_loss(model: &Surrogate<f32>, items: &[&Prepared], hp: &Hyperparams) -> Result<f64> {
    let mut running = Running::default();
    for engine in 0..2 {
        let samples = one_step_samples(items, engine);
        for chunk in samples.chunks(hp.batch_size.max(64)) {
            let batch: Vec<StepSample> = chunk
                .iter()
                .map(|&(i, t)| StepSample {
                    input: &items[i].trajectory.frames[t],
                    next: &items[i].trajectory.frames[t + 1],
                    pairs: &items[i].pairs,
                })
                .collect();
            let eval = step_loss(model, engine, &batch, hp.penalty, false)?;
            running.add(&eval.terms, chunk.len());
        }
    }
    Ok(running.mean().0)
}

fn parameter_engines(model: &Surrogate<f32>) -> [Vec<bool>; 2] {
    [0, 1].map(|e| {
        model
            .store
            .names
            .iter()
            .map(|n| n.starts_with(&format!("e{e}.")))
            .collect()
    })
}

/// Fits normalizers on the training split and trains both engines.
/// Deterministic for a given seed.
pub fn train(trajectories: &[Trajectory], hp: &Hyperparams) -> Result<TrainOutcome> {
    hp.validate()?;
    let n = hp.dataset_size.unwrap_or(trajectories.len()).min(trajectories.len());
    if n == 0 {
        return Err(Error::InvalidConfig("no training trajectories".into()));
    }
    let prepared = prepare(&trajectories[..n])?;
    let (mut fit, mut val): (Vec<&Prepared>, Vec<&Prepared>) =
        prepared.iter().partition(|p| !in_validation(&p.trajectory, hp.validation_fraction));
    if fit.is_empty() {
        std::mem::swap(&mut fit, &mut val);
    }
    if val.is_empty() {
        val = fit.clone();
    }
    let fit_trajectories: Vec<Trajectory> = fit.iter().map(|p| p.trajectory.clone()).collect();
    let normalizers = fit_normalizers(&fit_trajectories, hp.cutoff)?;
    let mut model = Surrogate::<f32>::new(hp.model.clone(), normalizers)?;
    log::info!(
        "training on {} trajectories ({} validation), {} parameters",
        fit.len(),
        val.len(),
        model.parameter_count()
    );
    let config = AdamConfig {
        learning_rate: hp.learning_rate,
        ..AdamConfig::default()
    };
    let active = parameter_engines(&model);
    let mut adams = [Adam::new(config, &model.store), Adam::new(config, &model.store)];
    let val_trajectories: Vec<Trajectory> = val.iter().map(|p| p.trajectory.clone()).collect();

    let mut history = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, crate::nn::ParamStore<f32>)> = None;
    for epoch in 0..hp.epochs {
        let started = Instant::now();
        let rate = hp.learning_rate_at(epoch);
        for adam in &mut adams {
            adam.config.learning_rate = rate;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[hp.seed, epoch as u64]));
        let mut running = Running::default();
        if hp.rollout_backprop {
            let mut order: Vec<usize> = (0..fit.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(hp.batch_size) {
                let batch: Vec<(&[GridGraph], &ContiguityPairs)> = chunk
                    .iter()
                    .map(|&i| (fit[i].trajectory.frames.as_slice(), &fit[i].pairs))
                    .collect();
                let eval = rollout_loss(&model, &batch, hp.penalty, true)?;
                let grads = eval.grads.expect("requested");
                if !grads.is_finite() {
                    log::warn!("epoch {epoch}: non-finite gradient, batch skipped");
                    continue;
                }
                for (adam, mask) in adams.iter_mut().zip(&active) {
                    adam.update_masked(&mut model.store, &grads, Some(mask))?;
                }
                running.add(&eval.terms, chunk.len());
            }
        } else {
            for engine in 0..2 {
                let mut samples = one_step_samples(&fit, engine);
                samples.shuffle(&mut rng);
                for (b, chunk) in samples.chunks(hp.batch_size).enumerate() {
                    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(&[hp.seed, epoch as u64, engine as u64, b as u64]));
                    let noisy = chunk
                        .iter()
                        .map(|&(i, t)| {
                            let frames = &fit[i].trajectory.frames;
                            inject_noise(&frames[t], &frames[0], hp.noise, &mut noise_rng)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let batch: Vec<StepSample> = chunk
                        .iter()
                        .zip(&noisy)
                        .map(|(&(i, t), input)| StepSample {
                            input,
                            next: &fit[i].trajectory.frames[t + 1],
                            pairs: &fit[i].pairs,
                        })
                        .collect();
                    let eval = step_loss(&model, engine, &batch, hp.penalty, true)?;
                    let grads = eval.grads.expect("requested");
                    match adams[engine].update_masked(&mut model.store, &grads, Some(&active[engine])) {
                        Ok(()) => running.add(&eval.terms, chunk.len()),
                        Err(Error::NonFiniteGradient) => {
                            log::warn!("epoch {epoch}: non-finite gradient, batch skipped");
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        let (train_loss, train_regression, train_dislocation) = running.mean();
        let validation_loss = validation_loss(&model, &val, hp)?;
        let (validation_vertex_error, validation_dislocation) = match final_frame_scores(&model, &val_trajectories) {
            Ok(s) => s,
            Err(Error::RolloutDiverged { .. }) => (f64::INFINITY, f64::INFINITY),
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_regression,
            train_dislocation,
            validation_loss,
            validation_vertex_error,
            validation_dislocation,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.5} (reg {train_regression:.5}, disloc {train_dislocation:.4}) \
             val {validation_loss:.5}, val final error {validation_vertex_error:.3} mm, {:.1}s",
            record.seconds
        );
        if best.as_ref().is_none_or(|b| validation_vertex_error < b.0) {
            best = Some((validation_vertex_error, epoch, model.store.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
