use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::canonical::{anchor, canonical_isometry};
use super::normalize::{NormalizerSet, Role, TargetScaler, CODE_WIDTH};
use super::pairs::{gather_pairs, Pair};
use crate::error::{Error, Result};
use crate::grid::layout::*;
use crate::grid::{build_graph, GridDesign, GridGraph, Source, Trajectory, NUM_FRAMES, STAGE1_STEPS};
use crate::nn::{Mat, Mlp, MlpSpec, ParamStore, Real, Tape, Var};

/// Graphs per parallel chunk in batch rollouts.
const CHUNK: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// Width of interaction vectors and of the latent graph.
    pub latent: usize,
    /// First hidden width; later layers halve it.
    pub first_width: usize,
    /// Hidden layers per perceptron.
    pub depth: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            latent: 32,
            first_width: 128,
            depth: 3,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.depth == 0 || self.first_width >> (self.depth - 1) == 0 {
            return Err(Error::InvalidConfig(format!(
                "latent {} and {} hidden layers from width {} must all be positive",
                self.latent, self.depth, self.first_width
            )));
        }
        Ok(())
    }

    pub fn hidden(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.first_width >> i).collect()
    }
}

/// Four perceptrons: two pair models emitting interaction vectors and two
/// element models consuming an element row with its summed interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionNet {
    pub nen: Mlp,
    pub ene: Mlp,
    pub node: Mlp,
    pub edge: Mlp,
}

/// Two interaction networks in sequence: the first emits a latent graph,
/// the second reads the graph with its latent and emits normalized deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineNets {
    pub first: InteractionNet,
    pub second: InteractionNet,
}

/// Constant affine map with its transpose, converted to the model's scalar.
struct Affine<T> {
    m: Arc<Mat<T>>,
    mt: Arc<Mat<T>>,
    c: Vec<T>,
}

impl<T: Real> Affine<T> {
    fn new((m, c): (Mat<f64>, Vec<f64>)) -> Affine<T> {
        Affine {
            mt: Arc::new(m.transpose().cast()),
            m: Arc::new(m.cast()),
            c: c.into_iter().map(T::of).collect(),
        }
    }

    fn apply(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, &self.m, &self.mt, &self.c)
    }
}

struct EngineConsts<T> {
    inputs: [Affine<T>; 4],
    node_delta: Affine<T>,
    edge_delta: Affine<T>,
}

fn engine_consts<T: Real>(normalizers: &NormalizerSet) -> Vec<EngineConsts<T>> {
    normalizers
        .engines
        .iter()
        .map(|n| EngineConsts {
            inputs: Role::ALL.map(|r| Affine::new(n.input(r).composite())),
            node_delta: Affine::new(n.node_target.full_delta()),
            edge_delta: Affine::new(n.edge_target.full_delta()),
        })
        .collect()
}

struct PairIndex<T> {
    sender: Arc<Vec<usize>>,
    conduit: Arc<Vec<usize>>,
    receiver: Arc<Vec<usize>>,
    codes: Mat<T>,
}

impl<T: Real> PairIndex<T> {
    fn new(pairs: &[(usize, usize, Pair)]) -> PairIndex<T> {
        let mut codes = Mat::zeros(pairs.len(), CODE_WIDTH);
        for (i, (_, _, p)) in pairs.iter().enumerate() {
            for (half, code) in [p.sender_code, p.receiver_code].into_iter().enumerate() {
                if (1..=4).contains(&code) {
                    codes.set(i, half * 4 + code as usize - 1, T::one());
                }
            }
        }
        let pick = |f: fn(&(usize, usize, Pair)) -> usize| Arc::new(pairs.iter().map(f).collect());
        PairIndex {
            sender: pick(|(s, _, p)| s + p.sender),
            conduit: pick(|(_, c, p)| c + p.conduit),
            receiver: pick(|(s, _, p)| s + p.receiver),
            codes,
        }
    }
}

/// Index structure of several graphs stacked into one node and one edge
/// matrix.
pub struct BatchLayout<T> {
    pub graphs: usize,
    pub nodes: usize,
    pub edges: usize,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
    nen: PairIndex<T>,
    ene: PairIndex<T>,
    /// Zero on rows of fixed nodes, which never move.
    node_mask: Arc<Mat<T>>,
}

impl<T: Real> BatchLayout<T> {
    pub fn new(graphs: &[&GridGraph]) -> BatchLayout<T> {
        let (mut nodes, mut edges) = (0, 0);
        let (mut node_offsets, mut edge_offsets) = (Vec::new(), Vec::new());
        let (mut nen, mut ene) = (Vec::new(), Vec::new());
        let mut fixed = Vec::new();
        for g in graphs {
            let pairs = gather_pairs(g);
            nen.extend(pairs.nen.into_iter().map(|p| (nodes, edges, p)));
            // Edge–node–edge pairs send between edges through a node.
            ene.extend(pairs.ene.into_iter().map(|p| (edges, nodes, p)));
            fixed.extend((0..g.n_nodes()).map(|n| g.node(n)[NODE_FIXED] > 0.5));
            node_offsets.push(nodes);
            edge_offsets.push(edges);
            nodes += g.n_nodes();
            edges += g.n_edges();
        }
        let node_mask = Mat::from_fn(nodes, NODE_WIDTH, |r, _| if fixed[r] { T::zero() } else { T::one() });
        BatchLayout {
            graphs: graphs.len(),
            nodes,
            edges,
            node_offsets,
            edge_offsets,
            nen: PairIndex::new(&nen),
            ene: PairIndex::new(&ene),
            node_mask: Arc::new(node_mask),
        }
    }
}

/// Stacks node and edge rows of several graphs.
pub fn stack<T: Real>(graphs: &[&GridGraph]) -> (Mat<T>, Mat<T>) {
    let node: Vec<T> = graphs.iter().flat_map(|g| g.node_data().iter().map(|&v| T::of(v))).collect();
    let edge: Vec<T> = graphs.iter().flat_map(|g| g.edge_data().iter().map(|&v| T::of(v))).collect();
    (
        Mat::from_vec(node.len() / NODE_WIDTH, NODE_WIDTH, node),
        Mat::from_vec(edge.len() / EDGE_WIDTH, EDGE_WIDTH, edge),
    )
}

/// Inverse of [`stack`], copying adjacency from `templates`.
pub fn unstack<T: Real>(templates: &[&GridGraph], nodes: &Mat<T>, edges: &Mat<T>) -> Vec<GridGraph> {
    let (mut n0, mut e0) = (0, 0);
    templates
        .iter()
        .map(|t| {
            let mut g = (*t).clone();
            let (nw, ew) = (g.n_nodes() * NODE_WIDTH, g.n_edges() * EDGE_WIDTH);
            for (d, s) in g.node_data_mut().iter_mut().zip(&nodes.data[n0..n0 + nw]) {
                *d = s.f64();
            }
            for (d, s) in g.edge_data_mut().iter_mut().zip(&edges.data[e0..e0 + ew]) {
                *d = s.f64();
            }
            n0 += nw;
            e0 += ew;
            g
        })
        .collect()
}

/// Recorded values of one engine step.
pub struct StepVars {
    /// Normalized node and edge predictions.
    pub node_out: Var,
    pub edge_out: Var,
    /// Next-state node and edge rows.
    pub nodes: Var,
    pub edges: Var,
}

/// Two-stage learned simulator: engine 0 for stress release, engine 1 for
/// creep.
pub struct Surrogate<T: Real> {
    pub config: SurrogateConfig,
    pub normalizers: NormalizerSet,
    pub engines: Vec<EngineNets>,
    pub store: ParamStore<T>,
    pub layout_hash: u64,
    consts: Vec<EngineConsts<T>>,
}

impl<T: Real> Clone for Surrogate<T> {
    fn clone(&self) -> Self {
        Surrogate::assemble(
            self.config.clone(),
            self.normalizers.clone(),
            self.engines.clone(),
            self.store.clone(),
            self.layout_hash,
        )
    }
}

impl<T: Real> Surrogate<T> {
    /// Freshly initialized model sized to the normalizers.
    pub fn new(config: SurrogateConfig, normalizers: NormalizerSet) -> Result<Surrogate<T>> {
        config.validate()?;
        if normalizers.engines.len() != 2 {
            return Err(Error::InvalidConfig("need normalizers for two engines".into()));
        }
        let mut store = ParamStore::default();
        let l = config.latent;
        let mut seed = config.seed;
        let mut mlp = |store: &mut ParamStore<T>, name: String, input: usize, output: usize| {
            seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let spec = MlpSpec {
                input,
                hidden: config.hidden(),
                output,
                seed,
            };
            Mlp::new(spec, store, &name)
        };
        let mut engines = Vec::new();
        for (i, n) in normalizers.engines.iter().enumerate() {
            let k = Role::ALL.map(|r| n.input(r).output_dim());
            let first = InteractionNet {
                nen: mlp(&mut store, format!("e{i}.in1.nen"), k[0], l)?,
                ene: mlp(&mut store, format!("e{i}.in1.ene"), k[1], l)?,
                node: mlp(&mut store, format!("e{i}.in1.node"), k[2] + l, l)?,
                edge: mlp(&mut store, format!("e{i}.in1.edge"), k[3] + l, l)?,
            };
            let second = InteractionNet {
                nen: mlp(&mut store, format!("e{i}.in2.nen"), k[0] + 3 * l, l)?,
                ene: mlp(&mut store, format!("e{i}.in2.ene"), k[1] + 3 * l, l)?,
                node: mlp(&mut store, format!("e{i}.in2.node"), k[2] + 2 * l, n.node_target.dim())?,
                edge: mlp(&mut store, format!("e{i}.in2.edge"), k[3] + 2 * l, n.edge_target.dim())?,
            };
            engines.push(EngineNets { first, second });
        }
        Ok(Surrogate::assemble(config, normalizers, engines, store, layout_hash()))
    }

    pub(crate) fn assemble(
        config: SurrogateConfig,
        normalizers: NormalizerSet,
        engines: Vec<EngineNets>,
        store: ParamStore<T>,
        layout_hash: u64,
    ) -> Surrogate<T> {
        let consts = engine_consts(&normalizers);
        Surrogate {
            config,
            normalizers,
            engines,
            store,
            layout_hash,
            consts,
        }
    }

    pub fn cast<U: Real>(&self) -> Surrogate<U> {
        Surrogate::assemble(
            self.config.clone(),
            self.normalizers.clone(),
            self.engines.clone(),
            self.store.cast(),
            self.layout_hash,
        )
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn target(&self, engine: usize, node: bool) -> &TargetScaler {
        let n = &self.normalizers.engines[engine];
        if node {
            &n.node_target
        } else {
            &n.edge_target
        }
    }

    /// Puts every parameter on the tape, in store order.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        (0..self.store.len()).map(|i| tape.param(&self.store, i)).collect()
    }

    fn pair_rows(tape: &mut Tape<T>, index: &PairIndex<T>, parts: [Var; 3]) -> Result<Var> {
        let s = tape.gather(parts[0], &index.sender)?;
        let c = tape.gather(parts[1], &index.conduit)?;
        let r = tape.gather(parts[2], &index.receiver)?;
        let codes = tape.constant(index.codes.clone());
        tape.concat(&[s, c, r, codes])
    }

    #[allow(clippy::too_many_arguments)]
    fn interact(
        net: &InteractionNet,
        tape: &mut Tape<T>,
        params: &[Var],
        layout: &BatchLayout<T>,
        inputs: [Var; 4],
        latent: Option<(Var, Var)>,
    ) -> Result<(Var, Var)> {
        let [nen, ene, node, edge] = inputs;
        let (nen, ene) = match latent {
            Some((ln, le)) => {
                let nen_latent = Self::pair_rows_plain(tape, &layout.nen, [ln, le, ln])?;
                let ene_latent = Self::pair_rows_plain(tape, &layout.ene, [le, ln, le])?;
                (tape.concat(&[nen, nen_latent])?, tape.concat(&[ene, ene_latent])?)
            }
            None => (nen, ene),
        };
        let to_nodes = net.nen.forward(tape, params, nen)?;
        let to_edges = net.ene.forward(tape, params, ene)?;
        let node_sum = tape.scatter_sum(to_nodes, &layout.nen.receiver, layout.nodes)?;
        let edge_sum = tape.scatter_sum(to_edges, &layout.ene.receiver, layout.edges)?;
        let (node_in, edge_in) = match latent {
            Some((ln, le)) => (tape.concat(&[node, ln, node_sum])?, tape.concat(&[edge, le, edge_sum])?),
            None => (tape.concat(&[node, node_sum])?, tape.concat(&[edge, edge_sum])?),
        };
        Ok((
            net.node.forward(tape, params, node_in)?,
            net.edge.forward(tape, params, edge_in)?,
        ))
    }

    fn pair_rows_plain(tape: &mut Tape<T>, index: &PairIndex<T>, parts: [Var; 3]) -> Result<Var> {
        let s = tape.gather(parts[0], &index.sender)?;
        let c = tape.gather(parts[1], &index.conduit)?;
        let r = tape.gather(parts[2], &index.receiver)?;
        tape.concat(&[s, c, r])
    }

    /// Records one step of `engine` on stacked node and edge rows.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        engine: usize,
        layout: &BatchLayout<T>,
        nodes: Var,
        edges: Var,
    ) -> Result<StepVars> {
        let (nets, consts) = (&self.engines[engine], &self.consts[engine]);
        if tape.value(nodes).shape() != (layout.nodes, NODE_WIDTH)
            || tape.value(edges).shape() != (layout.edges, EDGE_WIDTH)
        {
            return Err(Error::Shape("graph rows do not match the batch layout".into()));
        }
        let nen = Self::pair_rows(tape, &layout.nen, [nodes, edges, nodes])?;
        let ene = Self::pair_rows(tape, &layout.ene, [edges, nodes, edges])?;
        let inputs = [
            consts.inputs[0].apply(tape, nen)?,
            consts.inputs[1].apply(tape, ene)?,
            consts.inputs[2].apply(tape, nodes)?,
            consts.inputs[3].apply(tape, edges)?,
        ];
        let latent = Self::interact(&nets.first, tape, params, layout, inputs, None)?;
        let (node_out, edge_out) = Self::interact(&nets.second, tape, params, layout, inputs, Some(latent))?;
        let node_delta = consts.node_delta.apply(tape, node_out)?;
        let node_delta = tape.mask(node_delta, &layout.node_mask)?;
        let edge_delta = consts.edge_delta.apply(tape, edge_out)?;
        Ok(StepVars {
            node_out,
            edge_out,
            nodes: tape.add(nodes, node_delta)?,
            edges: tape.add(edges, edge_delta)?,
        })
    }

    /// One step of `engine` on stacked rows, without canonicalization.
    pub fn step_rows(&self, engine: usize, layout: &BatchLayout<T>, nodes: Mat<T>, edges: Mat<T>) -> Result<(Mat<T>, Mat<T>)> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape);
        let (n, e) = (tape.constant(nodes), tape.constant(edges));
        let out = self.step_on_tape(&mut tape, &params, engine, layout, n, e)?;
        Ok((tape.take(out.nodes), tape.take(out.edges)))
    }

    /// One engine step on each graph as given.
    pub fn step(&self, engine: usize, graphs: &[GridGraph]) -> Result<Vec<GridGraph>> {
        let refs: Vec<&GridGraph> = graphs.iter().collect();
        for g in &refs {
            g.check_grid_layout()?;
        }
        let layout = BatchLayout::new(&refs);
        let (n, e) = stack(&refs);
        let (n, e) = self.step_rows(engine, &layout, n, e)?;
        Ok(unstack(&refs, &n, &e))
    }

    /// Rolls out stacked graphs in their own frame; returns every frame.
    fn rollout_frames(&self, graphs: &[&GridGraph]) -> Result<Vec<Vec<GridGraph>>> {
        let layout = BatchLayout::new(graphs);
        let (mut n, mut e) = stack(graphs);
        let mut frames: Vec<Vec<GridGraph>> = graphs.iter().map(|g| vec![(*g).clone()]).collect();
        for t in 0..NUM_FRAMES - 1 {
            let engine = usize::from(t >= STAGE1_STEPS);
            (n, e) = self.step_rows(engine, &layout, n, e)?;
            if !n.is_finite() || !e.is_finite() {
                return Err(Error::RolloutDiverged { frame: t + 1 });
            }
            for (list, g) in frames.iter_mut().zip(unstack(graphs, &n, &e)) {
                list.push(g);
            }
        }
        Ok(frames)
    }

    /// Twelve frames starting from `g0`. The graph is anchored at its fixed
    /// node and turned to its canonical orientation before simulation, and
    /// every predicted frame is mapped back.
    pub fn rollout(&self, g0: &GridGraph) -> Result<Vec<GridGraph>> {
        Ok(self.rollout_batch(std::slice::from_ref(g0))?.pop().expect("one rollout"))
    }

    /// Rollouts of many graphs; identical to rolling each out alone.
    pub fn rollout_batch(&self, g0s: &[GridGraph]) -> Result<Vec<Vec<GridGraph>>> {
        for g in g0s {
            g.check_grid_layout()?;
        }
        let prepared: Vec<_> = g0s
            .iter()
            .map(|g| {
                let offset = anchor(g);
                let anchored = g.translated(-offset);
                let iso = canonical_isometry(&anchored);
                (offset, iso, iso.apply_graph(&anchored))
            })
            .collect();
        let chunks: Vec<Result<Vec<Vec<GridGraph>>>> = prepared
            .par_chunks(CHUNK)
            .map(|chunk| {
                let refs: Vec<&GridGraph> = chunk.iter().map(|p| &p.2).collect();
                self.rollout_frames(&refs)
            })
            .collect();
        let mut out: Vec<Vec<GridGraph>> = Vec::with_capacity(g0s.len());
        for (chunk, prepared) in chunks.into_iter().zip(prepared.chunks(CHUNK)) {
            for (frames, (offset, iso, _)) in chunk?.into_iter().zip(prepared) {
                let back = iso.inverse();
                out.push(frames.iter().map(|f| back.apply_graph(f).translated(*offset)).collect());
            }
        }
        for (frames, g0) in out.iter_mut().zip(g0s) {
            frames[0] = g0.clone();
        }
        Ok(out)
    }

    /// Builds the initial graph of a design and rolls it out.
    pub fn simulate(&self, design: &GridDesign) -> Result<Trajectory> {
        Ok(self.simulate_batch(std::slice::from_ref(design))?.pop().expect("one trajectory"))
    }

    pub fn simulate_batch(&self, designs: &[GridDesign]) -> Result<Vec<Trajectory>> {
        let g0s = designs.iter().map(build_graph).collect::<Result<Vec<_>>>()?;
        let frames = self.rollout_batch(&g0s)?;
        Ok(designs
            .iter()
            .zip(frames)
            .map(|(d, frames)| Trajectory {
                design: d.clone(),
                frames,
                source: Source::Surrogate,
            })
            .collect())
    }
}
