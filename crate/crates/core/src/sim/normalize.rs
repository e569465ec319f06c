use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::pairs::{gather_pairs, Pair};
use crate::error::{Error, Result};
use crate::grid::layout::*;
use crate::grid::{GridGraph, Trajectory, NUM_FRAMES, STAGE1_STEPS};
use crate::nn::Mat;

/// Width of the two one-hot adjacency codes appended to every pair row.
pub const CODE_WIDTH: usize = 8;

/// Eigenvalues below this fraction of the total variance are never kept.
const MIN_COMPONENT: f64 = 1e-12;

/// Channel standard deviations at or below this are treated as constant.
const MIN_STD: f64 = 1e-12;

const BLOCK_ROWS: usize = 1024;

/// The four input roles of an interaction network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Nen,
    Ene,
    Node,
    Edge,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Nen, Role::Ene, Role::Node, Role::Edge];

    pub fn name(self) -> &'static str {
        match self {
            Role::Nen => "nen",
            Role::Ene => "ene",
            Role::Node => "node",
            Role::Edge => "edge",
        }
    }

    pub fn raw_width(self) -> usize {
        match self {
            Role::Nen => 2 * NODE_WIDTH + EDGE_WIDTH + CODE_WIDTH,
            Role::Ene => 2 * EDGE_WIDTH + NODE_WIDTH + CODE_WIDTH,
            Role::Node => NODE_WIDTH,
            Role::Edge => EDGE_WIDTH,
        }
    }

    /// Element kinds (true = node) laid out in a raw row, and the index of
    /// the one whose centre is the reference point.
    fn parts(self) -> (&'static [bool], usize) {
        match self {
            Role::Nen => (&[true, false, true], 2),
            Role::Ene => (&[false, true, false], 2),
            Role::Node => (&[true], 0),
            Role::Edge => (&[false], 0),
        }
    }

    /// Kind of every raw channel and, for coordinates, the raw channel of the
    /// reference centre on the same axis. The reference centre itself stays
    /// absolute, which in the anchored frame is its offset from the fixed joint.
    fn channels(self) -> Vec<(ChannelKind, Option<usize>)> {
        let (parts, reference) = self.parts();
        let mut offsets = Vec::new();
        let mut at = 0;
        for &node in parts {
            offsets.push(at);
            at += if node { NODE_WIDTH } else { EDGE_WIDTH };
        }
        let ref_center = offsets[reference] + if parts[reference] { NODE_CENTER } else { EDGE_CENTER };
        let mut out = Vec::with_capacity(self.raw_width());
        for &node in parts {
            let width = if node { NODE_WIDTH } else { EDGE_WIDTH };
            for ch in 0..width {
                let kind = if node { node_channel(ch) } else { edge_channel(ch) };
                let reference = (kind == ChannelKind::Coordinate)
                    .then(|| ref_center + coordinate_axis(node, ch))
                    .filter(|&r| r != out.len());
                out.push((kind, reference));
            }
        }
        out.extend((0..self.raw_width() - at).map(|_| (ChannelKind::Design, None)));
        out
    }
}

fn coordinate_axis(node: bool, ch: usize) -> usize {
    if !node && ch >= EDGE_CENTER {
        ch - EDGE_CENTER
    } else {
        ch % 3
    }
}

fn push_codes(row: &mut Vec<f64>, pair: &Pair) {
    for code in [pair.sender_code, pair.receiver_code] {
        row.extend((1..=4u8).map(|c| if c == code { 1.0 } else { 0.0 }));
    }
}

/// Raw input rows of one role, in pair (or element) order.
pub fn raw_rows(graph: &GridGraph, role: Role) -> Vec<Vec<f64>> {
    match role {
        Role::Node => (0..graph.n_nodes()).map(|n| graph.node(n).to_vec()).collect(),
        Role::Edge => (0..graph.n_edges()).map(|e| graph.edge(e).to_vec()).collect(),
        Role::Nen | Role::Ene => {
            let pairs = gather_pairs(graph);
            let (list, nen) = match role {
                Role::Nen => (&pairs.nen, true),
                _ => (&pairs.ene, false),
            };
            list.iter()
                .map(|p| {
                    let mut row = Vec::with_capacity(role.raw_width());
                    if nen {
                        row.extend_from_slice(graph.node(p.sender));
                        row.extend_from_slice(graph.edge(p.conduit));
                        row.extend_from_slice(graph.node(p.receiver));
                    } else {
                        row.extend_from_slice(graph.edge(p.sender));
                        row.extend_from_slice(graph.node(p.conduit));
                        row.extend_from_slice(graph.edge(p.receiver));
                    }
                    push_codes(&mut row, p);
                    row
                })
                .collect()
        }
    }
}

/// Receiver-centred, standardized, PCA-projected and whitened input map.
/// Design and code channels are standardized but bypass the projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub role: Role,
    pub raw_dim: usize,
    /// Raw channel subtracted from each channel before anything else.
    pub reference: Vec<Option<usize>>,
    /// Statistics of the centred channels.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Centred channels entering the projection.
    pub projected: Vec<usize>,
    /// Non-constant design and code channels, standardized only.
    pub passed: Vec<usize>,
    /// Orthonormal columns, `projected.len() × k`.
    pub basis: Mat<f64>,
    pub component_std: Vec<f64>,
    /// Fraction of standardized variance the retained components explain.
    pub explained: f64,
}

impl Normalizer {
    pub fn output_dim(&self) -> usize {
        self.basis.cols + self.passed.len()
    }

    fn centered(&self, raw: &[f64]) -> Vec<f64> {
        (0..self.raw_dim)
            .map(|c| match self.reference[c] {
                Some(r) => raw[c] - raw[r],
                None => raw[c],
            })
            .collect()
    }

    /// Normalizes one raw row.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        self.apply_centered(&self.centered(raw))
    }

    fn apply_centered(&self, x: &[f64]) -> Vec<f64> {
        let z = |c: usize| (x[c] - self.mean[c]) / self.std[c];
        let mut out = vec![0.0; self.output_dim()];
        for (i, &c) in self.projected.iter().enumerate() {
            let zc = z(c);
            for (j, o) in out[..self.basis.cols].iter_mut().enumerate() {
                *o += zc * self.basis.get(i, j);
            }
        }
        for (o, s) in out.iter_mut().zip(&self.component_std) {
            *o /= s;
        }
        for (o, &c) in out[self.basis.cols..].iter_mut().zip(&self.passed) {
            *o = z(c);
        }
        out
    }

    /// Maps a normalized row back to centred raw channels. Exact on the
    /// retained subspace; constant channels return their mean.
    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.raw_dim];
        for (i, &c) in self.projected.iter().enumerate() {
            z[c] = (0..self.basis.cols)
                .map(|j| normalized[j] * self.component_std[j] * self.basis.get(i, j))
                .sum();
        }
        for (k, &c) in self.passed.iter().enumerate() {
            z[c] = normalized[self.basis.cols + k];
        }
        (0..self.raw_dim).map(|c| z[c] * self.std[c] + self.mean[c]).collect()
    }

    /// The whole map as one affine transform: `apply(r) = r · m + c`.
    pub fn composite(&self) -> (Mat<f64>, Vec<f64>) {
        let k = self.basis.cols;
        let mut m = Mat::zeros(self.raw_dim, self.output_dim());
        let mut c = vec![0.0; self.output_dim()];
        let mut put = |ch: usize, j: usize, w: f64, m: &mut Mat<f64>| {
            m.data[ch * m.cols + j] += w;
            if let Some(r) = self.reference[ch] {
                m.data[r * m.cols + j] -= w;
            }
            c[j] -= w * self.mean[ch];
        };
        for (i, &ch) in self.projected.iter().enumerate() {
            for j in 0..k {
                let w = self.basis.get(i, j) / (self.std[ch] * self.component_std[j]);
                put(ch, j, w, &mut m);
            }
        }
        for (i, &ch) in self.passed.iter().enumerate() {
            put(ch, k + i, 1.0 / self.std[ch], &mut m);
        }
        (m, c)
    }
}

/// Accumulates mean and covariance of centred rows in two streaming passes.
struct Moments {
    dim: usize,
    count: usize,
    sum: Vec<f64>,
    cov: DMatrix<f64>,
    block: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Moments {
        Moments {
            dim,
            count: 0,
            sum: vec![0.0; dim],
            cov: DMatrix::zeros(dim, dim),
            block: Vec::with_capacity(BLOCK_ROWS * dim),
        }
    }

    fn add_mean(&mut self, x: &[f64]) {
        self.count += 1;
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += v;
        }
    }

    fn add_cov(&mut self, x: &[f64], mean: &[f64]) {
        self.block.extend(x.iter().zip(mean).map(|(v, m)| v - m));
        if self.block.len() == BLOCK_ROWS * self.dim {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.block.is_empty() {
            return;
        }
        let rows = self.block.len() / self.dim;
        let x = DMatrix::from_row_slice(rows, self.dim, &self.block);
        self.cov += x.transpose() * &x;
        self.block.clear();
    }
}

/// Fits one normalizer from a source of raw rows; `rows` is called twice.
pub fn fit_normalizer<I>(role: Role, rows: impl Fn() -> I, cutoff: f64) -> Result<Normalizer>
where
    I: Iterator<Item = Vec<f64>>,
{
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::InvalidConfig(format!("cutoff {cutoff} outside (0, 1]")));
    }
    let dim = role.raw_width();
    let channels = role.channels();
    let reference: Vec<Option<usize>> = channels.iter().map(|c| c.1).collect();
    let center = |raw: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|c| match reference[c] {
                Some(r) => raw[c] - raw[r],
                None => raw[c],
            })
            .collect()
    };
    let mut moments = Moments::new(dim);
    for raw in rows() {
        if raw.len() != dim {
            return Err(Error::Shape(format!("{} row of width {}, expected {dim}", role.name(), raw.len())));
        }
        moments.add_mean(&center(&raw));
    }
    let n = moments.count;
    if n <= dim {
        return Err(Error::NormalizerUnderdetermined {
            role: role.name().into(),
            samples: n,
            dims: dim,
        });
    }
    let mean: Vec<f64> = moments.sum.iter().map(|s| s / n as f64).collect();
    for raw in rows() {
        moments.add_cov(&center(&raw), &mean);
    }
    moments.flush();
    let cov = moments.cov / n as f64;
    let std: Vec<f64> = (0..dim).map(|c| cov[(c, c)].max(0.0).sqrt()).collect();
    let live = |c: usize| std[c] > MIN_STD * (1.0 + mean[c].abs());
    let projected: Vec<usize> = (0..dim)
        .filter(|&c| live(c) && channels[c].0 != ChannelKind::Design)
        .collect();
    let passed: Vec<usize> = (0..dim)
        .filter(|&c| live(c) && channels[c].0 == ChannelKind::Design)
        .collect();
    let std: Vec<f64> = (0..dim).map(|c| if live(c) { std[c] } else { 1.0 }).collect();

    let p = projected.len();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        let (a, b) = (projected[i], projected[j]);
        cov[(a, b)] / (std[a] * std[b])
    });
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        let value = eig.eigenvalues[i];
        if acc >= cutoff * total * (1.0 - 1e-12) || value <= MIN_COMPONENT * total {
            break;
        }
        acc += value;
        kept.push(i);
    }
    let mut basis = Mat::zeros(p, kept.len());
    for (j, &i) in kept.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        // Fix the sign so the largest entry is positive.
        let pivot = (0..p).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..p {
            basis.set(r, j, sign * col[r]);
        }
    }
    let component_std = kept.iter().map(|&i| eig.eigenvalues[i].sqrt()).collect();
    Ok(Normalizer {
        role,
        raw_dim: dim,
        reference,
        mean,
        std,
        projected,
        passed,
        basis,
        component_std,
        explained: if total > 0.0 { acc / total } else { 1.0 },
    })
}

/// Per-channel standardization of one-step deltas of the updated channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub node: bool,
    pub mean: Vec<f64>,
    /// Zero for channels that never change; their prediction is the mean.
    pub std: Vec<f64>,
}

impl TargetScaler {
    /// Channels updated by a step: corners for nodes, corners and stress for
    /// edges.
    pub fn width(node: bool) -> usize {
        if node {
            NODE_CENTER
        } else {
            EDGE_ACTUATOR
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn encode(&self, delta: &[f64]) -> Vec<f64> {
        delta
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(d, (m, s))| if *s > 0.0 { (d - m) / s } else { 0.0 })
            .collect()
    }

    pub fn decode(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Affine map from a normalized prediction to a full element-row delta,
    /// moving each centre by the mean of its corner deltas.
    pub fn full_delta(&self) -> (Mat<f64>, Vec<f64>) {
        let (width, corners, center) = if self.node {
            (NODE_WIDTH, NODE_CENTER, NODE_CENTER)
        } else {
            (EDGE_WIDTH, EDGE_STRESS, EDGE_CENTER)
        };
        let n_corners = (corners / 3) as f64;
        let lift = |ch: usize, out: &mut [f64], v: f64| {
            out[ch] += v;
            if ch < corners {
                out[center + ch % 3] += v / n_corners;
            }
        };
        let mut m = Mat::zeros(self.dim(), width);
        let mut c = vec![0.0; width];
        for ch in 0..self.dim() {
            lift(ch, &mut m.data[ch * width..(ch + 1) * width], self.std[ch]);
            lift(ch, &mut c, self.mean[ch]);
        }
        (m, c)
    }
}

fn fit_target<'a>(node: bool, deltas: impl Iterator<Item = &'a [f64]>) -> TargetScaler {
    let w = TargetScaler::width(node);
    let rows: Vec<&[f64]> = deltas.collect();
    let n = rows.len().max(1) as f64;
    let mean: Vec<f64> = (0..w).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let std = (0..w)
        .map(|c| {
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > MIN_STD * (1.0 + mean[c].abs()) {
                s
            } else {
                0.0
            }
        })
        .collect();
    TargetScaler { node, mean, std }
}

/// Normalizers of one engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineNormalizers {
    pub nen: Normalizer,
    pub ene: Normalizer,
    pub node: Normalizer,
    pub edge: Normalizer,
    pub node_target: TargetScaler,
    pub edge_target: TargetScaler,
}

impl EngineNormalizers {
    pub fn input(&self, role: Role) -> &Normalizer {
        match role {
            Role::Nen => &self.nen,
            Role::Ene => &self.ene,
            Role::Node => &self.node,
            Role::Edge => &self.edge,
        }
    }
}

/// Normalizers for both engines; index 0 is the stress-release stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerSet {
    pub cutoff: f64,
    pub engines: Vec<EngineNormalizers>,
}

/// Frames an engine consumes: `t` for each one-step pair `t → t + 1`.
pub fn engine_frames(engine: usize) -> std::ops::Range<usize> {
    if engine == 0 {
        0..STAGE1_STEPS
    } else {
        STAGE1_STEPS..NUM_FRAMES - 1
    }
}

/// Row-wise delta `b - a` of the updated channels of every element.
pub fn element_deltas(a: &GridGraph, b: &GridGraph, node: bool) -> Vec<Vec<f64>> {
    let w = TargetScaler::width(node);
    if node {
        (0..a.n_nodes())
            .map(|n| (0..w).map(|c| b.node(n)[c] - a.node(n)[c]).collect())
            .collect()
    } else {
        (0..a.n_edges())
            .map(|e| (0..w).map(|c| b.edge(e)[c] - a.edge(e)[c]).collect())
            .collect()
    }
}

/// Fits every normalizer on trajectories that are already in canonical
/// orientation. Fixed nodes are left out of the node target statistics.
pub fn fit_normalizers(trajectories: &[Trajectory], cutoff: f64) -> Result<NormalizerSet> {
    if trajectories.is_empty() {
        return Err(Error::NormalizerUnderdetermined {
            role: "all".into(),
            samples: 0,
            dims: 0,
        });
    }
    for t in trajectories {
        if t.frames.len() != NUM_FRAMES {
            return Err(Error::Shape(format!("trajectory with {} frames", t.frames.len())));
        }
    }
    let mut engines = Vec::new();
    for engine in 0..2 {
        let frames = || {
            trajectories
                .iter()
                .flat_map(move |t| engine_frames(engine).map(move |f| &t.frames[f]))
        };
        let fit = |role: Role| fit_normalizer(role, || frames().flat_map(move |g| raw_rows(g, role)), cutoff);
        let mut node_deltas = Vec::new();
        let mut edge_deltas = Vec::new();
        for t in trajectories {
            for f in engine_frames(engine) {
                let (a, b) = (&t.frames[f], &t.frames[f + 1]);
                let fixed = a.fixed_node();
                for (n, d) in element_deltas(a, b, true).into_iter().enumerate() {
                    if Some(n) != fixed {
                        node_deltas.push(d);
                    }
                }
                edge_deltas.extend(element_deltas(a, b, false));
            }
        }
        engines.push(EngineNormalizers {
            nen: fit(Role::Nen)?,
            ene: fit(Role::Ene)?,
            node: fit(Role::Node)?,
            edge: fit(Role::Edge)?,
            node_target: fit_target(true, node_deltas.iter().map(Vec::as_slice)),
            edge_target: fit_target(false, edge_deltas.iter().map(Vec::as_slice)),
        });
    }
    Ok(NormalizerSet { cutoff, engines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(role: Role, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = role.raw_width();
        // Correlated data: a few latent factors plus small noise, with a
        // one-hot block in the tail.
        (0..n)
            .map(|_| {
                let f: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let mut row: Vec<f64> = (0..w)
                    .map(|c| f[c % 4] * (1.0 + c as f64 * 0.01) + rng.gen_range(-0.1..0.1))
                    .collect();
                let hot = rng.gen_range(0..4);
                for k in 0..4 {
                    row[w - 4 + k] = if k == hot { 1.0 } else { 0.0 };
                }
                row
            })
            .collect()
    }

    #[test]
    fn full_cutoff_keeps_every_live_dimension() {
        let rows = random_rows(Role::Node, 500, 1);
        let norm = fit_normalizer(Role::Node, || rows.clone().into_iter(), 1.0).unwrap();
        // Every channel but the fixed flag is projected.
        assert_eq!(norm.projected.len(), NODE_WIDTH - 1);
        assert_eq!(norm.basis.cols, norm.projected.len());
        assert!((norm.explained - 1.0).abs() < 1e-9);
    }

    #[test]
    fn outputs_are_standardized_and_composite_agrees() {
        let rows = random_rows(Role::Nen, 3000, 2);
        let norm = fit_normalizer(Role::Nen, || rows.clone().into_iter(), 0.98).unwrap();
        assert!(norm.explained >= 0.98);
        let (m, c) = norm.composite();
        let out: Vec<Vec<f64>> = rows.iter().map(|r| norm.apply(r)).collect();
        let k = norm.output_dim();
        for j in 0..k {
            let mean = out.iter().map(|o| o[j]).sum::<f64>() / out.len() as f64;
            let std = (out.iter().map(|o| (o[j] - mean).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
            assert!(mean.abs() < 1e-9, "dim {j} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "dim {j} std {std}");
        }
        for (r, o) in rows.iter().zip(&out).take(50) {
            for j in 0..k {
                let v = c[j] + (0..r.len()).map(|i| r[i] * m.get(i, j)).sum::<f64>();
                assert!((v - o[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_on_retained_subspace() {
        let rows = random_rows(Role::Edge, 800, 3);
        let norm = fit_normalizer(Role::Edge, || rows.clone().into_iter(), 0.9).unwrap();
        let y = norm.apply(&rows[0]);
        let back = norm.apply_centered(&norm.invert(&y));
        assert!(back.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn too_few_rows_is_underdetermined() {
        let rows = random_rows(Role::Node, 10, 4);
        let err = fit_normalizer(Role::Node, || rows.clone().into_iter(), 0.98).unwrap_err();
        assert!(matches!(err, Error::NormalizerUnderdetermined { samples: 10, dims: 28, .. }));
    }

    #[test]
    fn translation_only_reaches_the_receiver_centre() {
        let rows = random_rows(Role::Ene, 600, 5);
        let norm = fit_normalizer(Role::Ene, || rows.clone().into_iter(), 0.98).unwrap();
        let channels = Role::Ene.channels();
        let shift = [3.5, -2.0, 1.25];
        let receiver_center = EDGE_WIDTH + NODE_WIDTH + EDGE_CENTER;
        let mut shifted = rows[7].clone();
        for (c, (kind, _)) in channels.iter().enumerate() {
            if *kind == ChannelKind::Coordinate {
                shifted[c] += shift[axis_of(c)];
            }
        }
        let (a, b) = (norm.centered(&rows[7]), norm.centered(&shifted));
        for c in 0..a.len() {
            let expect = if (receiver_center..receiver_center + 3).contains(&c) {
                shift[c - receiver_center]
            } else {
                0.0
            };
            assert!((b[c] - a[c] - expect).abs() < 1e-9, "channel {c}");
        }
    }

    fn axis_of(c: usize) -> usize {
        let (node, ch) = if c < EDGE_WIDTH {
            (false, c)
        } else if c < EDGE_WIDTH + NODE_WIDTH {
            (true, c - EDGE_WIDTH)
        } else {
            (false, c - EDGE_WIDTH - NODE_WIDTH)
        };
        coordinate_axis(node, ch)
    }

    #[test]
    fn target_scaler_lifts_corner_deltas_to_centres() {
        let scaler = TargetScaler {
            node: true,
            mean: vec![0.5; NODE_CENTER],
            std: vec![2.0; NODE_CENTER],
        };
        let (m, c) = scaler.full_delta();
        let y: Vec<f64> = (0..NODE_CENTER).map(|i| i as f64 * 0.1).collect();
        let delta = scaler.decode(&y);
        for ch in 0..NODE_WIDTH {
            let v = c[ch] + (0..NODE_CENTER).map(|i| y[i] * m.get(i, ch)).sum::<f64>();
            let expect = if ch < NODE_CENTER {
                delta[ch]
            } else if ch < NODE_FIXED {
                (0..8).map(|k| delta[k * 3 + ch - NODE_CENTER]).sum::<f64>() / 8.0
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-12, "channel {ch}");
        }
        assert_eq!(scaler.encode(&delta).iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-12, true);
    }
}
