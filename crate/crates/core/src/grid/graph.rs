use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::shape::corner_signs;
use super::{beam_curve, GridDesign, HALF_SIDE, HALF_THICKNESS, KAPPA_MAX};
use crate::error::{Error, Result};

/// Channel layout of node and edge feature vectors.
pub mod layout {
    use sha2::{Digest, Sha256};

    pub const NODE_CORNERS: usize = 8;
    pub const NODE_CENTER: usize = 24;
    pub const NODE_FIXED: usize = 27;
    pub const NODE_WIDTH: usize = 28;

    pub const EDGE_SECTIONS: usize = 3;
    pub const SECTION_CORNERS: usize = 4;
    pub const EDGE_STRESS: usize = 36;
    pub const EDGE_ACTUATOR: usize = 48;
    pub const EDGE_CENTER: usize = 49;
    pub const EDGE_WIDTH: usize = 52;

    /// Section index of the start, centre and end cross-sections.
    pub const SECTION_START: usize = 0;
    pub const SECTION_CENTER: usize = 1;
    pub const SECTION_END: usize = 2;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum ChannelKind {
        /// One component of a vertex or centre point, mm.
        Coordinate,
        /// Remaining rest curvature, deg/mm.
        Stress,
        /// Actuator fraction or fixed flag; never updated by the simulators.
        Design,
    }

    pub const fn node_corner(k: usize) -> usize {
        k * 3
    }

    pub const fn edge_corner(section: usize, c: usize) -> usize {
        (section * SECTION_CORNERS + c) * 3
    }

    pub const fn edge_stress(section: usize, c: usize) -> usize {
        EDGE_STRESS + section * SECTION_CORNERS + c
    }

    pub fn node_channel(ch: usize) -> ChannelKind {
        if ch == NODE_FIXED {
            ChannelKind::Design
        } else {
            ChannelKind::Coordinate
        }
    }

    pub fn edge_channel(ch: usize) -> ChannelKind {
        match ch {
            0..=35 | 49..=51 => ChannelKind::Coordinate,
            36..=47 => ChannelKind::Stress,
            _ => ChannelKind::Design,
        }
    }

    /// Stable fingerprint of this layout; stored in checkpoints so a model
    /// refuses graphs produced by a different extractor.
    pub fn layout_hash() -> u64 {
        let description = "node:28=corner8x3(bits x,y,z),center3,fixed1;\
             edge:52=section3(start,center,end)xcorner4(bits width,top)x3,\
             stress12,actuator1,center3;adjacency=+x,-x,+y,-y;relative-to-fixed";
        let digest = Sha256::digest(description.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

use layout::*;

/// Abstract graph of a grid at one timestep: beam–joint adjacency codes plus
/// numeric node (joint) and edge (beam) feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    n_nodes: usize,
    n_edges: usize,
    adjacency: Vec<u8>,
    nodes: Vec<f64>,
    edges: Vec<f64>,
}

impl GridGraph {
    pub fn zeros(n_nodes: usize, n_edges: usize) -> GridGraph {
        GridGraph {
            n_nodes,
            n_edges,
            adjacency: vec![0; n_nodes * n_edges],
            nodes: vec![0.0; n_nodes * NODE_WIDTH],
            edges: vec![0.0; n_edges * EDGE_WIDTH],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn adjacency(&self, edge: usize, node: usize) -> u8 {
        self.adjacency[edge * self.n_nodes + node]
    }

    pub fn set_adjacency(&mut self, edge: usize, node: usize, code: u8) {
        self.adjacency[edge * self.n_nodes + node] = code;
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * NODE_WIDTH..(i + 1) * NODE_WIDTH]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.nodes[i * NODE_WIDTH..(i + 1) * NODE_WIDTH]
    }

    pub fn edge(&self, i: usize) -> &[f64] {
        &self.edges[i * EDGE_WIDTH..(i + 1) * EDGE_WIDTH]
    }

    pub fn edge_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.edges[i * EDGE_WIDTH..(i + 1) * EDGE_WIDTH]
    }

    pub fn node_data(&self) -> &[f64] {
        &self.nodes
    }

    pub fn edge_data(&self) -> &[f64] {
        &self.edges
    }

    pub fn node_data_mut(&mut self) -> &mut [f64] {
        &mut self.nodes
    }

    pub fn edge_data_mut(&mut self) -> &mut [f64] {
        &mut self.edges
    }

    /// Nodes adjacent to `edge`, in node order.
    pub fn edge_endpoints(&self, edge: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes).filter(move |&n| self.adjacency(edge, n) != 0)
    }

    pub fn node_corner(&self, node: usize, k: usize) -> Vector3<f64> {
        read3(self.node(node), node_corner(k))
    }

    pub fn edge_corner(&self, edge: usize, section: usize, c: usize) -> Vector3<f64> {
        read3(self.edge(edge), edge_corner(section, c))
    }

    pub fn node_center(&self, node: usize) -> Vector3<f64> {
        read3(self.node(node), NODE_CENTER)
    }

    pub fn edge_center(&self, edge: usize) -> Vector3<f64> {
        read3(self.edge(edge), EDGE_CENTER)
    }

    /// Index of the node flagged as fixed (the first, if several).
    pub fn fixed_node(&self) -> Option<usize> {
        (0..self.n_nodes).find(|&i| self.node(i)[NODE_FIXED] > 0.5)
    }

    /// All encoded corner vertices: node corners first, then edge corners.
    pub fn vertices(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        let nodes = (0..self.n_nodes)
            .flat_map(move |n| (0..NODE_CORNERS).map(move |k| self.node_corner(n, k)));
        let edges = (0..self.n_edges).flat_map(move |e| {
            (0..EDGE_SECTIONS * SECTION_CORNERS)
                .map(move |i| self.edge_corner(e, i / SECTION_CORNERS, i % SECTION_CORNERS))
        });
        nodes.chain(edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.n_nodes * NODE_CORNERS + self.n_edges * EDGE_SECTIONS * SECTION_CORNERS
    }

    /// Sets every centre channel to the mean of the element's encoded vertices.
    pub fn recompute_centers(&mut self) {
        for n in 0..self.n_nodes {
            let mean = (0..NODE_CORNERS).map(|k| self.node_corner(n, k)).sum::<Vector3<f64>>()
                / NODE_CORNERS as f64;
            write3(self.node_mut(n), NODE_CENTER, mean);
        }
        let per_edge = EDGE_SECTIONS * SECTION_CORNERS;
        for e in 0..self.n_edges {
            let mean = (0..per_edge)
                .map(|i| self.edge_corner(e, i / SECTION_CORNERS, i % SECTION_CORNERS))
                .sum::<Vector3<f64>>()
                / per_edge as f64;
            write3(self.edge_mut(e), EDGE_CENTER, mean);
        }
    }

    /// Rigidly translates every coordinate channel.
    pub fn translated(&self, offset: Vector3<f64>) -> GridGraph {
        let mut out = self.clone();
        for n in 0..self.n_nodes {
            let row = out.node_mut(n);
            for ch in (0..NODE_FIXED).step_by(3) {
                add3(row, ch, offset);
            }
        }
        for e in 0..self.n_edges {
            let row = out.edge_mut(e);
            for ch in (0..EDGE_STRESS).step_by(3) {
                add3(row, ch, offset);
            }
            add3(row, EDGE_CENTER, offset);
        }
        out
    }

    /// Relabels elements: node `i` of the result is node `node_order[i]` of
    /// `self`, likewise for edges.
    pub fn permuted(&self, node_order: &[usize], edge_order: &[usize]) -> GridGraph {
        let mut out = GridGraph::zeros(self.n_nodes, self.n_edges);
        for (i, &src) in node_order.iter().enumerate() {
            out.node_mut(i).copy_from_slice(self.node(src));
        }
        for (i, &src) in edge_order.iter().enumerate() {
            out.edge_mut(i).copy_from_slice(self.edge(src));
            for (j, &nsrc) in node_order.iter().enumerate() {
                out.set_adjacency(i, j, self.adjacency(src, nsrc));
            }
        }
        out
    }

    /// Largest Euclidean distance between corresponding vertices or centres.
    pub fn max_vertex_deviation(&self, other: &GridGraph) -> f64 {
        let mut worst = self
            .vertices()
            .zip(other.vertices())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        for n in 0..self.n_nodes.min(other.n_nodes) {
            worst = worst.max((self.node_center(n) - other.node_center(n)).norm());
        }
        for e in 0..self.n_edges.min(other.n_edges) {
            worst = worst.max((self.edge_center(e) - other.edge_center(e)).norm());
        }
        worst
    }

    /// Mean Euclidean distance over all encoded corner vertices.
    pub fn mean_vertex_error(&self, other: &GridGraph) -> f64 {
        let total: f64 = self
            .vertices()
            .zip(other.vertices())
            .map(|(a, b)| (a - b).norm())
            .sum();
        total / self.vertex_count() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().chain(&self.edges).all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &GridGraph) -> bool {
        self.n_nodes == other.n_nodes
            && self.n_edges == other.n_edges
            && self.adjacency == other.adjacency
    }
}

pub(crate) fn read3(row: &[f64], at: usize) -> Vector3<f64> {
    Vector3::new(row[at], row[at + 1], row[at + 2])
}

pub(crate) fn write3(row: &mut [f64], at: usize, v: Vector3<f64>) {
    row[at] = v.x;
    row[at + 1] = v.y;
    row[at + 2] = v.z;
}

fn add3(row: &mut [f64], at: usize, v: Vector3<f64>) {
    row[at] += v.x;
    row[at + 1] += v.y;
    row[at + 2] += v.z;
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    adjacency: Vec<Vec<u8>>,
    nodes: Vec<Vec<f64>>,
    edges: Vec<Vec<f64>>,
}

impl Serialize for GridGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRepr {
            adjacency: self.adjacency.chunks(self.n_nodes.max(1)).map(<[u8]>::to_vec).collect(),
            nodes: self.nodes.chunks(NODE_WIDTH).map(<[f64]>::to_vec).collect(),
            edges: self.edges.chunks(EDGE_WIDTH).map(<[f64]>::to_vec).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = GraphRepr::deserialize(d)?;
        let n_nodes = repr.nodes.len();
        let n_edges = repr.edges.len();
        if repr.adjacency.len() != n_edges || repr.adjacency.iter().any(|r| r.len() != n_nodes) {
            return Err(D::Error::custom("adjacency must be edges × nodes"));
        }
        if repr.nodes.iter().any(|r| r.len() != NODE_WIDTH) {
            return Err(D::Error::custom(format!("node features must have {NODE_WIDTH} channels")));
        }
        if repr.edges.iter().any(|r| r.len() != EDGE_WIDTH) {
            return Err(D::Error::custom(format!("edge features must have {EDGE_WIDTH} channels")));
        }
        Ok(GridGraph {
            n_nodes,
            n_edges,
            adjacency: repr.adjacency.concat(),
            nodes: repr.nodes.concat(),
            edges: repr.edges.concat(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Oracle,
    Surrogate,
}

/// Ordered frames of one simulated grid: the flat state, ten release
/// increments and the creep frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub design: GridDesign,
    pub frames: Vec<GridGraph>,
    pub source: Source,
}

impl Trajectory {
    pub fn initial(&self) -> &GridGraph {
        &self.frames[0]
    }

    pub fn last(&self) -> &GridGraph {
        self.frames.last().expect("trajectory has frames")
    }
}

/// The t = 0 graph of a design: flat geometry, full stress, coordinates
/// relative to the fixed joint.
pub fn build_graph(design: &GridDesign) -> Result<GridGraph> {
    let topo = design.topology()?;
    let mut graph = GridGraph::zeros(design.joints.len(), design.beams.len());

    for n in 0..design.joints.len() {
        let (x, y) = design.relative_position(n, topo.fixed);
        let row = graph.node_mut(n);
        for k in 0..NODE_CORNERS {
            let corner = Vector3::new(x, y, 0.0) + joint_corner_offset(k);
            write3(row, node_corner(k), corner);
        }
        row[NODE_FIXED] = if n == topo.fixed { 1.0 } else { 0.0 };
    }

    for (e, beam) in design.beams.iter().enumerate() {
        let t = topo.beams[e];
        graph.set_adjacency(e, t.a, t.face_a.code());
        graph.set_adjacency(e, t.b, t.face_b.code());
        let curve = beam_curve(design, &topo, e);
        let sections = [curve.station(0.0), curve.station(0.5), curve.station(1.0)];
        let row = graph.edge_mut(e);
        for (s, station) in sections.iter().enumerate() {
            for c in 0..SECTION_CORNERS {
                write3(row, edge_corner(s, c), station.corner(c));
                row[edge_stress(s, c)] = beam.actuator * KAPPA_MAX;
            }
        }
        row[EDGE_ACTUATOR] = beam.actuator;
    }
    graph.recompute_centers();
    Ok(graph)
}

/// Offset of cuboid corner `k` (bits x, y, z) from the joint centre.
pub(crate) fn joint_corner_offset(k: usize) -> Vector3<f64> {
    let sign = |bit: usize| if k & bit != 0 { 1.0 } else { -1.0 };
    Vector3::new(sign(1) * HALF_SIDE, sign(2) * HALF_SIDE, sign(4) * HALF_THICKNESS)
}

/// Cuboid corner slot that coincides with corner `c` of a beam section
/// sitting on the face with outward normal `normal`, where the section's
/// tangent is `tangent` (±normal).
pub(crate) fn face_corner_slot(normal: (i32, i32), tangent_sign: i32, c: usize) -> usize {
    let (sw, sz) = corner_signs(c);
    let (tx, ty) = (normal.0 * tangent_sign, normal.1 * tangent_sign);
    // width = z × tangent = (-ty, tx)
    let ox = f64::from(normal.0) + sw * f64::from(-ty);
    let oy = f64::from(normal.1) + sw * f64::from(tx);
    let bit = |v: f64| usize::from(v > 0.0);
    bit(ox) | bit(oy) << 1 | bit(sz) << 2
}

/// Largest distance from the fixed joint's centre to any joint centre.
pub fn grid_dimension(graph: &GridGraph) -> f64 {
    let Some(fixed) = graph.fixed_node() else {
        return 0.0;
    };
    let origin = graph.node_center(fixed);
    (0..graph.n_nodes())
        .map(|n| (graph.node_center(n) - origin).norm())
        .fold(0.0, f64::max)
}

impl GridGraph {
    /// Validates the graph shape against the standard 2×2 grid layout.
    pub fn check_grid_layout(&self) -> Result<()> {
        if self.n_nodes != super::NUM_JOINTS || self.n_edges != super::NUM_BEAMS {
            return Err(Error::Shape(format!(
                "expected {} nodes and {} edges, found {} and {}",
                super::NUM_JOINTS,
                super::NUM_BEAMS,
                self.n_nodes,
                self.n_edges
            )));
        }
        for e in 0..self.n_edges {
            if self.edge_endpoints(e).count() != 2 {
                return Err(Error::Shape(format!("edge {e} must join exactly two nodes")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{contiguity_pairs, GridDesign};

    #[test]
    fn regular_graph_shape() {
        let g = build_graph(&GridDesign::regular(50.0)).unwrap();
        assert_eq!(g.n_nodes(), 9);
        assert_eq!(g.n_edges(), 12);
        let nonzero = (0..12)
            .flat_map(|e| (0..9).map(move |n| (e, n)))
            .filter(|&(e, n)| g.adjacency(e, n) != 0)
            .count();
        assert_eq!(nonzero, 24);
        g.check_grid_layout().unwrap();
    }

    #[test]
    fn zero_actuators_zero_stress() {
        let g = build_graph(&GridDesign::regular(50.0)).unwrap();
        for e in 0..12 {
            assert!(g.edge(e)[EDGE_STRESS..EDGE_ACTUATOR].iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn fixed_node_at_origin() {
        let g = build_graph(&GridDesign::regular(50.0)).unwrap();
        assert_eq!(g.fixed_node(), Some(4));
        assert_eq!(g.node_center(4), Vector3::zeros());
        assert_eq!(g.node(4)[NODE_FIXED], 1.0);
        assert!((grid_dimension(&g) - 50.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn stress_is_actuator_times_kappa() {
        let design = GridDesign::regular(50.0).with_actuators(&[0.5; 12]);
        let g = build_graph(&design).unwrap();
        for e in 0..12 {
            for ch in EDGE_STRESS..EDGE_ACTUATOR {
                assert_eq!(g.edge(e)[ch], 0.5 * KAPPA_MAX);
            }
        }
    }

    #[test]
    fn face_slots_match_geometry() {
        let mut design = GridDesign::regular(50.0);
        design.joints[0].x -= 4.0;
        design.joints[8].y += 6.0;
        let g = build_graph(&design).unwrap();
        let topo = design.topology().unwrap();
        for (e, t) in topo.beams.iter().enumerate() {
            for c in 0..4 {
                let k = face_corner_slot(t.face_a.direction(), 1, c);
                let d = (g.edge_corner(e, SECTION_START, c) - g.node_corner(t.a, k)).norm();
                assert!(d < 1e-12);
                let k = face_corner_slot(t.face_b.direction(), -1, c);
                let d = (g.edge_corner(e, SECTION_END, c) - g.node_corner(t.b, k)).norm();
                assert!(d < 1e-12);
            }
        }
        assert_eq!(contiguity_pairs(&g).unwrap().len(), 96);
    }

    #[test]
    fn graph_json_roundtrip() {
        let g = build_graph(&GridDesign::regular(50.0).with_actuators(&[0.75; 12])).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: GridGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
