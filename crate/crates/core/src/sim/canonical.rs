use std::cmp::Ordering;

use nalgebra::Vector3;

use crate::grid::{GridGraph, PlaneIsometry, Trajectory};

/// Fixed-node centre, or the origin for graphs without a fixed node.
pub fn anchor(graph: &GridGraph) -> Vector3<f64> {
    graph.fixed_node().map(|n| graph.node_center(n)).unwrap_or_else(Vector3::zeros)
}

fn sorted_rows<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<&'a [f64]> {
    let mut rows: Vec<&[f64]> = rows.collect();
    rows.sort_by(|a, b| compare(a, b));
    rows
}

fn compare(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Label-free key of an anchored graph: its node rows, then its edge rows,
/// each sorted.
fn key(graph: &GridGraph) -> Vec<f64> {
    let nodes = sorted_rows((0..graph.n_nodes()).map(|n| graph.node(n)));
    let edges = sorted_rows((0..graph.n_edges()).map(|e| graph.edge(e)));
    nodes.into_iter().chain(edges).flatten().copied().collect()
}

/// The isometry that brings an anchored graph to its canonical orientation:
/// the one with the smallest key. Isometric copies and relabelings of a
/// graph share the canonical image up to labels.
pub fn canonical_isometry(anchored: &GridGraph) -> PlaneIsometry {
    PlaneIsometry::all()
        .map(|iso| (key(&iso.apply_graph(anchored)), iso))
        .min_by(|a, b| compare(&a.0, &b.0))
        .map(|(_, iso)| iso)
        .unwrap_or(PlaneIsometry::IDENTITY)
}

/// Moves a trajectory to the orientation its initial frame canonicalizes to,
/// anchored at the fixed node.
pub fn canonicalize_trajectory(trajectory: &Trajectory) -> Trajectory {
    let offset = -anchor(trajectory.initial());
    let anchored = Trajectory {
        design: trajectory.design.clone(),
        frames: trajectory.frames.iter().map(|f| f.translated(offset)).collect(),
        source: trajectory.source,
    };
    canonical_isometry(anchored.initial()).apply_trajectory(&anchored)
}
