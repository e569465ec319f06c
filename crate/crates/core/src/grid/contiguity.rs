use nalgebra::Vector3;

use super::graph::read3;
use super::layout::*;
use super::GridGraph;
use crate::error::{Error, Result};

/// Matching tolerance for junction vertices at t = 0, mm.
pub const CONTIGUITY_TOLERANCE: f64 = 0.1;

/// Addresses one encoded vertex inside a node or edge feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexSlot {
    Node { node: usize, corner: usize },
    Edge { edge: usize, section: usize, corner: usize },
}

impl VertexSlot {
    /// Offset of the slot's x channel within its element's feature vector.
    pub fn channel(self) -> usize {
        match self {
            VertexSlot::Node { corner, .. } => node_corner(corner),
            VertexSlot::Edge { section, corner, .. } => edge_corner(section, corner),
        }
    }

    pub fn position(self, graph: &GridGraph) -> Vector3<f64> {
        match self {
            VertexSlot::Node { node, .. } => read3(graph.node(node), self.channel()),
            VertexSlot::Edge { edge, .. } => read3(graph.edge(edge), self.channel()),
        }
    }

    /// Fails with an index error if the slot lies outside `graph`.
    pub fn check(self, graph: &GridGraph) -> Result<()> {
        let ok = match self {
            VertexSlot::Node { node, corner } => node < graph.n_nodes() && corner < NODE_CORNERS,
            VertexSlot::Edge {
                edge,
                section,
                corner,
            } => edge < graph.n_edges() && section < EDGE_SECTIONS && corner < SECTION_CORNERS,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Index(format!("{self:?} outside graph")))
        }
    }
}

/// Vertex pairs that must coincide: every beam end-section corner and the
/// joint cuboid corner it is attached to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContiguityPairs {
    pub pairs: Vec<(VertexSlot, VertexSlot)>,
}

impl ContiguityPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Summed distance between paired vertices.
    pub fn dislocation(&self, graph: &GridGraph) -> f64 {
        self.pairs
            .iter()
            .map(|&(a, b)| (a.position(graph) - b.position(graph)).norm())
            .sum()
    }

    pub fn mean_dislocation(&self, graph: &GridGraph) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.dislocation(graph) / self.pairs.len() as f64
        }
    }
}

/// Matches each beam end-section corner to its nearest joint cuboid corner.
pub fn contiguity_pairs(graph: &GridGraph) -> Result<ContiguityPairs> {
    let mut pairs = Vec::with_capacity(graph.n_edges() * 2 * SECTION_CORNERS);
    for edge in 0..graph.n_edges() {
        for section in [SECTION_START, SECTION_END] {
            for corner in 0..SECTION_CORNERS {
                let p = graph.edge_corner(edge, section, corner);
                let nearest = (0..graph.n_nodes())
                    .flat_map(|node| (0..NODE_CORNERS).map(move |k| (node, k)))
                    .map(|(node, k)| ((graph.node_corner(node, k) - p).norm(), node, k))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                match nearest {
                    Some((d, node, k)) if d <= CONTIGUITY_TOLERANCE => pairs.push((
                        VertexSlot::Edge {
                            edge,
                            section,
                            corner,
                        },
                        VertexSlot::Node { node, corner: k },
                    )),
                    _ => {
                        return Err(Error::ContiguityFailure {
                            edge,
                            section,
                            corner,
                            tolerance: CONTIGUITY_TOLERANCE,
                        })
                    }
                }
            }
        }
    }
    Ok(ContiguityPairs { pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_graph, GridDesign, PlaneIsometry};

    /// Brute-force count of coincident (beam end corner, joint corner) pairs.
    fn brute_force_coincident(graph: &GridGraph) -> usize {
        let mut count = 0;
        for e in 0..graph.n_edges() {
            for s in 0..EDGE_SECTIONS {
                for c in 0..SECTION_CORNERS {
                    let p = graph.edge_corner(e, s, c);
                    for n in 0..graph.n_nodes() {
                        for k in 0..NODE_CORNERS {
                            if (graph.node_corner(n, k) - p).norm() < 1e-9 {
                                count += 1;
                            }
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn regular_grid_has_96_pairs() {
        let g = build_graph(&GridDesign::regular(50.0)).unwrap();
        let pairs = contiguity_pairs(&g).unwrap();
        assert_eq!(brute_force_coincident(&g), 96);
        assert_eq!(pairs.len(), 96);
        assert!(pairs.dislocation(&g) < 1e-12);
    }

    #[test]
    fn invariant_under_isometry() {
        let g = build_graph(&GridDesign::regular(50.0)).unwrap();
        let base = contiguity_pairs(&g).unwrap();
        for iso in PlaneIsometry::all() {
            let moved = iso.apply_graph(&g).translated(Vector3::new(3.0, -7.0, 1.0));
            let pairs = contiguity_pairs(&moved).unwrap();
            // Slot labels move with the isometry; the pairing structure does not.
            assert_eq!(pairs.len(), base.len());
            assert!(pairs.dislocation(&moved) < 1e-9);
        }
        let moved = g.translated(Vector3::new(3.0, -7.0, 1.0));
        assert_eq!(contiguity_pairs(&moved).unwrap(), base);
    }

    #[test]
    fn displaced_endpoint_fails() {
        let mut g = build_graph(&GridDesign::regular(50.0)).unwrap();
        let row = g.edge_mut(3);
        for c in 0..SECTION_CORNERS {
            row[edge_corner(SECTION_START, c)] += 1.0;
        }
        assert!(matches!(
            contiguity_pairs(&g),
            Err(Error::ContiguityFailure { edge: 3, section: 0, .. })
        ));
    }
}
