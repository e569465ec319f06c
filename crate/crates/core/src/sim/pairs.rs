use crate::grid::GridGraph;

/// One ordered interaction: `sender` reaches `receiver` through `conduit`.
/// Codes are the face adjacency codes of the sender and receiver at the
/// conduit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pair {
    pub receiver: usize,
    pub sender: usize,
    pub conduit: usize,
    pub sender_code: u8,
    pub receiver_code: u8,
}

/// Node–edge–node and edge–node–edge interactions of a graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub nen: Vec<Pair>,
    pub ene: Vec<Pair>,
}

/// Enumerates every interaction, sorted by (receiver, sender, conduit).
pub fn gather_pairs(graph: &GridGraph) -> PairSet {
    let mut nen = Vec::new();
    for e in 0..graph.n_edges() {
        let ends: Vec<usize> = graph.edge_endpoints(e).collect();
        for &s in &ends {
            for &r in &ends {
                if s != r {
                    nen.push(Pair {
                        receiver: r,
                        sender: s,
                        conduit: e,
                        sender_code: graph.adjacency(e, s),
                        receiver_code: graph.adjacency(e, r),
                    });
                }
            }
        }
    }
    let mut ene = Vec::new();
    for n in 0..graph.n_nodes() {
        let incident: Vec<usize> = (0..graph.n_edges()).filter(|&e| graph.adjacency(e, n) != 0).collect();
        for &s in &incident {
            for &r in &incident {
                if s != r {
                    ene.push(Pair {
                        receiver: r,
                        sender: s,
                        conduit: n,
                        sender_code: graph.adjacency(s, n),
                        receiver_code: graph.adjacency(r, n),
                    });
                }
            }
        }
    }
    nen.sort();
    ene.sort();
    PairSet { nen, ene }
}
