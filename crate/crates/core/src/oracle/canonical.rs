use crate::grid::layout::*;
use crate::grid::{BeamSpec, GridDesign, GridGraph, JointSpec, PlaneIsometry, Topology};

/// Positions are snapped to multiples of 2⁻³⁰ mm before simulation so that
/// isometric copies of a design produce bit-identical canonical inputs.
const QUANTUM: f64 = (1u64 << 30) as f64;

/// A design re-expressed in a canonical orientation and labeling, with the
/// maps needed to express results in the original labeling.
///
/// Among the eight in-plane isometries the one whose image has the
/// lexicographically smallest description is used; joints are then numbered
/// by lattice cell and beams in the order of [`GridDesign::regular`].
pub(crate) struct Canonical {
    pub design: GridDesign,
    iso: PlaneIsometry,
    node_map: Vec<usize>,
    edge_map: Vec<(usize, bool)>,
}

struct Image {
    key: Vec<i64>,
    cells: Vec<usize>,
    positions: Vec<(i64, i64)>,
}

fn beam_slot(a: usize, b: usize) -> (usize, bool) {
    let (lo, hi) = (a.min(b), a.max(b));
    let slot = if hi == lo + 1 {
        (lo / 3) * 2 + lo % 3
    } else {
        6 + lo
    };
    (slot, a > b)
}

fn image(design: &GridDesign, topo: &Topology, quantized: &[(i64, i64)], iso: PlaneIsometry) -> Image {
    let mut cells = Vec::with_capacity(design.joints.len());
    let mut positions = vec![(0, 0); design.joints.len()];
    let mut by_cell = [(0i64, 0i64, 0i64); 9];
    for (i, joint) in design.joints.iter().enumerate() {
        let (c, r) = iso.apply_lattice(i32::from(joint.col) - 1, i32::from(joint.row) - 1);
        let cell = ((r + 1) * 3 + (c + 1)) as usize;
        let (x, y) = iso.apply(quantized[i].0 as f64, quantized[i].1 as f64);
        let (x, y) = (x as i64, y as i64);
        cells.push(cell);
        positions[i] = (x, y);
        by_cell[cell] = (x, y, i64::from(joint.fixed));
    }
    let mut actuators = [0i64; 12];
    for (beam, t) in design.beams.iter().zip(&topo.beams) {
        let (slot, _) = beam_slot(cells[t.a], cells[t.b]);
        actuators[slot] = beam.actuator.to_bits() as i64;
    }
    let mut key = Vec::with_capacity(27 + 12);
    for (x, y, f) in by_cell {
        key.extend([x, y, f]);
    }
    key.extend(actuators);
    Image {
        key,
        cells,
        positions,
    }
}

impl Canonical {
    pub fn new(design: &GridDesign, topo: &Topology) -> Canonical {
        let fixed = &design.joints[topo.fixed];
        let quantized: Vec<(i64, i64)> = design
            .joints
            .iter()
            .map(|j| {
                let q = |v: f64| (v * QUANTUM).round() as i64;
                (q(j.x - fixed.x), q(j.y - fixed.y))
            })
            .collect();
        let (iso, best) = PlaneIsometry::all()
            .map(|iso| (iso, image(design, topo, &quantized, iso)))
            .min_by(|a, b| a.1.key.cmp(&b.1.key))
            .expect("eight isometries");

        let mut canonical = GridDesign::regular(1.0);
        for (i, joint) in design.joints.iter().enumerate() {
            let (x, y) = best.positions[i];
            canonical.joints[best.cells[i]] = JointSpec {
                id: best.cells[i] as u32,
                row: (best.cells[i] / 3) as u8,
                col: (best.cells[i] % 3) as u8,
                x: x as f64 / QUANTUM,
                y: y as f64 / QUANTUM,
                fixed: joint.fixed,
            };
        }
        let mut edge_map = Vec::with_capacity(design.beams.len());
        for (beam, t) in design.beams.iter().zip(&topo.beams) {
            let (slot, reversed) = beam_slot(best.cells[t.a], best.cells[t.b]);
            canonical.beams[slot] = BeamSpec {
                actuator: beam.actuator,
                ..canonical.beams[slot].clone()
            };
            edge_map.push((slot, reversed));
        }
        Canonical {
            design: canonical,
            iso,
            node_map: best.cells,
            edge_map,
        }
    }

    /// Expresses a graph of the canonical design in the original orientation
    /// and labeling.
    pub fn restore(&self, frame: &GridGraph) -> GridGraph {
        let back = self.iso.inverse().apply_graph(frame);
        let mut out = GridGraph::zeros(self.node_map.len(), self.edge_map.len());
        for (n, &cn) in self.node_map.iter().enumerate() {
            out.node_mut(n).copy_from_slice(back.node(cn));
        }
        for (e, &(ce, reversed)) in self.edge_map.iter().enumerate() {
            let src = back.edge(ce);
            let dst = out.edge_mut(e);
            dst.copy_from_slice(src);
            if reversed {
                for s in 0..EDGE_SECTIONS {
                    for c in 0..SECTION_CORNERS {
                        let (rs, rc) = (EDGE_SECTIONS - 1 - s, c ^ 1);
                        let from = edge_corner(rs, rc);
                        dst[edge_corner(s, c)..edge_corner(s, c) + 3].copy_from_slice(&src[from..from + 3]);
                        dst[edge_stress(s, c)] = src[edge_stress(rs, rc)];
                    }
                }
            }
            for (n, &cn) in self.node_map.iter().enumerate() {
                out.set_adjacency(e, n, back.adjacency(ce, cn));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_graph;

    fn shuffled(design: &GridDesign) -> GridDesign {
        let mut d = design.clone();
        d.joints.reverse();
        d.beams.rotate_left(5);
        for b in d.beams.iter_mut().step_by(2) {
            std::mem::swap(&mut b.a, &mut b.b);
        }
        d
    }

    fn sample() -> GridDesign {
        let mut d = GridDesign::regular(52.0)
            .with_actuators(&[1.0, 0.5, 0.25, 0.75, 0.0, 0.0, 0.5, 1.0, 0.25, 0.75, 0.5, 0.25]);
        for (i, j) in d.joints.iter_mut().enumerate() {
            j.x += (i as f64 * 1.7).sin() * 6.0 + 100.0;
            j.y += (i as f64 * 2.3).cos() * 6.0 - 40.0;
        }
        d
    }

    #[test]
    fn restore_inverts_canonical_extraction() {
        for design in [sample(), shuffled(&sample())] {
            let topo = design.topology().unwrap();
            let canonical = Canonical::new(&design, &topo);
            let restored = canonical.restore(&build_graph(&canonical.design).unwrap());
            let direct = build_graph(&design).unwrap();
            assert!(restored.same_layout(&direct));
            assert!(restored.max_vertex_deviation(&direct) < 1e-8);
            assert_eq!(restored.edge_data()[..].len(), direct.edge_data().len());
            for e in 0..12 {
                assert_eq!(restored.edge(e)[EDGE_STRESS..EDGE_CENTER], direct.edge(e)[EDGE_STRESS..EDGE_CENTER]);
            }
        }
    }

    #[test]
    fn isometric_copies_share_a_canonical_design() {
        let design = sample();
        let base = Canonical::new(&design, &design.topology().unwrap()).design;
        for iso in PlaneIsometry::all() {
            for d in [design.transformed(iso), shuffled(&design.transformed(iso))] {
                let c = Canonical::new(&d, &d.topology().unwrap());
                assert_eq!(c.design, base, "{iso:?}");
            }
        }
    }
}
