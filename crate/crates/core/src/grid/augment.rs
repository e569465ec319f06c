use nalgebra::Vector3;

use super::graph::{read3, write3};
use super::layout::*;
use super::{Face, GridGraph, Trajectory};

/// One of the eight in-plane isometries of the square lattice: an optional
/// mirror `x → -x` followed by `rotation` counter-clockwise quarter turns.
///
/// All eight act on coordinates by sign changes and swaps only, so they are
/// exact in floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PlaneIsometry {
    rotation: u8,
    mirror: bool,
}

impl PlaneIsometry {
    pub const IDENTITY: PlaneIsometry = PlaneIsometry {
        rotation: 0,
        mirror: false,
    };

    pub fn new(rotation: u8, mirror: bool) -> PlaneIsometry {
        PlaneIsometry {
            rotation: rotation % 4,
            mirror,
        }
    }

    pub fn all() -> impl Iterator<Item = PlaneIsometry> {
        (0..8u8).map(|i| PlaneIsometry::new(i % 4, i >= 4))
    }

    pub fn rotation(self) -> u8 {
        self.rotation
    }

    pub fn mirror(self) -> bool {
        self.mirror
    }

    pub fn is_proper(self) -> bool {
        !self.mirror
    }

    pub fn inverse(self) -> PlaneIsometry {
        if self.mirror {
            self
        } else {
            PlaneIsometry::new(4 - self.rotation, false)
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: PlaneIsometry) -> PlaneIsometry {
        if self.mirror {
            PlaneIsometry::new(self.rotation + 4 - other.rotation, !other.mirror)
        } else {
            PlaneIsometry::new(self.rotation + other.rotation, other.mirror)
        }
    }

    pub fn apply(self, x: f64, y: f64) -> (f64, f64) {
        let (mut x, mut y) = if self.mirror { (-x, y) } else { (x, y) };
        for _ in 0..self.rotation {
            (x, y) = (-y, x);
        }
        (x, y)
    }

    pub fn apply_lattice(self, x: i32, y: i32) -> (i32, i32) {
        let (x, y) = self.apply(f64::from(x), f64::from(y));
        (x as i32, y as i32)
    }

    pub fn apply_vec(self, v: Vector3<f64>) -> Vector3<f64> {
        let (x, y) = self.apply(v.x, v.y);
        Vector3::new(x, y, v.z)
    }

    fn apply_face(self, code: u8) -> u8 {
        match Face::from_code(code) {
            Some(face) => {
                let (dx, dy) = face.direction();
                let (dx, dy) = self.apply_lattice(dx, dy);
                Face::from_direction(dx, dy).unwrap().code()
            }
            None => code,
        }
    }

    /// Applies the isometry to every coordinate channel, permuting corner
    /// slots so the result is laid out exactly as the extractor would lay
    /// out the transformed grid.
    pub fn apply_graph(self, graph: &GridGraph) -> GridGraph {
        let mut out = graph.clone();
        for n in 0..graph.n_nodes() {
            let src = graph.node(n);
            let dst = out.node_mut(n);
            for k in 0..NODE_CORNERS {
                let sign = |bit: usize| if k & bit != 0 { 1.0 } else { -1.0 };
                let (sx, sy) = self.apply(sign(1), sign(2));
                let target = usize::from(sx > 0.0) | usize::from(sy > 0.0) << 1 | (k & 4);
                write3(dst, node_corner(target), self.apply_vec(read3(src, node_corner(k))));
            }
            write3(dst, NODE_CENTER, self.apply_vec(read3(src, NODE_CENTER)));
        }
        let flip = usize::from(self.mirror);
        for e in 0..graph.n_edges() {
            let src = graph.edge(e);
            let dst = out.edge_mut(e);
            for s in 0..EDGE_SECTIONS {
                for c in 0..SECTION_CORNERS {
                    let target = c ^ flip;
                    let p = self.apply_vec(read3(src, edge_corner(s, c)));
                    write3(dst, edge_corner(s, target), p);
                    dst[edge_stress(s, target)] = src[edge_stress(s, c)];
                }
            }
            write3(dst, EDGE_CENTER, self.apply_vec(read3(src, EDGE_CENTER)));
            for n in 0..graph.n_nodes() {
                out.set_adjacency(e, n, self.apply_face(graph.adjacency(e, n)));
            }
        }
        out
    }

    pub fn apply_trajectory(self, trajectory: &Trajectory) -> Trajectory {
        Trajectory {
            design: trajectory.design.transformed(self),
            frames: trajectory.frames.iter().map(|g| self.apply_graph(g)).collect(),
            source: trajectory.source,
        }
    }
}

/// Rotates (`rotation` quarter turns) and optionally mirrors a trajectory
/// in-plane about the fixed joint.
pub fn augment(trajectory: &Trajectory, rotation: u8, mirror: bool) -> Trajectory {
    PlaneIsometry::new(rotation, mirror).apply_trajectory(trajectory)
}

impl GridGraph {
    /// Applies `f` to every encoded point (corners and centres) without
    /// relabeling slots.
    pub fn map_points(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> GridGraph {
        let mut out = self.clone();
        for n in 0..self.n_nodes() {
            let row = out.node_mut(n);
            for at in (0..NODE_FIXED).step_by(3) {
                let p = f(read3(row, at));
                write3(row, at, p);
            }
        }
        for e in 0..self.n_edges() {
            let row = out.edge_mut(e);
            for at in (0..EDGE_STRESS).step_by(3).chain([EDGE_CENTER]) {
                let p = f(read3(row, at));
                write3(row, at, p);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_graph, contiguity_pairs, GridDesign};
    use nalgebra::{Rotation3, Vector3};

    fn jittered() -> GridDesign {
        let mut d = GridDesign::regular(50.0).with_actuators(&[
            0.0, 0.25, 0.5, 0.75, 1.0, 0.0, 0.25, 0.5, 0.75, 1.0, 0.5, 0.25,
        ]);
        let jitter = [(1.5, -2.0), (0.3, 4.0), (-3.0, 1.0), (2.0, 2.0), (0.0, 0.0), (-1.0, 3.5), (4.0, -1.0), (-2.5, -0.5), (1.0, 1.0)];
        for (j, (dx, dy)) in d.joints.iter_mut().zip(jitter) {
            j.x += dx;
            j.y += dy;
        }
        d
    }

    #[test]
    fn group_structure() {
        let all: Vec<_> = PlaneIsometry::all().collect();
        for &a in &all {
            assert_eq!(a.compose(a.inverse()), PlaneIsometry::IDENTITY);
            for &b in &all {
                let (x, y) = (0.3, -1.7);
                let (bx, by) = b.apply(x, y);
                assert_eq!(a.compose(b).apply(x, y), a.apply(bx, by));
            }
        }
    }

    #[test]
    fn identity_is_noop() {
        let g = build_graph(&jittered()).unwrap();
        assert_eq!(PlaneIsometry::IDENTITY.apply_graph(&g), g);
    }

    #[test]
    fn eight_distinct_images() {
        let g = build_graph(&jittered()).unwrap();
        let images: Vec<_> = PlaneIsometry::all().map(|iso| iso.apply_graph(&g)).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(images[i], images[j]);
            }
        }
    }

    #[test]
    fn commutes_with_extraction() {
        let design = jittered();
        let g = build_graph(&design).unwrap();
        for iso in PlaneIsometry::all() {
            let direct = build_graph(&design.transformed(iso)).unwrap();
            let mapped = iso.apply_graph(&g);
            assert!(direct.same_layout(&mapped), "{iso:?}");
            assert!(direct.max_vertex_deviation(&mapped) < 1e-9, "{iso:?}");
            for e in 0..12 {
                for ch in EDGE_STRESS..EDGE_WIDTH - 3 {
                    assert_eq!(direct.edge(e)[ch], mapped.edge(e)[ch]);
                }
            }
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let g = build_graph(&jittered()).unwrap();
        for iso in PlaneIsometry::all() {
            let back = iso.inverse().apply_graph(&iso.apply_graph(&g));
            assert!(back.max_vertex_deviation(&g) < 1e-9);
            assert_eq!(back, g);
        }
    }

    #[test]
    fn vertex_error_is_invariant() {
        let a = build_graph(&jittered()).unwrap();
        let b = a.map_points(|p| p + Vector3::new(0.1 * p.y, 0.0, 0.05 * p.x));
        let before = a.mean_vertex_error(&b);
        for iso in PlaneIsometry::all() {
            let after = iso.apply_graph(&a).mean_vertex_error(&iso.apply_graph(&b));
            assert!((after - before).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_motion_keeps_pairs() {
        let g = build_graph(&jittered()).unwrap();
        let rot = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let moved = g.map_points(|p| rot * p + Vector3::new(10.0, 5.0, -2.0));
        assert_eq!(contiguity_pairs(&moved).unwrap(), contiguity_pairs(&g).unwrap());
    }
}
