use nalgebra::Vector3;

use super::{BeamTopology, GridDesign, Topology, HALF_SIDE, HALF_THICKNESS};

/// A beam cross-section: centre, unit tangent along the beam, and unit width
/// axis `z × tangent`. Corners are indexed by bits `(width, thickness)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Station {
    pub center: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub width: Vector3<f64>,
}

impl Station {
    pub fn new(center: Vector3<f64>, tangent: Vector3<f64>) -> Station {
        Station {
            center,
            tangent,
            width: Vector3::new(-tangent.y, tangent.x, 0.0),
        }
    }

    /// Corner `c` (0..4): bit 0 selects the +width side, bit 1 the top.
    pub fn corner(&self, c: usize) -> Vector3<f64> {
        let (sw, sz) = corner_signs(c);
        self.center + self.width * (sw * HALF_SIDE) + Vector3::z() * (sz * HALF_THICKNESS)
    }
}

pub(crate) fn corner_signs(c: usize) -> (f64, f64) {
    let sw = if c & 1 == 1 { 1.0 } else { -1.0 };
    let sz = if c & 2 == 2 { 1.0 } else { -1.0 };
    (sw, sz)
}

/// Design-time centreline of a beam: a cubic Bézier leaving the first joint
/// face along its normal and entering the second face along its normal.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCurve {
    control: [Vector3<f64>; 4],
    start_tangent: Vector3<f64>,
    end_tangent: Vector3<f64>,
}

/// Builds the centreline of beam `index`, in coordinates relative to the
/// fixed joint.
pub fn beam_curve(design: &GridDesign, topology: &Topology, index: usize) -> BeamCurve {
    let BeamTopology { a, b, face_a, face_b } = topology.beams[index];
    let (ax, ay) = design.relative_position(a, topology.fixed);
    let (bx, by) = design.relative_position(b, topology.fixed);
    let normal = |(dx, dy): (i32, i32)| Vector3::new(f64::from(dx), f64::from(dy), 0.0);
    let na = normal(face_a.direction());
    let nb = normal(face_b.direction());
    let p0 = Vector3::new(ax, ay, 0.0) + na * HALF_SIDE;
    let p3 = Vector3::new(bx, by, 0.0) + nb * HALF_SIDE;
    let reach = (p3 - p0).norm() / 3.0;
    BeamCurve {
        control: [p0, p0 + na * reach, p3 + nb * reach, p3],
        start_tangent: na,
        end_tangent: -nb,
    }
}

impl BeamCurve {
    pub fn point(&self, u: f64) -> Vector3<f64> {
        let [p0, p1, p2, p3] = self.control;
        let v = 1.0 - u;
        p0 * (v * v * v) + p1 * (3.0 * v * v * u) + p2 * (3.0 * v * u * u) + p3 * (u * u * u)
    }

    pub fn derivative(&self, u: f64) -> Vector3<f64> {
        let [p0, p1, p2, p3] = self.control;
        let v = 1.0 - u;
        (p1 - p0) * (3.0 * v * v) + (p2 - p1) * (6.0 * v * u) + (p3 - p2) * (3.0 * u * u)
    }

    /// Cross-section at parameter `u`; the end sections coincide exactly with
    /// the joint faces.
    pub fn station(&self, u: f64) -> Station {
        if u <= 0.0 {
            Station::new(self.control[0], self.start_tangent)
        } else if u >= 1.0 {
            Station::new(self.control[3], self.end_tangent)
        } else {
            Station::new(self.point(u), self.derivative(u).normalize())
        }
    }

    /// `segments + 1` stations at uniform parameter spacing.
    pub fn stations(&self, segments: usize) -> Vec<Station> {
        (0..=segments)
            .map(|s| self.station(s as f64 / segments as f64))
            .collect()
    }

    pub fn arc_length(&self) -> f64 {
        // Composite Simpson; the curve is a gentle cubic.
        const N: usize = 64;
        let h = 1.0 / N as f64;
        let mut sum = self.derivative(0.0).norm() + self.derivative(1.0).norm();
        for i in 1..N {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * self.derivative(i as f64 * h).norm();
        }
        sum * h / 3.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridDesign, JOINT_SIDE};

    #[test]
    fn straight_beam_length_is_face_gap() {
        let design = GridDesign::regular(50.0);
        let topo = design.topology().unwrap();
        for b in 0..12 {
            let len = beam_curve(&design, &topo, b).arc_length();
            assert!((len - (50.0 - JOINT_SIDE)).abs() < 1e-9, "beam {b}: {len}");
        }
    }

    #[test]
    fn end_stations_follow_face_normals() {
        let mut design = GridDesign::regular(50.0);
        design.joints[2].y += 9.0;
        let topo = design.topology().unwrap();
        let curve = beam_curve(&design, &topo, 1);
        let s0 = curve.station(0.0);
        let s1 = curve.station(1.0);
        assert_eq!(s0.tangent, Vector3::x());
        assert_eq!(s1.tangent, Vector3::x());
        assert!(curve.arc_length() > 50.0 - JOINT_SIDE);
    }
}
