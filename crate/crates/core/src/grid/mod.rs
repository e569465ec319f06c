//! Grid designs, their graph encoding, and the geometric bookkeeping shared by
//! the oracle, the surrogate and the design tools.
//!
//! A design is always a 3×3 lattice of joints connected by the 12 lattice
//! neighbour beams. Joints are 7.2 × 7.2 × 4 mm cuboids; beams have a
//! 7.2 × 4 mm cross-section and leave each joint through one of its four
//! in-plane faces.

mod augment;
mod contiguity;
mod graph;
mod shape;

pub use augment::{augment, PlaneIsometry};
pub use contiguity::{contiguity_pairs, ContiguityPairs, VertexSlot, CONTIGUITY_TOLERANCE};
pub use graph::{build_graph, grid_dimension, layout, GridGraph, Source, Trajectory};
pub(crate) use graph::{face_corner_slot, joint_corner_offset, write3};
pub use shape::{beam_curve, BeamCurve, Station};

use serde::{Deserialize, Serialize};

use crate::error::{ElementRef, Error, Result};

/// Beam cross-section width (in-plane), mm.
pub const BEAM_WIDTH: f64 = 7.2;
/// Beam cross-section thickness (out-of-plane), mm.
pub const BEAM_THICKNESS: f64 = 4.0;
/// In-plane side of a joint cuboid; beams meet joint faces flush.
pub const JOINT_SIDE: f64 = BEAM_WIDTH;
/// Maximum rest curvature of a fully actuated beam, degrees per mm.
pub const KAPPA_MAX: f64 = 1.95;

/// Shortest beam that can carry an actuator, mm.
pub const MIN_ACTUATED_LENGTH: f64 = 15.0;
pub const NUM_JOINTS: usize = 9;
pub const NUM_BEAMS: usize = 12;
/// Frames in a trajectory: the flat state, ten release increments, one creep frame.
pub const NUM_FRAMES: usize = 12;
pub const STAGE1_STEPS: usize = 10;

pub(crate) const HALF_SIDE: f64 = JOINT_SIDE / 2.0;
pub(crate) const HALF_THICKNESS: f64 = BEAM_THICKNESS / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub id: u32,
    pub row: u8,
    pub col: u8,
    pub x: f64,
    pub y: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub id: u32,
    pub a: u32,
    pub b: u32,
    pub actuator: f64,
}

/// Joint face a beam attaches to, in the design-time frame.
///
/// The discriminant is the adjacency code stored in [`GridGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Face {
    PosX = 1,
    NegX = 2,
    PosY = 3,
    NegY = 4,
}

impl Face {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Face> {
        match code {
            1 => Some(Face::PosX),
            2 => Some(Face::NegX),
            3 => Some(Face::PosY),
            4 => Some(Face::NegY),
            _ => None,
        }
    }

    pub fn from_direction(dx: i32, dy: i32) -> Option<Face> {
        match (dx, dy) {
            (1, 0) => Some(Face::PosX),
            (-1, 0) => Some(Face::NegX),
            (0, 1) => Some(Face::PosY),
            (0, -1) => Some(Face::NegY),
            _ => None,
        }
    }

    /// Outward unit normal as integer lattice direction.
    pub fn direction(self) -> (i32, i32) {
        match self {
            Face::PosX => (1, 0),
            Face::NegX => (-1, 0),
            Face::PosY => (0, 1),
            Face::NegY => (0, -1),
        }
    }

    pub fn opposite(self) -> Face {
        let (dx, dy) = self.direction();
        Face::from_direction(-dx, -dy).unwrap()
    }
}

/// Resolved connectivity of one beam: joint indices (into `GridDesign::joints`)
/// and the face of each joint it leaves through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamTopology {
    pub a: usize,
    pub b: usize,
    pub face_a: Face,
    pub face_b: Face,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub beams: Vec<BeamTopology>,
    pub fixed: usize,
}

/// A parametric 2×2 grid: nine joints on a 3×3 lattice and twelve beams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignFile", into = "DesignFile")]
pub struct GridDesign {
    pub joints: Vec<JointSpec>,
    pub beams: Vec<BeamSpec>,
}

/// On-disk form of a design (`schema_version: 1`, millimetres).
#[derive(Serialize, Deserialize)]
struct DesignFile {
    schema_version: u32,
    units: String,
    joints: Vec<JointSpec>,
    beams: Vec<BeamSpec>,
}

impl TryFrom<DesignFile> for GridDesign {
    type Error = String;

    fn try_from(file: DesignFile) -> std::result::Result<Self, Self::Error> {
        if file.schema_version != 1 {
            return Err(format!("unsupported schema_version {}", file.schema_version));
        }
        if file.units != "mm" {
            return Err(format!("unsupported units {:?}, expected \"mm\"", file.units));
        }
        Ok(GridDesign {
            joints: file.joints,
            beams: file.beams,
        })
    }
}

impl From<GridDesign> for DesignFile {
    fn from(design: GridDesign) -> Self {
        DesignFile {
            schema_version: 1,
            units: "mm".to_owned(),
            joints: design.joints,
            beams: design.beams,
        }
    }
}

impl GridDesign {
    /// Regular lattice with the given spacing, centred on the fixed centre
    /// joint, all actuators zero.
    ///
    /// Joint ids are `row * 3 + col`. Beams 0..6 run along +x (row-major),
    /// beams 6..12 along +y.
    pub fn regular(spacing: f64) -> GridDesign {
        let mut joints = Vec::with_capacity(NUM_JOINTS);
        for row in 0..3u8 {
            for col in 0..3u8 {
                joints.push(JointSpec {
                    id: u32::from(row * 3 + col),
                    row,
                    col,
                    x: (f64::from(col) - 1.0) * spacing,
                    y: (f64::from(row) - 1.0) * spacing,
                    fixed: row == 1 && col == 1,
                });
            }
        }
        let mut beams = Vec::with_capacity(NUM_BEAMS);
        for row in 0..3u32 {
            for col in 0..2u32 {
                let a = row * 3 + col;
                beams.push(BeamSpec {
                    id: beams.len() as u32,
                    a,
                    b: a + 1,
                    actuator: 0.0,
                });
            }
        }
        for row in 0..2u32 {
            for col in 0..3u32 {
                let a = row * 3 + col;
                beams.push(BeamSpec {
                    id: beams.len() as u32,
                    a,
                    b: a + 3,
                    actuator: 0.0,
                });
            }
        }
        GridDesign { joints, beams }
    }

    pub fn with_actuators(mut self, actuators: &[f64]) -> GridDesign {
        for (beam, &a) in self.beams.iter_mut().zip(actuators) {
            beam.actuator = a;
        }
        self
    }

    pub fn joint_index(&self, id: u32) -> Option<usize> {
        self.joints.iter().position(|j| j.id == id)
    }

    pub fn beam_index(&self, id: u32) -> Option<usize> {
        self.beams.iter().position(|b| b.id == id)
    }

    pub fn fixed_index(&self) -> Option<usize> {
        let mut fixed = self.joints.iter().enumerate().filter(|(_, j)| j.fixed);
        match (fixed.next(), fixed.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    /// Checks every structural invariant and resolves beam connectivity.
    pub fn topology(&self) -> Result<Topology> {
        if self.joints.len() != NUM_JOINTS {
            return Err(Error::invalid(
                ElementRef::Grid,
                format!("expected {NUM_JOINTS} joints, found {}", self.joints.len()),
            ));
        }
        if self.beams.len() != NUM_BEAMS {
            return Err(Error::invalid(
                ElementRef::Grid,
                format!("expected {NUM_BEAMS} beams, found {}", self.beams.len()),
            ));
        }

        let mut cells = [None::<usize>; NUM_JOINTS];
        for (i, joint) in self.joints.iter().enumerate() {
            let element = ElementRef::Joint(joint.id);
            if self.joints[..i].iter().any(|j| j.id == joint.id) {
                return Err(Error::invalid(element, "duplicate joint id"));
            }
            if joint.row > 2 || joint.col > 2 {
                return Err(Error::invalid(element, "lattice index outside 0..=2"));
            }
            if !joint.x.is_finite() || !joint.y.is_finite() {
                return Err(Error::invalid(element, "non-finite position"));
            }
            let cell = &mut cells[usize::from(joint.row) * 3 + usize::from(joint.col)];
            if cell.is_some() {
                return Err(Error::invalid(element, "lattice cell occupied twice"));
            }
            *cell = Some(i);
            for other in &self.joints[..i] {
                if (other.x - joint.x).hypot(other.y - joint.y) < 1e-9 {
                    return Err(Error::invalid(element, format!("coincides with joint {}", other.id)));
                }
            }
        }

        let fixed = match self.joints.iter().filter(|j| j.fixed).count() {
            1 => self.fixed_index().unwrap(),
            n => {
                return Err(Error::invalid(
                    ElementRef::Grid,
                    format!("exactly one fixed joint required, found {n}"),
                ))
            }
        };

        let mut beams = Vec::with_capacity(NUM_BEAMS);
        for (i, beam) in self.beams.iter().enumerate() {
            let element = ElementRef::Beam(beam.id);
            if self.beams[..i].iter().any(|b| b.id == beam.id) {
                return Err(Error::invalid(element, "duplicate beam id"));
            }
            if !(0.0..=1.0).contains(&beam.actuator) {
                return Err(Error::invalid(element, "actuator fraction outside [0, 1]"));
            }
            let a = self
                .joint_index(beam.a)
                .ok_or_else(|| Error::invalid(element, format!("unknown joint {}", beam.a)))?;
            let b = self
                .joint_index(beam.b)
                .ok_or_else(|| Error::invalid(element, format!("unknown joint {}", beam.b)))?;
            let (ja, jb) = (&self.joints[a], &self.joints[b]);
            let dx = i32::from(jb.col) - i32::from(ja.col);
            let dy = i32::from(jb.row) - i32::from(ja.row);
            let face_a = Face::from_direction(dx, dy).ok_or_else(|| {
                Error::invalid(element, "endpoints are not lattice neighbours")
            })?;
            let duplicate = beams.iter().any(|t: &BeamTopology| {
                (t.a == a && t.b == b) || (t.a == b && t.b == a)
            });
            if duplicate {
                return Err(Error::invalid(element, "joints already connected by another beam"));
            }
            let topo = BeamTopology {
                a,
                b,
                face_a,
                face_b: face_a.opposite(),
            };
            if self.face_gap(&topo) <= 0.0 {
                return Err(Error::invalid(element, "joint faces overlap"));
            }
            beams.push(topo);
        }
        Ok(Topology { beams, fixed })
    }

    /// Position of joint `index` relative to the fixed joint.
    pub(crate) fn relative_position(&self, index: usize, fixed: usize) -> (f64, f64) {
        let j = &self.joints[index];
        let f = &self.joints[fixed];
        (j.x - f.x, j.y - f.y)
    }

    /// Separation between the two faces a beam connects, measured along the
    /// first face's normal.
    fn face_gap(&self, topo: &BeamTopology) -> f64 {
        let (ja, jb) = (&self.joints[topo.a], &self.joints[topo.b]);
        let (nx, ny) = topo.face_a.direction();
        let along = (jb.x - ja.x) * f64::from(nx) + (jb.y - ja.y) * f64::from(ny);
        along - JOINT_SIDE
    }

    /// Largest distance from the fixed joint to any joint.
    pub fn grid_dimension(&self) -> f64 {
        let Some(fixed) = self.fixed_index() else {
            return 0.0;
        };
        (0..self.joints.len())
            .map(|i| {
                let (x, y) = self.relative_position(i, fixed);
                x.hypot(y)
            })
            .fold(0.0, f64::max)
    }

    /// Centreline arc length of every beam between the faces it connects.
    pub fn beam_lengths(&self) -> Result<Vec<f64>> {
        let topo = self.topology()?;
        Ok((0..self.beams.len())
            .map(|b| beam_curve(self, &topo, b).arc_length())
            .collect())
    }

    /// Applies an in-plane isometry about the fixed joint, remapping lattice
    /// indices so that face assignments follow the geometry. Ids are kept.
    pub fn transformed(&self, iso: PlaneIsometry) -> GridDesign {
        let fixed = self.fixed_index().unwrap_or(0);
        let (fx, fy) = (self.joints[fixed].x, self.joints[fixed].y);
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let (x, y) = iso.apply(j.x - fx, j.y - fy);
                let (c, r) = iso.apply_lattice(i32::from(j.col) - 1, i32::from(j.row) - 1);
                JointSpec {
                    x: fx + x,
                    y: fy + y,
                    col: (c + 1) as u8,
                    row: (r + 1) as u8,
                    ..j.clone()
                }
            })
            .collect();
        GridDesign {
            joints,
            beams: self.beams.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn from_json(text: &str) -> Result<GridDesign> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_design_is_valid() {
        let design = GridDesign::regular(50.0);
        let topo = design.topology().unwrap();
        assert_eq!(topo.fixed, 4);
        assert_eq!(topo.beams.len(), 12);
        let mut degree = [0; 9];
        for b in &topo.beams {
            degree[b.a] += 1;
            degree[b.b] += 1;
        }
        let mut histogram = [0; 5];
        for d in degree {
            histogram[d] += 1;
        }
        assert_eq!(histogram, [0, 0, 4, 4, 1]);
    }

    #[test]
    fn regular_dimension() {
        let d = GridDesign::regular(50.0).grid_dimension();
        assert!((d - 50.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_missing_beam() {
        let mut design = GridDesign::regular(50.0);
        design.beams.pop();
        assert!(matches!(
            design.topology(),
            Err(Error::InvalidDesign { element: ElementRef::Grid, .. })
        ));
    }

    #[test]
    fn rejects_diagonal_beam() {
        let mut design = GridDesign::regular(50.0);
        design.beams[0].b = 4;
        match design.topology() {
            Err(Error::InvalidDesign { element, .. }) => assert_eq!(element, ElementRef::Beam(0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_two_fixed_joints() {
        let mut design = GridDesign::regular(50.0);
        design.joints[0].fixed = true;
        assert!(design.topology().is_err());
    }

    #[test]
    fn rejects_overlapping_faces() {
        let mut design = GridDesign::regular(50.0);
        design.joints[1].x = design.joints[0].x + 5.0;
        assert!(design.topology().is_err());
    }

    #[test]
    fn json_schema_roundtrip() {
        let design = GridDesign::regular(47.0).with_actuators(&[0.25; 12]);
        let text = design.to_json();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("\"units\": \"mm\""));
        assert_eq!(GridDesign::from_json(&text).unwrap(), design);
    }

    #[test]
    fn json_rejects_other_units() {
        let text = GridDesign::regular(47.0).to_json().replace("\"mm\"", "\"in\"");
        assert!(GridDesign::from_json(&text).is_err());
    }

    #[test]
    fn transformed_design_stays_valid() {
        let design = GridDesign::regular(50.0);
        for iso in PlaneIsometry::all() {
            let t = design.transformed(iso);
            t.topology().unwrap();
            assert!((t.grid_dimension() - design.grid_dimension()).abs() < 1e-9);
        }
    }
}
