//! Reference physics for grid trajectories.
//!
//! Beams and joints are discretized into particles (cuboid and section
//! corners) and relaxed by a local/global projection solver: stretch links
//! between adjacent sections, shape-matching clusters per beam segment whose
//! rest shape carries the released curvature, and rigid clusters per joint.
//! Stage 1 releases the rest curvature in ten equal increments without
//! gravity; stage 2 removes the stored stress, softens bending and lets the
//! grid creep under gravity for one frame.
//!
//! Every design is simulated in a canonical orientation and labeling, so
//! in-plane isometric copies of a design yield exactly isometric results.

mod canonical;
mod solver;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::layout::*;
use crate::grid::{
    beam_curve, build_graph, GridDesign, GridGraph, Source, Station, Trajectory, KAPPA_MAX,
    STAGE1_STEPS,
};
use canonical::Canonical;
use solver::{station_frame, Layout, Solver, Weights};

/// Identifies the oracle model in dataset provenance.
pub const ORACLE_VERSION: &str = "local-global-shape-matching/2";

/// Segment strain beyond which a projection counts as diverged.
pub const DIVERGENCE_STRAIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Segments per beam; even so that the centre section is a station.
    pub segments_per_beam: usize,
    /// Projection sweeps per frame.
    pub projection_iterations: usize,
    pub stretch_stiffness: f64,
    pub bend_stiffness: f64,
    pub joint_rigidity: f64,
    /// Divides the bend stiffness during the creep stage.
    pub creep_compliance_scale: f64,
    /// mm/s².
    pub gravity: [f64; 3],
    /// Converts gravity into the per-particle load of the creep stage, in
    /// stiffness units per mm/s².
    pub creep_load_scale: f64,
    /// deg/mm; fixed to the material's measured value.
    pub kappa_max: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            segments_per_beam: 8,
            projection_iterations: 200,
            stretch_stiffness: 1.0,
            bend_stiffness: 1.0,
            joint_rigidity: 1.0,
            creep_compliance_scale: 4.0,
            gravity: [0.0, 0.0, -9810.0],
            creep_load_scale: 2.0e-8,
            kappa_max: KAPPA_MAX,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.segments_per_beam < 2 || self.segments_per_beam % 2 != 0 {
            return fail("segments_per_beam must be even and at least 2");
        }
        if self.projection_iterations == 0 {
            return fail("projection_iterations must be positive");
        }
        for (name, k) in [
            ("stretch_stiffness", self.stretch_stiffness),
            ("bend_stiffness", self.bend_stiffness),
            ("joint_rigidity", self.joint_rigidity),
        ] {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1]")));
            }
        }
        if !(self.creep_compliance_scale >= 1.0) || !self.creep_compliance_scale.is_finite() {
            return fail("creep_compliance_scale must be at least 1");
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return fail("gravity must be finite");
        }
        if !(self.creep_load_scale > 0.0) || !self.creep_load_scale.is_finite() {
            return fail("creep_load_scale must be positive");
        }
        if self.kappa_max != KAPPA_MAX {
            return fail("kappa_max is a material constant and cannot be changed");
        }
        Ok(())
    }

    fn creep_load(&self) -> Vector3<f64> {
        Vector3::from(self.gravity) * self.creep_load_scale
    }
}

/// Particle state of the beam network.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    layout: Layout,
    positions: Vec<Vector3<f64>>,
    released: f64,
}

impl OracleState {
    /// Flat design-time state, coordinates relative to the fixed joint.
    pub fn from_design(design: &GridDesign, config: &OracleConfig) -> Result<OracleState> {
        config.validate()?;
        let g0 = build_graph(design)?;
        let topo = design.topology()?;
        let mut positions = Vec::new();
        let mut joints = Vec::with_capacity(g0.n_nodes());
        for n in 0..g0.n_nodes() {
            let base = positions.len();
            positions.extend((0..NODE_CORNERS).map(|k| g0.node_corner(n, k)));
            joints.push(std::array::from_fn(|k| base + k));
        }
        let mut pinned = vec![false; positions.len()];
        for &i in &joints[topo.fixed] {
            pinned[i] = true;
        }

        let segments = config.segments_per_beam;
        let mut beams = Vec::with_capacity(g0.n_edges());
        for (b, t) in topo.beams.iter().enumerate() {
            let curve = beam_curve(design, &topo, b);
            let mut stations = Vec::with_capacity(segments + 1);
            stations.push(face_particles(&joints[t.a], t.face_a.direction(), 1));
            for station in &curve.stations(segments)[1..segments] {
                let base = positions.len();
                positions.extend((0..SECTION_CORNERS).map(|c| station.corner(c)));
                pinned.extend([false; SECTION_CORNERS]);
                stations.push(std::array::from_fn(|c| base + c));
            }
            stations.push(face_particles(&joints[t.b], t.face_b.direction(), -1));
            beams.push(stations);
        }
        Ok(OracleState {
            layout: Layout {
                joints,
                beams,
                pinned,
            },
            positions,
            released: 0.0,
        })
    }

    /// Fraction of the rest curvature released so far.
    pub fn released(&self) -> f64 {
        self.released
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn n_joints(&self) -> usize {
        self.layout.joints.len()
    }

    pub fn n_beams(&self) -> usize {
        self.layout.beams.len()
    }

    pub fn joint_center(&self, joint: usize) -> Vector3<f64> {
        self.layout.joints[joint]
            .iter()
            .map(|&i| self.positions[i])
            .sum::<Vector3<f64>>()
            / NODE_CORNERS as f64
    }

    /// Rigid orientation best fitting the joint cuboid's current corners.
    pub fn joint_orientation(&self, joint: usize) -> Rotation3<f64> {
        let center = self.joint_center(joint);
        let mut a = nalgebra::Matrix3::zeros();
        for (k, &i) in self.layout.joints[joint].iter().enumerate() {
            a += (self.positions[i] - center) * crate::grid::joint_corner_offset(k).transpose();
        }
        solver::extract_rotation(&a, Rotation3::identity())
    }

    /// Section centres along beam `beam`, start to end.
    pub fn beam_centerline(&self, beam: usize) -> Vec<Vector3<f64>> {
        self.layout.beams[beam]
            .iter()
            .map(|q| q.iter().map(|&i| self.positions[i]).sum::<Vector3<f64>>() / 4.0)
            .collect()
    }

    /// Material frames (tangent, width, thickness) of beam `beam`'s sections.
    pub fn beam_frames(&self, beam: usize) -> Vec<nalgebra::Matrix3<f64>> {
        self.layout.beams[beam]
            .iter()
            .map(|q| station_frame(q.map(|i| self.positions[i])).1)
            .collect()
    }

    /// Reads the state back into graph features. `template` supplies the
    /// adjacency and design channels; its stress is scaled by `remaining`.
    pub fn to_graph(&self, template: &GridGraph, remaining: f64) -> GridGraph {
        let mut g = template.clone();
        for (n, corners) in self.layout.joints.iter().enumerate() {
            let row = g.node_mut(n);
            for (k, &i) in corners.iter().enumerate() {
                crate::grid::write3(row, node_corner(k), self.positions[i]);
            }
        }
        for (e, stations) in self.layout.beams.iter().enumerate() {
            let mid = stations.len() / 2;
            let picks = [stations[0], stations[mid], stations[stations.len() - 1]];
            let row = g.edge_mut(e);
            for (s, quad) in picks.iter().enumerate() {
                for (c, &i) in quad.iter().enumerate() {
                    crate::grid::write3(row, edge_corner(s, c), self.positions[i]);
                    row[edge_stress(s, c)] *= remaining;
                }
            }
        }
        g.recompute_centers();
        g
    }
}

fn face_particles(joint: &[usize; 8], normal: (i32, i32), tangent_sign: i32) -> [usize; 4] {
    std::array::from_fn(|c| joint[crate::grid::face_corner_slot(normal, tangent_sign, c)])
}

fn check_strain(solver: &Solver, positions: &[Vector3<f64>], frame: usize) -> Result<()> {
    let strain = solver.max_strain(positions);
    if strain > DIVERGENCE_STRAIN || !strain.is_finite() {
        Err(Error::OracleDiverged { frame, strain })
    } else {
        Ok(())
    }
}

fn release_stage(
    state: &mut OracleState,
    actuators: &[f64],
    config: &OracleConfig,
    mut on_frame: impl FnMut(usize, &OracleState),
) -> Result<()> {
    let weights = Weights {
        stretch: config.stretch_stiffness,
        bend: config.bend_stiffness,
        joint: config.joint_rigidity,
    };
    let mut solver = Solver::new(&state.layout, &state.positions, weights);
    let kappa_max = config.kappa_max.to_radians();
    for t in 1..=STAGE1_STEPS {
        let released = t as f64 / STAGE1_STEPS as f64;
        let kappa: Vec<f64> = actuators.iter().map(|a| released * a * kappa_max).collect();
        solver.set_curvature(&kappa);
        solver.iterate(&mut state.positions, config.projection_iterations, Vector3::zeros());
        check_strain(&solver, &state.positions, t)?;
        state.released = released;
        on_frame(t, state);
    }
    Ok(())
}

/// Runs the ten release increments of stage 1 and returns the terminal state.
pub fn stage1_release(design: &GridDesign, config: &OracleConfig) -> Result<OracleState> {
    let mut state = OracleState::from_design(design, config)?;
    let actuators: Vec<f64> = design.beams.iter().map(|b| b.actuator).collect();
    release_stage(&mut state, &actuators, config, |_, _| {})?;
    Ok(state)
}

/// One creep relaxation from a stage-1 terminal state: the current shape
/// becomes the stress-free rest shape, bending is softened by
/// `creep_compliance_scale`, and gravity acts on every free particle.
pub fn stage2_creep(state: &OracleState, config: &OracleConfig) -> Result<OracleState> {
    config.validate()?;
    let mut next = state.clone();
    let weights = Weights {
        stretch: config.stretch_stiffness,
        bend: config.bend_stiffness / config.creep_compliance_scale,
        joint: config.joint_rigidity,
    };
    let mut solver = Solver::new(&next.layout, &next.positions, weights);
    let load = config.creep_load();
    if load != Vector3::zeros() {
        solver.iterate(&mut next.positions, config.projection_iterations, load);
    }
    check_strain(&solver, &next.positions, STAGE1_STEPS + 1)?;
    Ok(next)
}

/// Simulates a design: the flat frame, ten release frames and the creep frame.
pub fn simulate_oracle(design: &GridDesign, config: &OracleConfig) -> Result<Trajectory> {
    let g0 = build_graph(design)?;
    let canonical = Canonical::new(design, &design.topology()?);
    let frames = simulate_labeled(&canonical.design, config)?;
    let mut restored = Vec::with_capacity(frames.len());
    restored.push(g0);
    restored.extend(frames[1..].iter().map(|f| canonical.restore(f)));
    Ok(Trajectory {
        design: design.clone(),
        frames: restored,
        source: Source::Oracle,
    })
}

fn simulate_labeled(design: &GridDesign, config: &OracleConfig) -> Result<Vec<GridGraph>> {
    let g0 = build_graph(design)?;
    let mut state = OracleState::from_design(design, config)?;
    let actuators: Vec<f64> = design.beams.iter().map(|b| b.actuator).collect();
    let mut frames = Vec::with_capacity(STAGE1_STEPS + 2);
    frames.push(g0.clone());
    release_stage(&mut state, &actuators, config, |t, s| {
        let remaining = (STAGE1_STEPS - t) as f64 / STAGE1_STEPS as f64;
        frames.push(s.to_graph(&g0, remaining));
    })?;
    let state = stage2_creep(&state, config)?;
    frames.push(state.to_graph(&g0, 0.0));
    Ok(frames)
}

/// Releases a single straight, unjointed beam of `length` mm and returns the
/// angle between its end tangents in degrees after stage 1.
pub fn free_beam_bend_angle(length: f64, actuator: f64, config: &OracleConfig) -> Result<f64> {
    config.validate()?;
    let segments = config.segments_per_beam;
    let mut positions = Vec::with_capacity(4 * (segments + 1));
    let mut stations = Vec::with_capacity(segments + 1);
    for s in 0..=segments {
        let x = length * s as f64 / segments as f64;
        let station = Station::new(Vector3::new(x, 0.0, 0.0), Vector3::x());
        let base = positions.len();
        positions.extend((0..SECTION_CORNERS).map(|c| station.corner(c)));
        stations.push(std::array::from_fn(|c| base + c));
    }
    let pinned = vec![false; positions.len()];
    let mut state = OracleState {
        layout: Layout {
            joints: Vec::new(),
            beams: vec![stations],
            pinned,
        },
        positions,
        released: 0.0,
    };
    release_stage(&mut state, &[actuator], config, |_, _| {})?;
    let frames = state.beam_frames(0);
    let t0 = frames[0].column(0).into_owned();
    let t1 = frames[segments].column(0).into_owned();
    Ok(t0.dot(&t1).clamp(-1.0, 1.0).acos().to_degrees())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_hold_rest_length_within_one_percent() {
        let mut design = GridDesign::regular(56.0)
            .with_actuators(&[1.0, 0.5, 0.25, 0.75, 1.0, 0.0, 0.5, 0.5, 1.0, 0.25, 0.75, 1.0]);
        design.joints[0].x += 5.0;
        design.joints[8].y -= 7.0;
        let config = OracleConfig::default();
        let mut state = OracleState::from_design(&design, &config).unwrap();
        let weights = Weights {
            stretch: 1.0,
            bend: 1.0,
            joint: 1.0,
        };
        let mut solver = Solver::new(&state.layout, &state.positions, weights);
        for t in 1..=STAGE1_STEPS {
            let f = t as f64 / STAGE1_STEPS as f64 * KAPPA_MAX.to_radians();
            let kappa: Vec<f64> = design.beams.iter().map(|b| f * b.actuator).collect();
            solver.set_curvature(&kappa);
            solver.iterate(&mut state.positions, config.projection_iterations, Vector3::zeros());
            assert!(solver.max_strain(&state.positions) < 0.01, "frame {t}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            OracleConfig { segments_per_beam: 3, ..Default::default() },
            OracleConfig { segments_per_beam: 0, ..Default::default() },
            OracleConfig { bend_stiffness: 0.0, ..Default::default() },
            OracleConfig { joint_rigidity: 1.5, ..Default::default() },
            OracleConfig { creep_compliance_scale: 0.5, ..Default::default() },
            OracleConfig { kappa_max: 2.0, ..Default::default() },
        ];
        for config in bad {
            assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))), "{config:?}");
        }
        OracleConfig::default().validate().unwrap();
    }
}
