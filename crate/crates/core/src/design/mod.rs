//! Design validation and the brute-force inverse/hybrid search.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::StatsReport;
use crate::error::{ElementRef, Error, Result};
use crate::grid::{build_graph, contiguity_pairs, GridDesign, GridGraph, MIN_ACTUATED_LENGTH};
use crate::grid::layout::NODE_CENTER;
use crate::nn::Real;
use crate::sim::Surrogate;

pub const DEFAULT_JOINT_STEP: f64 = 2.0;
pub const DEFAULT_TOP_K: usize = 5;
pub const ACTUATOR_STEP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    JointConfigError,
    ActuatorLengthError,
    BeamLengthWarning,
    GridSizeWarning,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IssueCode::JointConfigError => "JOINT_CONFIG_ERROR",
            IssueCode::ActuatorLengthError => "ACTUATOR_LENGTH_ERROR",
            IssueCode::BeamLengthWarning => "BEAM_LENGTH_WARNING",
            IssueCode::GridSizeWarning => "GRID_SIZE_WARNING",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub element: ElementRef,
    pub message: String,
}

/// Errors block simulation; warnings only flag reduced accuracy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }
}

/// Checks a design for simulation. Without `stats` only the blocking
/// errors are evaluated.
pub fn validate(design: &GridDesign, stats: Option<&StatsReport>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let joint_error = |element, message: String| Issue {
        code: IssueCode::JointConfigError,
        element,
        message,
    };
    if let Err(e) = design.topology() {
        let element = match &e {
            Error::InvalidDesign { element, .. } => *element,
            _ => ElementRef::Grid,
        };
        report.errors.push(joint_error(element, e.to_string()));
        return report;
    }
    if let Err(e) = build_graph(design).and_then(|g| contiguity_pairs(&g)) {
        report.errors.push(joint_error(ElementRef::Grid, e.to_string()));
        return report;
    }
    let lengths = design.beam_lengths().unwrap_or_default();
    for (beam, &length) in design.beams.iter().zip(&lengths) {
        if beam.actuator > 0.0 && length < MIN_ACTUATED_LENGTH {
            report.errors.push(Issue {
                code: IssueCode::ActuatorLengthError,
                element: ElementRef::Beam(beam.id),
                message: format!(
                    "actuated beam is {length:.2} mm long, shorter than the {MIN_ACTUATED_LENGTH} mm minimum"
                ),
            });
        }
    }
    if let Some(stats) = stats {
        let band = &stats.beam_length;
        for (beam, &length) in design.beams.iter().zip(&lengths) {
            if !band.contains(length) {
                report.warnings.push(Issue {
                    code: IssueCode::BeamLengthWarning,
                    element: ElementRef::Beam(beam.id),
                    message: format!(
                        "beam length {length:.2} mm is outside the training range {:.2}..{:.2} mm",
                        band.p3, band.p97
                    ),
                });
            }
        }
        let band = &stats.grid_dimension;
        let dimension = design.grid_dimension();
        if !band.contains(dimension) {
            report.warnings.push(Issue {
                code: IssueCode::GridSizeWarning,
                element: ElementRef::Grid,
                message: format!(
                    "grid dimension {dimension:.2} mm is outside the training range {:.2}..{:.2} mm",
                    band.p3, band.p97
                ),
            });
        }
    }
    report
}

/// Target position of one joint centre, mm, in the design frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub joint: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetSpec {
    pub targets: Vec<Target>,
}

impl TargetSpec {
    /// Resolves joint ids to node indices.
    pub fn resolve(&self, design: &GridDesign) -> Result<Vec<(usize, [f64; 3])>> {
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig("at least one target point is required".into()));
        }
        self.targets
            .iter()
            .map(|t| {
                let node = design.joint_index(t.joint).ok_or_else(|| Error::InvalidDesign {
                    element: ElementRef::Joint(t.joint),
                    reason: "target refers to an unknown joint".into(),
                })?;
                if !(t.x.is_finite() && t.y.is_finite() && t.z.is_finite()) {
                    return Err(Error::InvalidConfig(format!("target for joint {} is not finite", t.joint)));
                }
                Ok((node, [t.x, t.y, t.z]))
            })
            .collect()
    }

    /// Targets at every listed joint's centre in `frame`.
    pub fn from_frame(design: &GridDesign, frame: &GridGraph, joints: &[u32]) -> Result<TargetSpec> {
        let targets = joints
            .iter()
            .map(|&joint| {
                let node = design.joint_index(joint).ok_or_else(|| Error::Index(format!("joint {joint}")))?;
                let c = &frame.node(node)[NODE_CENTER..NODE_CENTER + 3];
                Ok(Target {
                    joint,
                    x: c[0],
                    y: c[1],
                    z: c[2],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TargetSpec { targets })
    }
}

/// A design modification and the description shown to the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modification {
    pub descriptor: String,
    pub design: GridDesign,
}

pub const CURRENT_DESCRIPTOR: &str = "current design";

/// Compass bearings in the design plane, counter-clockwise from east.
const BEARINGS: [&str; 8] = ["E", "NE", "N", "NW", "W", "SW", "S", "SE"];

/// The current design, every beam's actuator moved by ±0.25 and every
/// free joint moved `joint_step` mm along the eight bearings. Duplicates
/// and invalid candidates are dropped; the current design comes first.
pub fn neighborhood(design: &GridDesign, joint_step: f64) -> Vec<Modification> {
    let mut pool = vec![Modification {
        descriptor: CURRENT_DESCRIPTOR.into(),
        design: design.clone(),
    }];
    let mut push = |descriptor: String, candidate: GridDesign| {
        if pool.iter().any(|m| m.design == candidate) {
            return;
        }
        if validate(&candidate, None).is_valid() {
            pool.push(Modification {
                descriptor,
                design: candidate,
            });
        }
    };
    for (i, beam) in design.beams.iter().enumerate() {
        for delta in [-ACTUATOR_STEP, ACTUATOR_STEP] {
            let value = (beam.actuator + delta).clamp(0.0, 1.0);
            let mut candidate = design.clone();
            candidate.beams[i].actuator = value;
            push(format!("beam {:03} actuator {:.2} -> {value:.2}", beam.id, beam.actuator), candidate);
        }
    }
    if joint_step.is_finite() {
        for (i, joint) in design.joints.iter().enumerate() {
            if joint.fixed {
                continue;
            }
            for (k, bearing) in BEARINGS.iter().enumerate() {
                let angle = k as f64 * std::f64::consts::FRAC_PI_4;
                let mut candidate = design.clone();
                candidate.joints[i].x += joint_step * angle.cos();
                candidate.joints[i].y += joint_step * angle.sin();
                push(format!("joint {:03} move {bearing} {joint_step} mm", joint.id), candidate);
            }
        }
    }
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub descriptor: String,
    pub design: GridDesign,
    /// Mean distance between predicted final joint centres and targets, mm.
    pub score: f64,
    pub final_frame: GridGraph,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateRanking {
    /// Ascending score, ties broken by descriptor.
    pub candidates: Vec<Candidate>,
    /// Candidates that could not be scored, with the reason.
    pub excluded: Vec<String>,
}

fn target_score(frame: &GridGraph, targets: &[(usize, [f64; 3])]) -> f64 {
    let sum: f64 = targets
        .iter()
        .map(|(node, t)| {
            let c = &frame.node(*node)[NODE_CENTER..NODE_CENTER + 3];
            ((c[0] - t[0]).powi(2) + (c[1] - t[1]).powi(2) + (c[2] - t[2]).powi(2)).sqrt()
        })
        .sum();
    sum / targets.len() as f64
}

/// Rolls out every candidate and sorts them by distance to the targets.
pub fn rank_candidates<T: Real>(
    model: &Surrogate<T>,
    candidates: &[Modification],
    targets: &TargetSpec,
) -> Result<CandidateRanking> {
    let mut ranking = CandidateRanking::default();
    let mut scored = Vec::with_capacity(candidates.len());
    for m in candidates {
        match targets.resolve(&m.design).and_then(|t| build_graph(&m.design).map(|g| (t, g))) {
            Ok((t, g)) => scored.push((m, t, g)),
            Err(e) => ranking.excluded.push(format!("{}: {e}", m.descriptor)),
        }
    }
    let g0s: Vec<GridGraph> = scored.iter().map(|(_, _, g)| g.clone()).collect();
    let finals: Vec<Result<GridGraph>> = match model.rollout_batch(&g0s) {
        Ok(all) => all.into_iter().map(|mut frames| Ok(frames.pop().expect("non-empty rollout"))).collect(),
        Err(Error::RolloutDiverged { .. }) => g0s
            .iter()
            .map(|g| model.rollout(g).map(|mut frames| frames.pop().expect("non-empty rollout")))
            .collect(),
        Err(e) => return Err(e),
    };
    for ((m, t, _), last) in scored.into_iter().zip(finals) {
        match last {
            Ok(frame) => ranking.candidates.push(Candidate {
                descriptor: m.descriptor.clone(),
                design: m.design.clone(),
                score: target_score(&frame, &t),
                final_frame: frame,
            }),
            Err(e @ Error::RolloutDiverged { .. }) => ranking.excluded.push(format!("{}: {e}", m.descriptor)),
            Err(e) => return Err(e),
        }
    }
    ranking
        .candidates
        .sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.descriptor.cmp(&b.descriptor)));
    Ok(ranking)
}

/// The `k` best modifications of `design`.
pub fn hybrid_step<T: Real>(
    model: &Surrogate<T>,
    design: &GridDesign,
    targets: &TargetSpec,
    k: usize,
    joint_step: f64,
) -> Result<CandidateRanking> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k must be at least 1".into()));
    }
    check_start(design, targets)?;
    let mut ranking = rank_candidates(model, &neighborhood(design, joint_step), targets)?;
    ranking.candidates.truncate(k);
    Ok(ranking)
}

fn check_start(design: &GridDesign, targets: &TargetSpec) -> Result<()> {
    let report = validate(design, None);
    if let Some(issue) = report.errors.first() {
        return Err(Error::InvalidDesign {
            element: issue.element,
            reason: issue.message.clone(),
        });
    }
    targets.resolve(design).map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseEpoch {
    pub epoch: usize,
    pub descriptor: String,
    /// Score of the adopted design.
    pub score: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseResult {
    pub initial_score: f64,
    pub best: GridDesign,
    pub best_score: f64,
    pub history: Vec<InverseEpoch>,
}

/// Repeatedly adopts the best-ranked neighbour. The pool always holds the
/// current design, so the score never increases.
pub fn inverse_optimize<T: Real>(
    model: &Surrogate<T>,
    design: &GridDesign,
    targets: &TargetSpec,
    epochs: usize,
    joint_step: f64,
    mut progress: impl FnMut(&InverseEpoch),
) -> Result<InverseResult> {
    if epochs == 0 {
        return Err(Error::InvalidConfig("inverse search needs at least one epoch".into()));
    }
    check_start(design, targets)?;
    let start = rank_candidates(
        model,
        &[Modification {
            descriptor: CURRENT_DESCRIPTOR.into(),
            design: design.clone(),
        }],
        targets,
    )?;
    let initial_score = start
        .candidates
        .first()
        .map(|c| c.score)
        .ok_or(Error::RolloutDiverged { frame: 0 })?;
    let mut current = design.clone();
    let mut score = initial_score;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let pool = neighborhood(&current, joint_step);
        let ranking = rank_candidates(model, &pool, targets)?;
        let best = ranking.candidates.into_iter().next().ok_or(Error::RolloutDiverged { frame: 0 })?;
        current = best.design;
        score = best.score;
        let record = InverseEpoch {
            epoch,
            descriptor: best.descriptor,
            score,
            candidates: pool.len(),
        };
        progress(&record);
        history.push(record);
    }
    Ok(InverseResult {
        initial_score,
        best: current,
        best_score: score,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Summary, StatsReport};

    fn interior() -> GridDesign {
        GridDesign::regular(50.0).with_actuators(&[0.5; 12])
    }

    fn band(p3: f64, p97: f64) -> Summary {
        Summary {
            mean: (p3 + p97) / 2.0,
            p3,
            p50: (p3 + p97) / 2.0,
            p97,
            min: p3,
            max: p97,
        }
    }

    fn stats() -> StatsReport {
        StatsReport {
            designs: 100,
            beam_length: band(20.0, 60.0),
            grid_dimension: band(65.64, 124.39),
        }
    }

    #[test]
    fn regular_grid_has_an_empty_report() {
        let report = validate(&interior(), Some(&stats()));
        assert!(report.is_empty(), "{report:?}");
    }

    #[test]
    fn missing_beam_is_a_joint_config_error() {
        let mut d = interior();
        d.beams.pop();
        let report = validate(&d, Some(&stats()));
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].code, IssueCode::JointConfigError);
    }

    #[test]
    fn two_fixed_joints_are_a_joint_config_error() {
        let mut d = interior();
        d.joints[0].fixed = true;
        let report = validate(&d, None);
        assert_eq!(report.errors[0].code, IssueCode::JointConfigError);
    }

    #[test]
    fn short_actuated_beam_is_an_error_but_passive_is_not() {
        let mut d = GridDesign::regular(20.0).with_actuators(&[0.0; 12]);
        assert!(validate(&d, None).is_valid());
        d.beams[3].actuator = 0.25;
        let report = validate(&d, None);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].code, IssueCode::ActuatorLengthError);
        assert_eq!(report.errors[0].element, ElementRef::Beam(d.beams[3].id));
    }

    #[test]
    fn oversized_grid_warns_without_blocking() {
        let d = GridDesign::regular(90.0).with_actuators(&[0.5; 12]);
        assert!(d.grid_dimension() > 124.39);
        let report = validate(&d, Some(&stats()));
        assert!(report.is_valid());
        assert!(report.warnings.iter().any(|w| w.code == IssueCode::GridSizeWarning));
        assert!(report.warnings.iter().any(|w| w.code == IssueCode::BeamLengthWarning));
        assert_eq!(report, validate(&d, Some(&stats())));
    }

    #[test]
    fn report_codes_serialize_in_upper_snake_case() {
        let json = serde_json::to_string(&IssueCode::GridSizeWarning).unwrap();
        assert_eq!(json, "\"GRID_SIZE_WARNING\"");
    }

    #[test]
    fn interior_actuators_give_eighty_nine_candidates() {
        assert_eq!(neighborhood(&interior(), 2.0).len(), 1 + 24 + 64);
        let passive = GridDesign::regular(50.0).with_actuators(&[0.0; 12]);
        assert_eq!(neighborhood(&passive, 2.0).len(), 1 + 12 + 64);
    }

    #[test]
    fn zero_step_joint_moves_collapse_into_the_current_design() {
        assert_eq!(neighborhood(&interior(), 0.0).len(), 1 + 24);
    }

    #[test]
    fn candidates_keep_quarter_actuators_and_validity() {
        let d = GridDesign::regular(45.0).with_actuators(&[0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 0.0, 0.5, 0.25, 0.75, 0.0, 1.0]);
        let pool = neighborhood(&d, 2.0);
        assert!(pool.len() <= 89);
        assert_eq!(pool[0].design, d);
        for m in &pool {
            assert!(validate(&m.design, None).is_valid());
            for b in &m.design.beams {
                assert_eq!((b.actuator * 4.0).fract(), 0.0);
                assert!((0.0..=1.0).contains(&b.actuator));
            }
        }
        let descriptors: std::collections::HashSet<_> = pool.iter().map(|m| &m.descriptor).collect();
        assert_eq!(descriptors.len(), pool.len());
    }

    #[test]
    fn targets_must_name_known_joints() {
        let d = interior();
        assert!(TargetSpec { targets: vec![] }.resolve(&d).is_err());
        let spec = TargetSpec {
            targets: vec![Target {
                joint: 999,
                x: 0.0,
                y: 0.0,
                z: 0.0,
            }],
        };
        assert!(spec.resolve(&d).is_err());
        let json = r#"[{"joint":1,"x":1.0,"y":2.0,"z":3.0}]"#;
        let parsed: TargetSpec = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.targets[0].z, 3.0);
    }
}
