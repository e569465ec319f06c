use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{beam_curve, GridDesign, MIN_ACTUATED_LENGTH};

/// Quarter levels an actuator fraction can take.
pub const ACTUATOR_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Rejection attempts per design before giving up.
pub const SAMPLER_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Lattice spacing between joint centres, mm.
    pub spacing: f64,
    /// Radius of the disc each joint is moved within, mm.
    pub jitter: f64,
    /// Relative weights of [`ACTUATOR_LEVELS`].
    pub actuator_weights: [f64; 5],
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            spacing: 56.0,
            jitter: 22.0,
            actuator_weights: [1.0; 5],
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > crate::grid::JOINT_SIDE) || !self.spacing.is_finite() {
            return Err(Error::InvalidConfig("spacing must exceed the joint side".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter < self.spacing / 2.0) {
            return Err(Error::InvalidConfig("jitter must lie in [0, spacing / 2)".into()));
        }
        if self.actuator_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || self.actuator_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidConfig(
                "actuator weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// Draws a random design: a regular lattice whose joints are each moved
/// uniformly within a disc, with independent quarter-level actuators. The
/// centre joint is fixed.
pub fn sample_design(rng: &mut impl Rng, config: &SamplerConfig) -> Result<GridDesign> {
    config.validate()?;
    let levels = WeightedIndex::new(config.actuator_weights)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for _ in 0..SAMPLER_ATTEMPTS {
        let mut design = GridDesign::regular(config.spacing);
        for joint in &mut design.joints {
            let r = config.jitter * rng.gen::<f64>().sqrt();
            let angle = std::f64::consts::TAU * rng.gen::<f64>();
            joint.x += r * angle.cos();
            joint.y += r * angle.sin();
        }
        for beam in &mut design.beams {
            beam.actuator = ACTUATOR_LEVELS[levels.sample(rng)];
        }
        if acceptable(&design) {
            return Ok(design);
        }
    }
    Err(Error::SamplerExhausted {
        attempts: SAMPLER_ATTEMPTS,
    })
}

/// Rejects overlapping joints, crossing beams and actuated beams too short to
/// print.
fn acceptable(design: &GridDesign) -> bool {
    let Ok(topo) = design.topology() else {
        return false;
    };
    let min_gap = crate::grid::JOINT_SIDE * std::f64::consts::SQRT_2;
    for (i, a) in design.joints.iter().enumerate() {
        for b in &design.joints[..i] {
            if (a.x - b.x).hypot(a.y - b.y) < min_gap {
                return false;
            }
        }
    }
    let polylines: Vec<Vec<(f64, f64)>> = (0..design.beams.len())
        .map(|b| {
            let curve = beam_curve(design, &topo, b);
            (0..=16).map(|k| {
                let p = curve.point(k as f64 / 16.0);
                (p.x, p.y)
            })
            .collect()
        })
        .collect();
    for (b, beam) in design.beams.iter().enumerate() {
        let length = beam_curve(design, &topo, b).arc_length();
        if beam.actuator > 0.0 && length < MIN_ACTUATED_LENGTH {
            return false;
        }
    }
    for i in 0..polylines.len() {
        for j in 0..i {
            let (ti, tj) = (&topo.beams[i], &topo.beams[j]);
            let shared = ti.a == tj.a || ti.a == tj.b || ti.b == tj.a || ti.b == tj.b;
            if !shared && polylines_cross(&polylines[i], &polylines[j]) {
                return false;
            }
        }
    }
    true
}

fn polylines_cross(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    a.windows(2)
        .any(|s| b.windows(2).any(|t| segments_cross(s[0], s[1], t[0], t[1])))
}

fn segments_cross(p: (f64, f64), q: (f64, f64), r: (f64, f64), s: (f64, f64)) -> bool {
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
    };
    let (d1, d2) = (orient(r, s, p), orient(r, s, q));
    let (d3, d4) = (orient(p, q, r), orient(p, q, s));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_config_gives_regular_grid() {
        let config = SamplerConfig {
            jitter: 0.0,
            actuator_weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let design = sample_design(&mut rng, &config).unwrap();
        assert_eq!(design, GridDesign::regular(config.spacing));
    }

    #[test]
    fn same_seed_same_sequence() {
        let config = SamplerConfig::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| sample_design(&mut rng, &config).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn samples_satisfy_design_invariants() {
        let config = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = sample_design(&mut rng, &config).unwrap();
            d.topology().unwrap();
            assert!(d.beams.iter().all(|b| ACTUATOR_LEVELS.contains(&b.actuator)));
            assert!(d.joints[4].fixed);
        }
    }

    #[test]
    fn crossing_segments_detected() {
        assert!(segments_cross((0.0, 0.0), (2.0, 2.0), (0.0, 2.0), (2.0, 0.0)));
        assert!(!segments_cross((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)));
    }

    #[test]
    fn rejects_wide_jitter() {
        let config = SamplerConfig {
            jitter: 30.0,
            spacing: 50.0,
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }
}
