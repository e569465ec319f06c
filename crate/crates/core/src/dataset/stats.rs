use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDesign;

/// Percentile of `values` with linear interpolation between closest ranks;
/// `p` is in percent.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * (p / 100.0).clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub p3: f64,
    pub p50: f64,
    pub p97: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p3: percentile(values, 3.0),
            p50: percentile(values, 50.0),
            p97: percentile(values, 97.0),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.p3..=self.p97).contains(&value)
    }
}

/// Geometry statistics of a design population; the percentile bands drive
/// the validation warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub designs: usize,
    pub beam_length: Summary,
    pub grid_dimension: Summary,
}

pub fn design_stats<'a>(designs: impl IntoIterator<Item = &'a GridDesign>) -> Result<StatsReport> {
    let mut lengths = Vec::new();
    let mut dimensions = Vec::new();
    for design in designs {
        lengths.extend(design.beam_lengths()?);
        dimensions.push(design.grid_dimension());
    }
    if dimensions.is_empty() {
        return Err(Error::InvalidConfig("statistics need at least one design".into()));
    }
    Ok(StatsReport {
        designs: dimensions.len(),
        beam_length: Summary::of(&lengths),
        grid_dimension: Summary::of(&dimensions),
    })
}
