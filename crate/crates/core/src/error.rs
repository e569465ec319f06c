use std::fmt;

/// Identifies the design element a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum ElementRef {
    Joint(u32),
    Beam(u32),
    Grid,
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementRef::Joint(id) => write!(f, "joint {id}"),
            ElementRef::Beam(id) => write!(f, "beam {id}"),
            ElementRef::Grid => f.write_str("grid"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid design ({element}): {reason}")]
    InvalidDesign { element: ElementRef, reason: String },

    #[error("no joint corner within {tolerance} mm of beam {edge} section {section} corner {corner}")]
    ContiguityFailure {
        edge: usize,
        section: usize,
        corner: usize,
        tolerance: f64,
    },

    #[error("oracle projection diverged at frame {frame} (segment strain {strain:.4})")]
    OracleDiverged { frame: usize, strain: f64 },

    #[error("design sampler exhausted after {attempts} attempts")]
    SamplerExhausted { attempts: usize },

    #[error("normalizer for {role} is underdetermined: {samples} samples for {dims} dimensions")]
    NormalizerUnderdetermined {
        role: String,
        samples: usize,
        dims: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("computation graph error: {0}")]
    Graph(String),

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("rollout diverged at frame {frame}")]
    RolloutDiverged { frame: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("feature layout mismatch: checkpoint {found:#018x}, extractor {expected:#018x}")]
    LayoutMismatch { expected: u64, found: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(element: ElementRef, reason: impl Into<String>) -> Self {
        Error::InvalidDesign {
            element,
            reason: reason.into(),
        }
    }
}
