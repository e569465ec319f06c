//! Dense neural machinery: row-major matrices, a reverse-mode tape over
//! matrix operations, multilayer perceptrons and the Adam optimizer.
//!
//! Every kernel processes rows independently with a fixed reduction order,
//! so a row's result does not depend on which other rows share its batch.

mod adam;
mod kernels;
mod mat;
mod mlp;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use mat::Mat;
pub use mlp::{Mlp, MlpSpec};
pub use params::{Gradients, ParamStore};
pub use tape::{Tape, Var};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating-point element type of matrices and parameters.
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }
}
