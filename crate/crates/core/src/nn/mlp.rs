use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::affine;
use super::{Mat, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

/// Layer widths of a perceptron with ReLU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    /// Each hidden width is half the previous one.
    pub hidden: Vec<usize>,
    pub output: usize,
    pub seed: u64,
}

impl MlpSpec {
    /// `depth` hidden layers starting at `first` and halving.
    pub fn halving(input: usize, first: usize, depth: usize, output: usize, seed: u64) -> MlpSpec {
        MlpSpec {
            input,
            hidden: (0..depth).map(|i| (first >> i).max(1)).collect(),
            output,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.hidden.windows(2).any(|w| w[1] * 2 != w[0]) {
            return Err(Error::InvalidConfig(format!(
                "hidden widths {:?} must halve layer by layer",
                self.hidden
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }
}

/// A perceptron whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    /// Store indices of each layer's weight and bias.
    pub layers: Vec<(usize, usize)>,
}

impl Mlp {
    /// Adds He-initialized weights and zero biases to `store`.
    pub fn new<T: Real>(spec: MlpSpec, store: &mut ParamStore<T>, name: &str) -> Result<Mlp> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let widths = spec.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = Mat::from_vec(
                fan_in,
                fan_out,
                (0..fan_in * fan_out).map(|_| T::of(normal.sample(&mut rng))).collect(),
            );
            let wi = store.add(format!("{name}.w{l}"), w);
            let bi = store.add(format!("{name}.b{l}"), Mat::zeros(1, fan_out));
            layers.push((wi, bi));
        }
        Ok(Mlp { spec, layers })
    }

    /// Records the forward pass; `params` holds the tape handle of every
    /// store entry.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        if tape.value(x).cols != self.spec.input {
            return Err(Error::Shape(format!(
                "mlp expects {} inputs, got {}",
                self.spec.input,
                tape.value(x).cols
            )));
        }
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, params[w], params[b])?;
            if l + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording.
    pub fn eval<T: Real>(&self, store: &ParamStore<T>, x: &Mat<T>) -> Result<Mat<T>> {
        if x.cols != self.spec.input {
            return Err(Error::Shape(format!(
                "mlp expects {} inputs, got {}",
                self.spec.input, x.cols
            )));
        }
        let mut h = x.clone();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = affine(&h, &store.mats[w], &store.mats[b].data);
            if l + 1 < self.layers.len() {
                for v in &mut h.data {
                    if !(*v > T::zero()) {
                        *v = T::zero();
                    }
                }
            }
        }
        Ok(h)
    }
}
