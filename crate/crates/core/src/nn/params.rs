use serde::{Deserialize, Serialize};

use super::{Mat, Real};

/// Named trainable matrices. Models refer to entries by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub mats: Vec<Mat<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            mats: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> usize {
        self.names.push(name.into());
        self.mats.push(value);
        self.mats.len() - 1
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.mats.iter().map(|m| m.data.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            mats: self.mats.iter().map(Mat::cast).collect(),
        }
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients {
            mats: self.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect(),
        }
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub mats: Vec<Mat<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(Mat::is_finite)
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for m in &mut self.mats {
            for v in &mut m.data {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.mats
            .iter()
            .flat_map(|m| m.data.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }
}
