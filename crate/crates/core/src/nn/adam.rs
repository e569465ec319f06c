use serde::{Deserialize, Serialize};

use super::{Gradients, Mat, ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction; moments mirror the parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Adam<T> {
        let zeros = || store.mats.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. A non-finite gradient leaves parameters and state untouched.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        self.update_masked(store, grads, None)
    }

    /// Like [`Adam::update`], but only entries with `active[i]` set move;
    /// the others keep their parameters and moments.
    pub fn update_masked(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &Gradients<T>,
        active: Option<&[bool]>,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if grads.mats.len() != store.mats.len() {
            return Err(Error::Shape("gradient count differs from parameter count".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let lr = c.learning_rate * (1.0 - c.beta2.powf(t)).sqrt() / (1.0 - c.beta1.powf(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one, lr, eps) = (T::one(), T::of(lr), T::of(c.epsilon));
        for (i, (((p, g), m), v)) in store
            .mats
            .iter_mut()
            .zip(&grads.mats)
            .zip(&mut self.m)
            .zip(&mut self.v)
            .enumerate()
        {
            if active.is_some_and(|a| !a[i]) {
                continue;
            }
            if p.shape() != g.shape() {
                return Err(Error::Shape("gradient shape differs from parameter".into()));
            }
            for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::default();
        s.add("x", Mat::from_vec(1, x.len(), x));
        s
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut store = one_param(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let zero = store.zeros_like();
        adam.update(&mut store, &zero).unwrap();
        assert_eq!(store.mats[0].data, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut store = one_param(vec![0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let grads = Gradients {
            mats: vec![Mat::from_vec(1, 2, vec![3.0, -0.5])],
        };
        let mut prev = store.mats[0].data.clone();
        for _ in 0..50 {
            adam.update(&mut store, &grads).unwrap();
            let now = store.mats[0].data.clone();
            assert!(now[0] < prev[0] && now[1] > prev[1]);
            prev = now;
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let target = [1.5, -0.75];
        let mut store = one_param(vec![0.0, 0.0]);
        let config = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(config, &store);
        for _ in 0..200 {
            let x = &store.mats[0].data;
            let g = vec![2.0 * (x[0] - target[0]), 8.0 * (x[1] - target[1])];
            adam.update(&mut store, &Gradients { mats: vec![Mat::from_vec(1, 2, g)] })
                .unwrap();
        }
        let x = &store.mats[0].data;
        let dist = ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)).sqrt();
        assert!(dist < 1e-3, "{dist}");
    }

    #[test]
    fn masked_entries_stay_put() {
        let mut store = one_param(vec![1.0]);
        store.add("y", Mat::from_vec(1, 1, vec![2.0]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let g = Gradients {
            mats: vec![Mat::scalar(1.0), Mat::scalar(1.0)],
        };
        adam.update_masked(&mut store, &g, Some(&[false, true])).unwrap();
        assert_eq!(store.mats[0].data, vec![1.0]);
        assert!(store.mats[1].data[0] < 2.0);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut store = one_param(vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let g = Gradients {
            mats: vec![Mat::from_vec(1, 1, vec![f64::NAN])],
        };
        assert!(matches!(adam.update(&mut store, &g), Err(Error::NonFiniteGradient)));
        assert_eq!(adam.step, 0);
        assert_eq!(store.mats[0].data, vec![1.0]);
    }
}
