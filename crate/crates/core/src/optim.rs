//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter. Frozen parameters keep their
    /// values and moments.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        for (id, g) in grads.iter() {
            let p = params.get(id);
            if p.trainable && !g.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter `{}`",
                    p.name
                )));
            }
            if p.value.shape() != g.shape() {
                return Err(Error::shape("adam", p.value.shape(), g.shape()));
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);

        for (id, g) in grads.iter() {
            let i = id.index();
            let param = params.get_mut(id);
            if !param.trainable {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    fn single(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(value));
        s
    }

    fn grad(g: f64) -> Gradients<f64> {
        Gradients::from_tensors(vec![Tensor::scalar(g)])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = single(0.25);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grad(0.0)).unwrap();
        assert_eq!(store.value(ParamId(0)).data(), &[0.25]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // m = 0.1 g, v = 0.001 g²; bias-corrected both equal g and g², so the
        // step is lr · g / (|g| + eps).
        let mut store = single(1.0);
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(0.001), &store);
        adam.step(&mut store, &grad(1.0)).unwrap();
        let m_hat = (0.1 * 1.0) / (1.0 - 0.9);
        let v_hat = (0.001 * 1.0) / (1.0 - 0.999);
        let expected = 1.0 - 0.001 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        let got = store.value(ParamId(0)).data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((1.0 - got - 0.001).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let err = adam.step(&mut store, &grad(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        store.insert_with("frozen", Tensor::scalar(2.0), false);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store, &grad(1.0)).unwrap();
        assert_eq!(store.value(ParamId(0)).data(), &[2.0]);
    }
}
