use alloc::vec::Vec;

use super::params::ParamStore;
use super::tensor::NdArray;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<NdArray>,
    pub second_moment: Vec<NdArray>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<NdArray> = params.iter().map(|(_, p)| NdArray::zeros(p.value.shape())).collect();
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One bias-corrected Adam update of every trainable parameter; clears
    /// all gradients afterwards.
    pub fn step(&mut self, params: &mut ParamStore) {
        debug_assert_eq!(self.first_moment.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let step_size = self.learning_rate / bc1;
        let inv_bc2 = 1.0 / bc2;
        for ((p, m), v) in params
            .iter_mut()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            if !p.trainable {
                p.grad.fill(0.0);
                continue;
            }
            let w = p.value.data_mut();
            for (((w, g), m), v) in w
                .iter_mut()
                .zip(p.grad.data_mut().iter_mut())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let grad = core::mem::take(g);
                *m = b1 * *m + (1.0 - b1) * grad;
                *v = b2 * *v + (1.0 - b2) * grad * grad;
                *w -= step_size * *m / (libm::sqrt(*v * inv_bc2) + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("w", NdArray::scalar(w), true).unwrap();
        ps
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut ps = scalar_store(0.7);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut ps);
        }
        assert_eq!(ps.iter().next().unwrap().1.value.data()[0], 0.7);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn single_step_descends_and_clears_gradient() {
        let mut ps = scalar_store(1.0);
        let id = ps.id("w").unwrap();
        ps.grad_mut(id).data_mut()[0] = 1.0;
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        adam.step(&mut ps);
        let w = ps.value(id).data()[0];
        assert!(w < 1.0);
        // first step moves by ~lr in the sign direction
        assert!((1.0 - w - 1e-4).abs() < 1e-9);
        assert_eq!(ps.grad(id).data()[0], 0.0);
    }

    #[test]
    fn constant_gradient_update_approaches_learning_rate() {
        let mut ps = scalar_store(0.0);
        let id = ps.id("w").unwrap();
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(&ps, cfg);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = ps.value(id).data()[0];
            ps.grad_mut(id).data_mut()[0] = -0.3;
            adam.step(&mut ps);
            last = ps.value(id).data()[0] - before;
        }
        // closed-form limit: m̂ → g, v̂ → g², update → lr·g/|g|
        assert!((last - cfg.learning_rate).abs() < 1e-9 * cfg.learning_rate.max(1.0));
    }

    #[test]
    fn frozen_parameters_are_not_updated() {
        let mut ps = ParamStore::new();
        let id = ps.insert("running_mean", NdArray::scalar(2.0), false).unwrap();
        ps.grad_mut(id).data_mut()[0] = 5.0;
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        adam.step(&mut ps);
        assert_eq!(ps.value(id).data()[0], 2.0);
    }
}
