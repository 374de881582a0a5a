//! Bias-corrected Adam over the flat parameter store.

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in [0,1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// One Adam update over every registered parameter. Increments the store's
/// step counter and zeroes the gradient slots afterward.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    assert_eq!(state.m.len(), store.len(), "Adam state shape mismatch");
    store.check_finite_grads()?;
    let t = store.step() + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let lr_t = state.lr * bc2.sqrt() / bc1;

    let grads: Vec<f64> = store.all_grads().to_vec();
    let values = store.all_values_mut();
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        values[i] -= lr_t * state.m[i] / (state.v[i].sqrt() + state.epsilon);
    }
    store.increment_step();
    store.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore, super::super::GroupId) {
        let mut store = ParamStore::new();
        let id = store.register("x", &[1], vec![x]);
        (store, id)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let (mut store, id) = scalar_store(1.5);
        let mut state = AdamState::new(store.len(), 1e-2);
        adam_step(&mut store, &mut state).unwrap();
        assert_eq!(store.values(id)[0], 1.5);
        assert_eq!(store.step(), 1);
        assert_eq!(store.all_grads()[0], 0.0);
    }

    #[test]
    fn first_step_moves_by_signed_learning_rate() {
        for g in [3.0, -0.7] {
            let (mut store, id) = scalar_store(0.0);
            let mut state = AdamState::new(store.len(), 1e-3);
            store.grads_mut(id)[0] = g;
            adam_step(&mut store, &mut state).unwrap();
            let update = store.values(id)[0];
            assert!(
                (update + 1e-3 * g.signum()).abs() < 1e-8,
                "update {update} for gradient {g}"
            );
        }
    }

    #[test]
    fn quadratic_converges_to_optimum() {
        // loss = 0.5 (x - a)^2, optimum x = a.
        let a = 0.3;
        let (mut store, id) = scalar_store(-0.2);
        let mut state = AdamState::new(store.len(), 1e-3);
        for _ in 0..2000 {
            let x = store.values(id)[0];
            store.grads_mut(id)[0] = x - a;
            adam_step(&mut store, &mut state).unwrap();
        }
        let x = store.values(id)[0];
        assert!((x - a).abs() < 1e-3, "final x {x} vs optimum {a}");
    }

    #[test]
    fn non_finite_gradient_aborts_with_group_name() {
        let (mut store, id) = scalar_store(0.0);
        let mut state = AdamState::new(store.len(), 1e-3);
        store.grads_mut(id)[0] = f64::INFINITY;
        let err = adam_step(&mut store, &mut state).unwrap_err();
        assert!(err.to_string().contains('x'), "{err}");
        assert_eq!(store.step(), 0);
    }

    #[test]
    fn updates_are_invariant_to_zero_grad_padding() {
        // Same trajectory for "x" whether or not an unused zero-grad group
        // is registered alongside it.
        let run = |with_padding: bool| -> f64 {
            let mut store = ParamStore::new();
            let id = store.register("x", &[1], vec![0.7]);
            if with_padding {
                store.register("unused", &[8], vec![0.1; 8]);
            }
            let mut state = AdamState::new(store.len(), 2e-3);
            for k in 0..50 {
                store.grads_mut(id)[0] = (k as f64 * 0.1).sin() + 0.3;
                adam_step(&mut store, &mut state).unwrap();
            }
            store.values(id)[0]
        };
        assert_eq!(run(false), run(true));
    }
}
