//! NAdam (Nesterov-momentum Adam) with bias correction and zero weight
//! decay.
//!
//! Update, per component, with step count `t` starting at 1:
//!
//! ```text
//! m   <- b1 m + (1 - b1) g
//! v   <- b2 v + (1 - b2) g^2
//! mh  = m / (1 - b1^t)
//! vh  = v / (1 - b2^t)
//! mb  = b1 mh + (1 - b1) g / (1 - b1^t)     (Nesterov look-ahead)
//! w   <- w - lr * mb / (sqrt(vh) + eps)
//! ```

use super::params::{LrGroup, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::DiffError;

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct NadamState<S> {
    pub first_moment: Tensor<S>,
    pub second_moment: Tensor<S>,
    pub step_count: u64,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    pub learning_rate: S,
}

/// Optimizer over every parameter of a store, with per-group learning rates.
#[derive(Debug, Clone)]
pub struct Nadam<S> {
    states: Vec<NadamState<S>>,
}

pub const NADAM_BETA1: f64 = 0.9;
pub const NADAM_BETA2: f64 = 0.999;
pub const NADAM_EPSILON: f64 = 1e-8;

impl<S: Scalar> Nadam<S> {
    pub fn new(
        store: &ParamStore<S>,
        lr_backbone: f64,
        lr_other: f64,
    ) -> Result<Self, DiffError> {
        for (name, v) in [("lr_backbone", lr_backbone), ("lr_other", lr_other)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DiffError::BadHyper(format!("{name} = {v}")));
            }
        }
        let states = store
            .iter()
            .map(|(_, p)| {
                let lr = match p.group {
                    LrGroup::Backbone => lr_backbone,
                    LrGroup::Other => lr_other,
                };
                NadamState {
                    first_moment: Tensor::zeros(p.value.shape().to_vec()),
                    second_moment: Tensor::zeros(p.value.shape().to_vec()),
                    step_count: 0,
                    beta1: S::from_f64_lit(NADAM_BETA1),
                    beta2: S::from_f64_lit(NADAM_BETA2),
                    epsilon: S::from_f64_lit(NADAM_EPSILON),
                    learning_rate: S::from_f64_lit(lr),
                }
            })
            .collect();
        Ok(Nadam { states })
    }

    pub fn state(&self, id: ParamId) -> &NadamState<S> {
        &self.states[id.0]
    }

    /// One update over all parameters from their accumulated gradients.
    /// Rejects the whole step if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<(), DiffError> {
        for (_, p) in store.iter() {
            if !p.grad.all_finite() {
                return Err(DiffError::NonFiniteGradient(p.name.clone()));
            }
        }
        for (id, p) in store.iter_mut() {
            let st = &mut self.states[id.0];
            st.step_count += 1;
            let t = st.step_count as i32;
            let b1 = st.beta1;
            let b2 = st.beta2;
            let bc1 = S::one() - b1.powi(t);
            let bc2 = S::one() - b2.powi(t);
            let m = st.first_moment.data_mut();
            let v = st.second_moment.data_mut();
            let w = p.value.data_mut();
            let g = p.grad.data();
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let m_bar = b1 * m_hat + (S::one() - b1) * gi / bc1;
                w[i] = w[i] - st.learning_rate * m_bar / (v_hat.sqrt() + st.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::graph::Graph;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(v), LrGroup::Other);
        (store, id)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut store, id) = scalar_store(1.25);
        let mut opt = Nadam::new(&store, 1e-4, 1e-3).unwrap();
        opt.step(&mut store).unwrap();
        assert_eq!(store.value(id).item(), 1.25);
    }

    #[test]
    fn single_step_matches_hand_oracle() {
        let (mut store, id) = scalar_store(0.5);
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let mut opt = Nadam::new(&store, 1e-4, 1e-3).unwrap();
        opt.step(&mut store).unwrap();

        // independent scalar walk of the documented rule, t = 1
        let (b1, b2, eps, lr, g): (f64, f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 1e-3, 1.0);
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let m_bar = b1 * m_hat + (1.0 - b1) * g / (1.0 - b1);
        let expect = 0.5 - lr * m_bar / (v_hat.sqrt() + eps);
        assert!((store.value(id).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 2)^2 from w = 0, lr = 0.1, 100 steps
        let (mut store, id) = scalar_store(0.0);
        let mut opt = Nadam::<f64>::new(&store, 0.1, 0.1).unwrap();
        for _ in 0..100 {
            store.zero_grads();
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let c = g.add_const(w, -2.0);
            let loss = g.mul(c, c).unwrap();
            g.backward(loss, &mut store).unwrap();
            opt.step(&mut store).unwrap();
        }
        assert!(
            (store.value(id).item() - 2.0).abs() < 0.1,
            "w = {}",
            store.value(id).item()
        );
    }

    #[test]
    fn non_finite_gradient_rejected_with_name() {
        let (mut store, id) = scalar_store(0.0);
        store.get_mut(id).grad = Tensor::scalar(f64::NAN);
        let mut opt = Nadam::new(&store, 1e-4, 1e-3).unwrap();
        match opt.step(&mut store) {
            Err(DiffError::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let (store, _) = scalar_store(0.0);
        assert!(Nadam::new(&store, 0.0, 1e-3).is_err());
        assert!(Nadam::new(&store, 1e-4, f64::NAN).is_err());
    }
}
