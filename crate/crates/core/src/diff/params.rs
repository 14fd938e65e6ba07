//! Named trainable parameters with persistent gradient buffers.

use super::tensor::{Scalar, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Learning-rate group a parameter belongs to (the trainer keeps a lower
/// rate for the visual-extractor stacks than for the rest of the model).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrGroup {
    Backbone,
    Other,
}

/// A named value/gradient pair. Gradients accumulate additively; callers
/// reset them explicitly between optimization steps.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub group: LrGroup,
}

/// Ordered collection of all parameters of a model set.
///
/// Insertion order is the checkpoint order, so construction must be
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>, group: LrGroup) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name `{name}`"
        );
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<S>)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Accumulate `grad` into the stored gradient of `id`.
    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<S>) {
        self.params[id.0].grad.add_assign(grad);
    }

    /// Total number of scalar components across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_start_zero_and_reset() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.add("w", Tensor::matrix(2, 2, vec![1.0; 4]), LrGroup::Other);
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
        store.accumulate_grad(id, &Tensor::matrix(2, 2, vec![0.5; 4]));
        store.accumulate_grad(id, &Tensor::matrix(2, 2, vec![0.5; 4]));
        assert!(store.get(id).grad.data().iter().all(|&g| g == 1.0));
        store.zero_grads();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    #[should_panic]
    fn duplicate_names_rejected() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("w", Tensor::scalar(1.0), LrGroup::Other);
        store.add("w", Tensor::scalar(2.0), LrGroup::Other);
    }
}
