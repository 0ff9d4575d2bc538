//! Named trainable parameters and their tape bindings.
//!
//! Layers allocate parameters into a [`ParamStore`] at construction and keep
//! [`ParamId`] handles. During a forward pass a parameter is mounted onto the
//! tape at most once, so weight sharing across timestamps accumulates
//! gradients correctly. After `Tape::backward`, [`ParamStore::apply_gradients`]
//! writes a gradient into every parameter; parameters that never reached the
//! loss get exact zeros.

use crate::tape::{Gradients, Tape, TensorId};
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// A named tensor with a gradient accumulator of the same shape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor) -> ParamId {
        value.requires_grad = true;
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Mount a parameter on the tape, reusing an existing binding if this
    /// parameter was already mounted during the current forward pass.
    pub fn mount(&self, tape: &mut Tape, id: ParamId) -> TensorId {
        if let Some(tid) = tape.mount_of(id.0) {
            return tid;
        }
        let tid = tape.leaf(&self.params[id.0].value);
        tape.note_mount(id.0, tid);
        tid
    }

    /// Populate `grad` on every parameter from a completed backward pass.
    /// Unmounted or unreached parameters receive zeros.
    pub fn apply_gradients(&mut self, tape: &Tape, grads: &Gradients) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape().to_vec());
        }
        for &(pidx, tid) in tape.mounts() {
            if let Some(g) = grads.get(tid) {
                let target = &mut self.params[pidx].grad;
                for (tv, gv) in target.data_mut().iter_mut().zip(g.data()) {
                    *tv += gv;
                }
            }
        }
    }

    /// Snapshot of all parameter values, used for best-epoch restore.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value = s.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn mount_is_cached_within_one_tape() {
        let mut store = ParamStore::new();
        let p = store.add("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let a = store.mount(&mut tape, p);
        let b = store.mount(&mut tape, p);
        assert_eq!(a, b);
    }

    #[test]
    fn shared_parameter_accumulates_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("w", Tensor::vector(vec![2.0]));
        let mut tape = Tape::new();
        let w = store.mount(&mut tape, p);
        // loss = w + w*w  =>  dloss/dw = 1 + 2w = 5
        let sq = tape.mul(w, w).unwrap();
        let s = tape.add(w, sq).unwrap();
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        store.apply_gradients(&tape, &grads);
        assert_eq!(store.get(p).grad.data(), &[5.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("a", Tensor::vector(vec![1.0]));
        let unused = store.add("b", Tensor::vector(vec![1.0]));
        let mut tape = Tape::new();
        let a = store.mount(&mut tape, used);
        let _b = store.mount(&mut tape, unused);
        let loss = tape.sum_all(a);
        let grads = tape.backward(loss).unwrap();
        store.apply_gradients(&tape, &grads);
        assert_eq!(store.get(unused).grad.data(), &[0.0]);
        assert_eq!(store.get(used).grad.data(), &[1.0]);
    }
}
