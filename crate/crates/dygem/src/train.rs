//! Adam optimization and the epoch loop: per training timestamp, forward,
//! resample triplets, accumulate the contrastive loss, and step; validation
//! loss drives early stopping with best-weight restore.

use crate::error::{Error, Result};
use crate::graph::{sample_triplets, TemporalGraph, TripletSet};
use crate::loss::triplet_loss_on_tape;
use crate::models::EmbedModel;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: usize,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let m = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        let v = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m,
            v,
            step_count: 0,
        }
    }

    /// One update from the gradients currently stored on the parameters.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (slot, pid) in ids.into_iter().enumerate() {
            let param = store.get_mut(pid);
            let n = param.value.numel();
            for i in 0..n {
                let g = param.grad.data()[i] + self.weight_decay * param.value.data()[i];
                let m = &mut self.m[slot].data_mut()[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[slot].data_mut()[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                param.value.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-epoch losses and the early-stopping outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) at which patience ran out, if it did.
    pub early_stop_epoch: Option<usize>,
    /// Epoch whose weights were restored at the end.
    pub best_epoch: usize,
}

impl TrainingHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

// Stream tags for derived RNGs.
const STREAM_TRIPLETS: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_VAL: u64 = 3;

fn epoch_stream(root: &Rng, stream: u64, epoch: usize, t: usize) -> Rng {
    root.derive(stream).derive(epoch as u64).derive(t as u64)
}

/// Validation triplets are fixed across epochs so the early-stopping signal
/// compares like with like.
fn val_triplets(root: &Rng, g: &TemporalGraph, k_near: usize, t: usize) -> Result<TripletSet> {
    let mut rng = root.derive(STREAM_VAL).derive(t as u64);
    sample_triplets(g.snapshot(t), g.n, k_near, &mut rng)
}

/// Train in place; returns the loss history. The model ends with the
/// weights of its best validation epoch.
pub fn train(model: &mut EmbedModel, g: &TemporalGraph) -> Result<TrainingHistory> {
    let cfg = model.cfg.clone();
    cfg.validate()?;
    if g.n != cfg.n {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, config says {}",
            g.n, cfg.n
        )));
    }
    if g.timestamps() < 5 {
        return Err(Error::Data(format!(
            "need at least 5 timestamps to train, got {}",
            g.timestamps()
        )));
    }
    if cfg.lookback >= g.train_end {
        return Err(Error::Data(format!(
            "lookback {} leaves no training timestamps before {}",
            cfg.lookback, g.train_end
        )));
    }

    let root = Rng::seed(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut history = TrainingHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        early_stop_epoch: None,
        best_epoch: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_weights = model.store.snapshot();
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let mut train_loss = 0.0;
        for t in cfg.lookback..g.train_end {
            let mut trip_rng = epoch_stream(&root, STREAM_TRIPLETS, epoch, t);
            let triplets = sample_triplets(g.snapshot(t), g.n, cfg.k_near, &mut trip_rng)?;
            if triplets.is_empty() {
                continue;
            }
            let mut drop_rng = epoch_stream(&root, STREAM_DROPOUT, epoch, t);
            let mut tape = Tape::new();
            let (mu, sigma) = model.forward(&mut tape, g, t, true, &mut drop_rng)?;
            let loss_id = triplet_loss_on_tape(&mut tape, mu, sigma, &triplets)?;
            let loss = tape.value(loss_id).data()[0];
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    timestamp: t,
                    message: format!("non-finite loss {loss}"),
                });
            }
            train_loss += loss;
            let grads = tape.backward(loss_id)?;
            model.store.apply_gradients(&tape, &grads);
            adam.step(&mut model.store);
        }

        let mut val_loss = 0.0;
        for t in g.val_range() {
            if t < cfg.lookback {
                continue;
            }
            let triplets = val_triplets(&root, g, cfg.k_near, t)?;
            if triplets.is_empty() {
                continue;
            }
            let mut rng = Rng::seed(0);
            let mut tape = Tape::new();
            let (mu, sigma) = model.forward(&mut tape, g, t, false, &mut rng)?;
            let loss_id = triplet_loss_on_tape(&mut tape, mu, sigma, &triplets)?;
            let loss = tape.value(loss_id).data()[0];
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    timestamp: t,
                    message: format!("non-finite validation loss {loss}"),
                });
            }
            val_loss += loss;
        }

        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);

        if val_loss < best_val {
            best_val = val_loss;
            best_weights = model.store.snapshot();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.early_stop_epoch = Some(epoch);
                break;
            }
        }
    }

    model.store.restore(&best_weights);
    Ok(history)
}
