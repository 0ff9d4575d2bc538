//! Selective state-space block (Mamba-style) and its hidden-attention view.
//!
//! Pipeline per position t, strictly causal end to end:
//!
//!   u_t    = W_in x_t + b_in                      (expansion, factor 2)
//!   c_t    = silu(conv_b + sum_k w_k ⊙ u_{t-k})   (causal depthwise conv)
//!   Δ_t    = softplus(S_Δ c_t)                    (per-channel step)
//!   B_t    = c_t S_B,  C_t = c_t S_C              (shared state maps)
//!   h_t    = exp(Δ_t ⊗ A) ⊙ h_{t-1} + (Δ_t ⊙ c_t) ⊗ B_t
//!   y_t    = ⟨C_t, h_t⟩ + D ⊙ c_t
//!   out_t  = W_out (y_t ⊙ silu(W_g x_t + b_g)) + b_out
//!
//! The state lives per channel: h_t is laid out as n x (d_inner * d_state)
//! with channel-major groups, and ⊗ marks the broadcasts that realize it.
//! Sequences are slices of per-timestep n x d tensors, so a whole node
//! batch advances through the scan together.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::ssm::{scan_states_prefix, scan_states_sequential};
use crate::tape::{softplus, Activation, Tape, TensorId};
use crate::tensor::Tensor;

/// Which execution path evaluates the state recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanPath {
    #[default]
    Sequential,
    /// Recursive-doubling inclusive scan; same outputs to rounding error.
    Prefix,
}

impl std::str::FromStr for ScanPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(ScanPath::Sequential),
            "prefix" => Ok(ScanPath::Prefix),
            other => Err(Error::Config(format!("unknown scan path `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub scan_path: ScanPath,
}

impl MambaConfig {
    pub fn new(d_model: usize, d_state: usize, d_conv: usize) -> Self {
        MambaConfig {
            d_model,
            d_state,
            d_conv,
            scan_path: ScanPath::Sequential,
        }
    }
}

/// One selective-SSM block; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct MambaBlock {
    pub cfg: MambaConfig,
    pub d_inner: usize,
    w_in: ParamId,
    b_in: ParamId,
    w_gate: ParamId,
    b_gate: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    s_b: ParamId,
    s_c: ParamId,
    s_delta_w: ParamId,
    s_delta_b: ParamId,
    a_diag: ParamId,
    d_skip: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Per-step selective quantities captured during a forward pass, used for
/// hidden-attention extraction. All values are post-activation.
#[derive(Debug, Clone)]
pub struct MambaTrace {
    /// softplus(S_Δ c_t), n x d_inner per step.
    pub delta: Vec<Tensor>,
    /// c_t S_B, n x d_state per step.
    pub b: Vec<Tensor>,
    /// c_t S_C, n x d_state per step.
    pub c: Vec<Tensor>,
}

/// Channel-aggregated attention-like influence matrix, strictly causal:
/// `matrix[i][j] = 0` for every j > i.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenAttention {
    pub len: usize,
    /// Row-major len x len scores.
    pub matrix: Vec<f64>,
}

impl HiddenAttention {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.len + j]
    }

    /// Full L x L CSV including the structural zeros above the diagonal.
    /// Values use shortest round-trip decimal form, so parsing the CSV back
    /// reproduces the matrix bit for bit.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        for i in 0..self.len {
            let row: Vec<String> = (0..self.len)
                .map(|j| format!("{}", self.at(i, j)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::randn(vec![rows, cols], std, rng)
}

fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1); y is small positive in our use.
    (y.exp() - 1.0).ln()
}

impl MambaBlock {
    pub fn new(
        cfg: MambaConfig,
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
    ) -> Result<Self> {
        if cfg.d_conv < 1 {
            return Err(Error::Config(format!(
                "d_conv {} must be >= 1",
                cfg.d_conv
            )));
        }
        if cfg.d_model < 1 || cfg.d_state < 1 {
            return Err(Error::Config(format!(
                "d_model {} and d_state {} must be >= 1",
                cfg.d_model, cfg.d_state
            )));
        }
        let d_inner = 2 * cfg.d_model;
        let m = cfg.d_state;

        let w_in = store.add(format!("{prefix}.w_in"), xavier(cfg.d_model, d_inner, rng));
        let b_in = store.add(format!("{prefix}.b_in"), Tensor::zeros(vec![d_inner]));
        let w_gate = store.add(format!("{prefix}.w_gate"), xavier(cfg.d_model, d_inner, rng));
        let b_gate = store.add(format!("{prefix}.b_gate"), Tensor::zeros(vec![d_inner]));
        let conv_std = 1.0 / (cfg.d_conv as f64).sqrt();
        let conv_w = store.add(
            format!("{prefix}.conv_w"),
            Tensor::randn(vec![cfg.d_conv, d_inner], conv_std, rng),
        );
        let conv_b = store.add(format!("{prefix}.conv_b"), Tensor::zeros(vec![d_inner]));
        let s_b = store.add(format!("{prefix}.s_b"), xavier(d_inner, m, rng));
        let s_c = store.add(format!("{prefix}.s_c"), xavier(d_inner, m, rng));
        let s_delta_w = store.add(format!("{prefix}.s_delta_w"), xavier(d_inner, d_inner, rng));
        // Step sizes start log-uniform in [1e-3, 1e-1] through the softplus.
        let delta_bias: Vec<f64> = (0..d_inner)
            .map(|_| {
                let u = (1e-3f64.ln() + rng.uniform() * (0.1f64.ln() - 1e-3f64.ln())).exp();
                softplus_inverse(u)
            })
            .collect();
        let s_delta_b = store.add(format!("{prefix}.s_delta_b"), Tensor::vector(delta_bias));
        // Stable negative diagonal, one spectrum per channel: A[ch][k] = -(k+1).
        let mut a_init = Vec::with_capacity(d_inner * m);
        for _ch in 0..d_inner {
            for k in 0..m {
                a_init.push(-((k + 1) as f64));
            }
        }
        let a_diag = store.add(format!("{prefix}.a_diag"), Tensor::vector(a_init));
        let d_skip = store.add(format!("{prefix}.d_skip"), Tensor::ones(vec![d_inner]));
        let w_out = store.add(format!("{prefix}.w_out"), xavier(d_inner, cfg.d_model, rng));
        let b_out = store.add(format!("{prefix}.b_out"), Tensor::zeros(vec![cfg.d_model]));

        Ok(MambaBlock {
            cfg,
            d_inner,
            w_in,
            b_in,
            w_gate,
            b_gate,
            conv_w,
            conv_b,
            s_b,
            s_c,
            s_delta_w,
            s_delta_b,
            a_diag,
            d_skip,
            w_out,
            b_out,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: &[TensorId],
    ) -> Result<Vec<TensorId>> {
        self.forward_with_trace(tape, store, xs).map(|(ys, _)| ys)
    }

    /// Forward pass that also returns the selective quantities per step.
    pub fn forward_with_trace(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: &[TensorId],
    ) -> Result<(Vec<TensorId>, MambaTrace)> {
        if xs.is_empty() {
            return Err(Error::Contract("empty input sequence".into()));
        }
        let m = self.cfg.d_state;
        let d_inner = self.d_inner;
        for &x in xs {
            let shape = tape.value(x).shape();
            if shape.len() != 2 || shape[1] != self.cfg.d_model {
                return Err(Error::Dimension(format!(
                    "sequence step shape {:?}, expected [n, {}]",
                    shape, self.cfg.d_model
                )));
            }
        }

        let w_in = store.mount(tape, self.w_in);
        let b_in = store.mount(tape, self.b_in);
        let w_gate = store.mount(tape, self.w_gate);
        let b_gate = store.mount(tape, self.b_gate);
        let conv_w = store.mount(tape, self.conv_w);
        let conv_b = store.mount(tape, self.conv_b);
        let s_b = store.mount(tape, self.s_b);
        let s_c = store.mount(tape, self.s_c);
        let s_delta_w = store.mount(tape, self.s_delta_w);
        let s_delta_b = store.mount(tape, self.s_delta_b);
        let a_diag = store.mount(tape, self.a_diag);
        let d_skip = store.mount(tape, self.d_skip);
        let w_out = store.mount(tape, self.w_out);
        let b_out = store.mount(tape, self.b_out);

        // Depthwise kernel rows, extracted once.
        let conv_rows: Vec<TensorId> = (0..self.cfg.d_conv)
            .map(|k| {
                let row = tape.gather_rows(conv_w, &[k])?;
                tape.reshape(row, vec![d_inner])
            })
            .collect::<Result<Vec<_>>>()?;

        // Expansion, causal conv, and selective projections per step.
        let expanded: Vec<TensorId> = xs
            .iter()
            .map(|&x| tape.linear(x, w_in, b_in))
            .collect::<Result<Vec<_>>>()?;

        let mut xhat = Vec::with_capacity(xs.len());
        let mut deltas = Vec::with_capacity(xs.len());
        let mut bs = Vec::with_capacity(xs.len());
        let mut cs = Vec::with_capacity(xs.len());
        let mut coeffs = Vec::with_capacity(xs.len());
        let mut adds = Vec::with_capacity(xs.len());

        for t in 0..xs.len() {
            let mut acc: Option<TensorId> = None;
            for k in 0..self.cfg.d_conv.min(t + 1) {
                let term = tape.mul_row_broadcast(expanded[t - k], conv_rows[k])?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => tape.add(prev, term)?,
                });
            }
            let conv = tape.add_row_broadcast(acc.expect("d_conv >= 1"), conv_b)?;
            let c_t = tape.activation(conv, Activation::Silu);
            xhat.push(c_t);

            let delta_pre = tape.linear(c_t, s_delta_w, s_delta_b)?;
            let delta = tape.activation(delta_pre, Activation::Softplus);
            let b_t = tape.matmul(c_t, s_b)?;
            let c_sel = tape.matmul(c_t, s_c)?;
            deltas.push(delta);
            bs.push(b_t);
            cs.push(c_sel);

            // coeff = exp(Δ ⊗ A), add = (Δ ⊙ c) ⊗ B, in channel-major layout.
            let delta_rep = tape.repeat_cols_interleave(delta, m)?;
            let da = tape.mul_row_broadcast(delta_rep, a_diag)?;
            coeffs.push(tape.activation(da, Activation::Exp));
            let dx = tape.mul(delta, c_t)?;
            let dx_rep = tape.repeat_cols_interleave(dx, m)?;
            let b_tiled = tape.tile_cols(b_t, d_inner)?;
            adds.push(tape.mul(dx_rep, b_tiled)?);
        }

        let states = match self.cfg.scan_path {
            ScanPath::Sequential => scan_states_sequential(tape, &coeffs, &adds)?,
            ScanPath::Prefix => scan_states_prefix(tape, &coeffs, &adds)?,
        };

        let mut outputs = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let c_tiled = tape.tile_cols(cs[t], d_inner)?;
            let weighted = tape.mul(states[t], c_tiled)?;
            let contracted = tape.sum_col_groups(weighted, m)?;
            let skip = tape.mul_row_broadcast(xhat[t], d_skip)?;
            let y = tape.add(contracted, skip)?;
            let gate_pre = tape.linear(xs[t], w_gate, b_gate)?;
            let gate = tape.activation(gate_pre, Activation::Silu);
            let gated = tape.mul(y, gate)?;
            outputs.push(tape.linear(gated, w_out, b_out)?);
        }

        let trace = MambaTrace {
            delta: deltas.iter().map(|&id| tape.value(id).clone()).collect(),
            b: bs.iter().map(|&id| tape.value(id).clone()).collect(),
            c: cs.iter().map(|&id| tape.value(id).clone()).collect(),
        };
        Ok((outputs, trace))
    }

    /// Attention-like influence scores reconstructed from the selective
    /// scan: for i >= j,
    ///
    ///   score(i, j, row, ch) = sum_k C_i[k] · exp((S_i - S_j)[ch] · A[ch][k])
    ///                                 · Δ_j[ch] · B_j[k]
    ///
    /// with S the cumulative sum of Δ over steps. Scores are aggregated
    /// over batch rows and model channels by mean absolute value; entries
    /// above the diagonal stay exactly zero.
    pub fn hidden_attention(
        &self,
        store: &ParamStore,
        xs: &[Tensor],
    ) -> Result<HiddenAttention> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let (_, trace) = self.forward_with_trace(&mut tape, store, &ids)?;
        self.hidden_attention_from_trace(store, &trace)
    }

    pub fn hidden_attention_from_trace(
        &self,
        store: &ParamStore,
        trace: &MambaTrace,
    ) -> Result<HiddenAttention> {
        let len = trace.delta.len();
        let n = trace.delta[0].shape()[0];
        let d_inner = self.d_inner;
        let m = self.cfg.d_state;
        let a = &store.get(self.a_diag).value; // flattened d_inner x m

        // Cumulative Δ sums per row/channel: cum[t] has n x d_inner entries.
        let mut cum = vec![vec![0.0; n * d_inner]; len + 1];
        for t in 0..len {
            let d = trace.delta[t].data();
            for idx in 0..n * d_inner {
                cum[t + 1][idx] = cum[t][idx] + d[idx];
            }
        }

        let mut matrix = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..=i {
                let mut abs_sum = 0.0;
                for row in 0..n {
                    for ch in 0..d_inner {
                        // sum over Δ_{j+1..i} for this row/channel
                        let span = cum[i + 1][row * d_inner + ch]
                            - cum[j + 1][row * d_inner + ch];
                        let delta_j = trace.delta[j].at(row, ch);
                        let mut score = 0.0;
                        for k in 0..m {
                            let h = (span * a.data()[ch * m + k]).exp();
                            score += trace.c[i].at(row, k) * h * delta_j * trace.b[j].at(row, k);
                        }
                        abs_sum += score.abs();
                    }
                }
                matrix[i * len + j] = abs_sum / (n * d_inner) as f64;
            }
        }
        Ok(HiddenAttention { len, matrix })
    }
}

/// Softplus-positive step from a raw value, exposed for tests that build
/// trace-level oracles.
pub fn positive_step(raw: f64) -> f64 {
    softplus(raw)
}
