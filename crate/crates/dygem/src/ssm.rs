//! Discrete state-space models: the linear time-invariant recurrence, its
//! equivalent convolution-kernel form, and linear-recurrence scans.
//!
//!   state:  h_t = Abar ⊙ h_{t-1} + Bbar x_t
//!   output: y_t = C h_t + D ⊙ x_t
//!
//! with a diagonal state matrix. Discretization uses zero-order hold on A
//! (`Abar = exp(Δ·A)`) and the Euler rule on B (`Bbar = Δ·B`). The same
//! recurrence admits a causal convolution by the kernel `K[k] = C·Abar^k·Bbar`,
//! which the tests exploit as an independent oracle for the scan.

use crate::error::{Error, Result};
use crate::tape::{Activation, Tape, TensorId};
use crate::tensor::Tensor;

/// Parameters of one linear time-invariant SSM.
///
/// Selective (input-dependent) systems are a different type entirely
/// ([`crate::mamba::MambaBlock`]); a convolution kernel only exists here,
/// where B, C and Δ are fixed across time.
#[derive(Debug, Clone)]
pub struct SsmParams {
    /// Diagonal of the continuous state matrix, length m.
    pub a_diag: Tensor,
    /// Input map, m x d_in.
    pub b: Tensor,
    /// Output map, d_out x m.
    pub c: Tensor,
    /// Per-channel skip, length d_in.
    pub d: Tensor,
    /// Positive step size.
    pub delta: f64,
}

impl SsmParams {
    pub fn state_size(&self) -> usize {
        self.a_diag.numel()
    }

    pub fn d_in(&self) -> usize {
        self.b.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.c.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.state_size();
        if self.b.rank() != 2 || self.b.shape()[0] != m {
            return Err(Error::Dimension(format!(
                "B shape {:?} incompatible with state size {m}",
                self.b.shape()
            )));
        }
        if self.c.rank() != 2 || self.c.shape()[1] != m {
            return Err(Error::Dimension(format!(
                "C shape {:?} incompatible with state size {m}",
                self.c.shape()
            )));
        }
        if self.d.numel() != self.d_in() {
            return Err(Error::Dimension(format!(
                "D length {} != d_in {}",
                self.d.numel(),
                self.d_in()
            )));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Contract(format!("delta {} must be > 0", self.delta)));
        }
        Ok(())
    }
}

/// Zero-order hold on the diagonal state matrix, Euler on the input map.
pub fn discretize(a_diag: &[f64], b: &Tensor, delta: f64) -> Result<(Vec<f64>, Tensor)> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Contract(format!("delta {delta} must be > 0")));
    }
    let a_bar = a_diag.iter().map(|&a| (delta * a).exp()).collect();
    let b_bar = Tensor::from_vec(
        b.shape().to_vec(),
        b.data().iter().map(|&x| delta * x).collect(),
    )?;
    Ok((a_bar, b_bar))
}

/// Differentiable sequential evaluation of the recurrence with h_0 = 0.
/// Returns the L x d_out output sequence. Requires d_out == d_in so the
/// skip term D ⊙ x_t is well-formed.
pub fn ssm_scan_recurrent(tape: &mut Tape, p: &SsmParams, x_seq: &Tensor) -> Result<TensorId> {
    p.validate()?;
    let (m, d_in, d_out) = (p.state_size(), p.d_in(), p.d_out());
    if x_seq.rank() != 2 || x_seq.shape()[1] != d_in {
        return Err(Error::Dimension(format!(
            "input sequence {:?} vs d_in {d_in}",
            x_seq.shape()
        )));
    }
    if d_out != d_in {
        return Err(Error::Dimension(format!(
            "skip term needs d_out == d_in, got {d_out} vs {d_in}"
        )));
    }
    let len = x_seq.shape()[0];

    let a_id = tape.leaf(&p.a_diag);
    let b_id = tape.leaf(&p.b);
    let c_id = tape.leaf(&p.c);
    let d_id = tape.leaf(&p.d);
    let x_id = tape.leaf(x_seq);

    // Abar = exp(delta * A), Bbar = delta * B, on the tape.
    let a_scaled = tape.scale(a_id, p.delta);
    let a_bar = tape.activation(a_scaled, Activation::Exp);
    let b_bar = tape.scale(b_id, p.delta);
    let b_bar_t = tape.transpose(b_bar)?; // d_in x m
    let c_t = tape.transpose(c_id)?; // m x d_out

    let mut h = tape.constant(Tensor::zeros(vec![1, m]));
    let mut outputs = Vec::with_capacity(len);
    for t in 0..len {
        let x_t = tape.gather_rows(x_id, &[t])?; // 1 x d_in
        let bx = tape.matmul(x_t, b_bar_t)?; // 1 x m
        let ah = tape.mul_row_broadcast(h, a_bar)?;
        h = tape.add(ah, bx)?;
        let ch = tape.matmul(h, c_t)?; // 1 x d_out
        let skip = tape.mul_row_broadcast(x_t, d_id)?;
        outputs.push(tape.add(ch, skip)?);
    }
    tape.concat_rows(&outputs)
}

/// K[k] = C · Abar^k · Bbar for k in 0..len, each d_out x d_in.
pub fn ssm_conv_kernel(a_bar: &[f64], b_bar: &Tensor, c: &Tensor, len: usize) -> Result<Vec<Tensor>> {
    let m = a_bar.len();
    let (bm, d_in) = (b_bar.shape()[0], b_bar.shape()[1]);
    let (d_out, cm) = (c.shape()[0], c.shape()[1]);
    if bm != m || cm != m {
        return Err(Error::Dimension(format!(
            "kernel factors disagree on state size: |A|={m}, B {:?}, C {:?}",
            b_bar.shape(),
            c.shape()
        )));
    }
    let mut kernel = Vec::with_capacity(len);
    // powered = Abar^k · Bbar, advanced by scaling rows with the diagonal.
    let mut powered = b_bar.data().to_vec();
    for _ in 0..len {
        let tap = crate::tensor::matmul_raw(c.data(), &powered, d_out, m, d_in);
        kernel.push(Tensor::from_vec(vec![d_out, d_in], tap)?);
        for (row, &a) in a_bar.iter().enumerate() {
            for v in &mut powered[row * d_in..(row + 1) * d_in] {
                *v *= a;
            }
        }
    }
    Ok(kernel)
}

/// Causal convolution y_t = sum_{k=0..t} K[k] x_{t-k} + D ⊙ x_t, value-level.
pub fn apply_conv_kernel(kernel: &[Tensor], x_seq: &Tensor, d_skip: &[f64]) -> Result<Tensor> {
    let len = x_seq.shape()[0];
    let d_in = x_seq.shape()[1];
    let d_out = kernel
        .first()
        .ok_or_else(|| Error::Contract("empty kernel".into()))?
        .shape()[0];
    if kernel.len() < len {
        return Err(Error::Contract(format!(
            "kernel length {} shorter than sequence {len}",
            kernel.len()
        )));
    }
    let mut out = vec![0.0; len * d_out];
    for t in 0..len {
        for k in 0..=t {
            let tap = &kernel[k];
            let x_row = &x_seq.data()[(t - k) * d_in..(t - k + 1) * d_in];
            for o in 0..d_out {
                let mut s = 0.0;
                for i in 0..d_in {
                    s += tap.at(o, i) * x_row[i];
                }
                out[t * d_out + o] += s;
            }
        }
        for (i, &dv) in d_skip.iter().enumerate() {
            out[t * d_out + i] += dv * x_seq.at(t, i);
        }
    }
    Tensor::from_vec(vec![len, d_out], out)
}

// ── Linear-recurrence scans over tape tensors ───────────────────────

/// h_t = coeff_t ⊙ h_{t-1} + add_t with h_0 = 0, evaluated step by step.
pub fn scan_states_sequential(
    tape: &mut Tape,
    coeffs: &[TensorId],
    adds: &[TensorId],
) -> Result<Vec<TensorId>> {
    if coeffs.len() != adds.len() {
        return Err(Error::Contract(format!(
            "scan lengths differ: {} coeffs vs {} adds",
            coeffs.len(),
            adds.len()
        )));
    }
    let mut states = Vec::with_capacity(adds.len());
    let mut h: Option<TensorId> = None;
    for (&a, &b) in coeffs.iter().zip(adds) {
        h = Some(match h {
            None => b, // a ⊙ 0 + b
            Some(prev) => {
                let ah = tape.mul(a, prev)?;
                tape.add(ah, b)?
            }
        });
        states.push(h.unwrap());
    }
    Ok(states)
}

/// Same recurrence solved by an inclusive parallel-style scan (recursive
/// doubling) with a fixed combine order, so results are deterministic and
/// agree with the sequential path to rounding error. The composition rule
/// for (a, b) pairs representing h -> a ⊙ h + b is
/// (a2, b2) ∘ (a1, b1) = (a2 ⊙ a1, a2 ⊙ b1 + b2).
pub fn scan_states_prefix(
    tape: &mut Tape,
    coeffs: &[TensorId],
    adds: &[TensorId],
) -> Result<Vec<TensorId>> {
    if coeffs.len() != adds.len() {
        return Err(Error::Contract(format!(
            "scan lengths differ: {} coeffs vs {} adds",
            coeffs.len(),
            adds.len()
        )));
    }
    let len = adds.len();
    let mut a: Vec<TensorId> = coeffs.to_vec();
    let mut b: Vec<TensorId> = adds.to_vec();
    let mut stride = 1;
    while stride < len {
        let (pa, pb) = (a.clone(), b.clone());
        for i in stride..len {
            let na = tape.mul(pa[i], pa[i - stride])?;
            let ab = tape.mul(pa[i], pb[i - stride])?;
            let nb = tape.add(ab, pb[i])?;
            a[i] = na;
            b[i] = nb;
        }
        stride *= 2;
    }
    // h_0 = 0 makes the accumulated coefficient irrelevant: h_t = b_t.
    Ok(b)
}
