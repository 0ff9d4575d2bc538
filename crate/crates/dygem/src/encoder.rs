//! Single-head transformer encoder over the temporal axis, plus sinusoidal
//! positional encoding and the learnable point-wise temporal combination.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Activation, Tape, TensorId};
use crate::tensor::Tensor;

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::randn(vec![rows, cols], std, rng)
}

/// `PE[pos][2i] = sin(pos / 10000^{2i/d})`, `PE[pos][2i+1] = cos(...)`.
/// The model width must be even.
pub fn positional_encoding(len: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {d}"
        )));
    }
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = (pos as f64 * rate).sin();
            data[pos * d + 2 * i + 1] = (pos as f64 * rate).cos();
        }
    }
    Tensor::from_vec(vec![len, d], data)
}

/// Row-wise softmax composed from primitives; the row maxima are detached
/// constants, which leaves both values and gradients unchanged.
pub fn softmax_rows(tape: &mut Tape, x: TensorId) -> Result<TensorId> {
    let v = tape.value(x);
    let (rows, cols) = v.dims2()?;
    let mut neg_max = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut m = f64::NEG_INFINITY;
        for j in 0..cols {
            m = m.max(v.at(i, j));
        }
        neg_max.push(-m);
    }
    let shift = tape.constant(Tensor::vector(neg_max));
    let centered = tape.add_col_broadcast(x, shift)?;
    let expd = tape.activation(centered, Activation::Exp);
    let sums = tape.reduce_sum(expd, 1)?;
    let inv = tape.powf(sums, -1.0);
    tape.mul_col_broadcast(expd, inv)
}

/// Per-row layer normalization with learnable gain and shift.
pub fn layer_norm_rows(
    tape: &mut Tape,
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    eps: f64,
) -> Result<TensorId> {
    let mean = tape.reduce_mean(x, 1)?;
    let neg_mean = tape.scale(mean, -1.0);
    let centered = tape.add_col_broadcast(x, neg_mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.reduce_mean(sq, 1)?;
    let var_eps = tape.add_scalar(var, eps);
    let inv_std = tape.powf(var_eps, -0.5);
    let normed = tape.mul_col_broadcast(centered, inv_std)?;
    let scaled = tape.mul_row_broadcast(normed, gamma)?;
    tape.add_row_broadcast(scaled, beta)
}

/// Transformer encoder block with single-head attention and a two-layer
/// feed-forward (width 2d). Residual ordering is post-norm by default.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub d: usize,
    pub d_ff: usize,
    /// Normalize before the sublayers instead of after the residual adds.
    pub pre_norm: bool,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
}

const LN_EPS: f64 = 1e-5;

impl EncoderBlock {
    pub fn new(d: usize, store: &mut ParamStore, rng: &mut Rng, name: &str) -> Self {
        let d_ff = 2 * d;
        EncoderBlock {
            d,
            d_ff,
            pre_norm: false,
            wq: store.add(format!("{name}.wq"), xavier(d, d, rng)),
            wk: store.add(format!("{name}.wk"), xavier(d, d, rng)),
            wv: store.add(format!("{name}.wv"), xavier(d, d, rng)),
            ff_w1: store.add(format!("{name}.ff_w1"), xavier(d, d_ff, rng)),
            ff_b1: store.add(format!("{name}.ff_b1"), Tensor::zeros(vec![d_ff])),
            ff_w2: store.add(format!("{name}.ff_w2"), xavier(d_ff, d, rng)),
            ff_b2: store.add(format!("{name}.ff_b2"), Tensor::zeros(vec![d])),
            ln1_gamma: store.add(format!("{name}.ln1_gamma"), Tensor::ones(vec![d])),
            ln1_beta: store.add(format!("{name}.ln1_beta"), Tensor::zeros(vec![d])),
            ln2_gamma: store.add(format!("{name}.ln2_gamma"), Tensor::ones(vec![d])),
            ln2_beta: store.add(format!("{name}.ln2_beta"), Tensor::zeros(vec![d])),
        }
    }

    /// softmax(QKᵀ/√d)V with full (non-causal) attention. Returns the
    /// output and the L x L attention matrix.
    pub fn attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let wq = store.mount(tape, self.wq);
        let wk = store.mount(tape, self.wk);
        let wv = store.mount(tape, self.wv);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, 1.0 / (self.d as f64).sqrt());
        let attn = softmax_rows(tape, scaled)?;
        let out = tape.matmul(attn, v)?;
        Ok((out, attn))
    }

    /// Full block: attention + residual + norm, feed-forward + residual +
    /// norm. Positional encoding is the caller's responsibility.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId> {
        self.forward_with_attention(tape, store, x).map(|(y, _)| y)
    }

    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let g1 = store.mount(tape, self.ln1_gamma);
        let b1 = store.mount(tape, self.ln1_beta);
        let g2 = store.mount(tape, self.ln2_gamma);
        let b2 = store.mount(tape, self.ln2_beta);

        let (x1, attn) = if self.pre_norm {
            let normed = layer_norm_rows(tape, x, g1, b1, LN_EPS)?;
            let (a, attn) = self.attention(tape, store, normed)?;
            (tape.add(x, a)?, attn)
        } else {
            let (a, attn) = self.attention(tape, store, x)?;
            let res = tape.add(x, a)?;
            (layer_norm_rows(tape, res, g1, b1, LN_EPS)?, attn)
        };

        let out = if self.pre_norm {
            let normed = layer_norm_rows(tape, x1, g2, b2, LN_EPS)?;
            let f = self.feed_forward(tape, store, normed)?;
            tape.add(x1, f)?
        } else {
            let f = self.feed_forward(tape, store, x1)?;
            let res = tape.add(x1, f)?;
            layer_norm_rows(tape, res, g2, b2, LN_EPS)?
        };
        Ok((out, attn))
    }

    fn feed_forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let w1 = store.mount(tape, self.ff_w1);
        let b1 = store.mount(tape, self.ff_b1);
        let w2 = store.mount(tape, self.ff_w2);
        let b2 = store.mount(tape, self.ff_b2);
        let h = tape.linear(x, w1, b1)?;
        let h = tape.activation(h, Activation::Relu);
        tape.linear(h, w2, b2)
    }
}

/// Learnable scalar weight per time position with a feature-wise bias:
/// `combine(H) = tanh(w H + b)` where w is 1 x L.
#[derive(Debug, Clone)]
pub struct PointwiseTemporalConv {
    pub len: usize,
    pub d: usize,
    weights: ParamId,
    bias: ParamId,
}

impl PointwiseTemporalConv {
    pub fn new(len: usize, d: usize, store: &mut ParamStore, name: &str) -> Self {
        // Uniform averaging start.
        let w = Tensor::from_vec(vec![1, len], vec![1.0 / len as f64; len]).unwrap();
        PointwiseTemporalConv {
            len,
            d,
            weights: store.add(format!("{name}.weights"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![d])),
        }
    }

    /// `h` is L x d; the result is the combined 1 x d vector.
    pub fn combine(&self, tape: &mut Tape, store: &ParamStore, h: TensorId) -> Result<TensorId> {
        let shape = tape.value(h).shape().to_vec();
        if shape.len() != 2 || shape[0] != self.len || shape[1] != self.d {
            return Err(Error::Dimension(format!(
                "pointwise combine expects [{}, {}], got {:?}",
                self.len, self.d, shape
            )));
        }
        let w = store.mount(tape, self.weights);
        let b = store.mount(tape, self.bias);
        let mixed = tape.matmul(w, h)?; // 1 x d
        let shifted = tape.add_row_broadcast(mixed, b)?;
        Ok(tape.activation(shifted, Activation::Tanh))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_fixed_values() {
        let pe = positional_encoding(3, 4).unwrap();
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 2), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
        assert_eq!(pe.at(0, 3), 1.0);
        assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(1, 0) - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn positional_encoding_rejects_odd_width() {
        assert!(matches!(
            positional_encoding(4, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attention_single_token_returns_value_row() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(0);
        let block = EncoderBlock::new(4, &mut store, &mut rng, "enc");
        let mut tape = Tape::new();
        let x_val = Tensor::randn(vec![1, 4], 1.0, &mut rng);
        let x = tape.constant(x_val.clone());
        let (out, attn) = block.attention(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(attn).data(), &[1.0]);
        // out = V row exactly
        let wv = store.get(block.wv).value.clone();
        let mut tape2 = Tape::new();
        let x2 = tape2.constant(x_val);
        let wv2 = tape2.constant(wv);
        let v = tape2.matmul(x2, wv2).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape2.value(v).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_identical_keys_average_values() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(1);
        let block = EncoderBlock::new(2, &mut store, &mut rng, "enc");
        let mut tape = Tape::new();
        // Identical rows -> identical keys -> uniform attention.
        let x = tape.constant(
            Tensor::matrix(3, 2, vec![0.5, -0.2, 0.5, -0.2, 0.5, -0.2]).unwrap(),
        );
        let (_, attn) = block.attention(&mut tape, &store, x).unwrap();
        for v in tape.value(attn).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_hand_rolled_oracle() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(2);
        let block = EncoderBlock::new(3, &mut store, &mut rng, "enc");
        let x_val = Tensor::randn(vec![3, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let (out, _) = block.attention(&mut tape, &store, x).unwrap();

        // Direct softmax(QK^T/sqrt(d))V with raw loops.
        let d = 3usize;
        let get = |p: ParamId| store.get(p).value.clone();
        let (wq, wk, wv) = (get(block.wq), get(block.wk), get(block.wv));
        let mm = |a: &Tensor, b: &Tensor, m: usize, k: usize, n: usize| {
            crate::tensor::matmul_raw(a.data(), b.data(), m, k, n)
        };
        let q = mm(&x_val, &wq, 3, d, d);
        let k = mm(&x_val, &wk, 3, d, d);
        let v = mm(&x_val, &wv, 3, d, d);
        let mut expect = vec![0.0; 3 * d];
        for i in 0..3 {
            let mut scores = [0.0; 3];
            for j in 0..3 {
                let mut s = 0.0;
                for c in 0..d {
                    s += q[i * d + c] * k[j * d + c];
                }
                scores[j] = s / (d as f64).sqrt();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += exps[j] / z * v[j * d + c];
                }
                expect[i * d + c] = acc;
            }
        }
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_probability_vectors() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(3);
        let block = EncoderBlock::new(4, &mut store, &mut rng, "enc");
        for trial in 0..20 {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::randn(vec![5, 4], 2.0, &mut rng));
            let (_, attn) = block.attention(&mut tape, &store, x).unwrap();
            let a = tape.value(attn);
            for i in 0..5 {
                let mut sum = 0.0;
                for j in 0..5 {
                    let v = a.at(i, j);
                    assert!(v >= 0.0, "trial {trial}: negative attention");
                    sum += v;
                }
                assert!((sum - 1.0).abs() < 1e-12, "trial {trial}: row sum {sum}");
            }
        }
    }

    #[test]
    fn attention_is_position_equivariant_before_pe() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(4);
        let block = EncoderBlock::new(3, &mut store, &mut rng, "enc");
        let x_val = Tensor::randn(vec![4, 3], 1.0, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let mut x_perm = vec![0.0; 12];
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..3 {
                x_perm[i * 3 + j] = x_val.at(p, j);
            }
        }
        let x_perm = Tensor::from_vec(vec![4, 3], x_perm).unwrap();

        let mut t1 = Tape::new();
        let a = t1.constant(x_val);
        let (o1, _) = block.attention(&mut t1, &store, a).unwrap();
        let mut t2 = Tape::new();
        let b = t2.constant(x_perm);
        let (o2, _) = block.attention(&mut t2, &store, b).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..3 {
                assert!(
                    (t2.value(o2).at(i, j) - t1.value(o1).at(p, j)).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn encoder_preserves_shape_and_zero_weights_reduce_to_norms() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(5);
        let block = EncoderBlock::new(4, &mut store, &mut rng, "enc");
        // Zero out attention and FFN weights: the block becomes
        // LN2(LN1(x + 0) + 0) = LN2(LN1(x)).
        for pid in [block.wq, block.wk, block.wv, block.ff_w1, block.ff_w2] {
            let shape = store.get(pid).value.shape().to_vec();
            store.get_mut(pid).value = Tensor::zeros(shape).with_grad();
        }
        let x_val = Tensor::randn(vec![3, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let y = block.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[3, 4]);

        let g1 = store.mount(&mut tape, block.ln1_gamma);
        let b1 = store.mount(&mut tape, block.ln1_beta);
        let g2 = store.mount(&mut tape, block.ln2_gamma);
        let b2 = store.mount(&mut tape, block.ln2_beta);
        let x2 = tape.constant(x_val);
        let n1 = layer_norm_rows(&mut tape, x2, g1, b1, LN_EPS).unwrap();
        let n2 = layer_norm_rows(&mut tape, n1, g2, b2, LN_EPS).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(n2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_gradients_pass_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(6);
        let block = EncoderBlock::new(3, &mut store, &mut rng, "enc");
        let x_val = Tensor::randn(vec![3, 3], 0.7, &mut rng);

        let eval = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone());
            let y = block.forward(&mut tape, store, x).unwrap();
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.sum_all(sq);
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let y = block.forward(&mut tape, &store, x).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        store.apply_gradients(&tape, &grads);

        let step = 1e-5;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for pid in ids {
            let numel = store.get(pid).value.numel();
            for i in (0..numel).step_by((numel / 4).max(1)) {
                let orig = store.get(pid).value.data()[i];
                store.get_mut(pid).value.data_mut()[i] = orig + step;
                let hi = eval(&store);
                store.get_mut(pid).value.data_mut()[i] = orig - step;
                let lo = eval(&store);
                store.get_mut(pid).value.data_mut()[i] = orig;
                let num = (hi - lo) / (2.0 * step);
                let ana = store.get(pid).grad.data()[i];
                let tol = 1e-6 + 1e-4 * num.abs().max(ana.abs());
                assert!(
                    (num - ana).abs() <= tol,
                    "{}[{i}]: {ana} vs {num}",
                    store.get(pid).name
                );
            }
        }
    }

    #[test]
    fn pointwise_combine_cases() {
        let mut store = ParamStore::new();
        let pw = PointwiseTemporalConv::new(1, 3, &mut store, "pw");
        store.get_mut(pw.weights).value = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap().with_grad();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 3, vec![0.3, -0.7, 2.0]).unwrap());
        let out = pw.combine(&mut tape, &store, h).unwrap();
        for (o, v) in tape.value(out).data().iter().zip([0.3f64, -0.7, 2.0]) {
            assert!((o - v.tanh()).abs() < 1e-15);
        }

        // Uniform weights equal the tanh of the temporal mean.
        let mut store = ParamStore::new();
        let pw = PointwiseTemporalConv::new(4, 2, &mut store, "pw");
        let mut rng = Rng::seed(7);
        let h_val = Tensor::randn(vec![4, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let h = tape.constant(h_val.clone());
        let out = pw.combine(&mut tape, &store, h).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..4).map(|t| h_val.at(t, j)).sum::<f64>() / 4.0;
            assert!((tape.value(out).at(0, j) - mean.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_combine_matches_weighted_sum_oracle() {
        let mut store = ParamStore::new();
        let pw = PointwiseTemporalConv::new(4, 3, &mut store, "pw");
        let mut rng = Rng::seed(8);
        store.get_mut(pw.weights).value =
            Tensor::randn(vec![1, 4], 1.0, &mut rng).with_grad();
        store.get_mut(pw.bias).value = Tensor::randn(vec![3], 0.5, &mut rng).with_grad();
        let h_val = Tensor::randn(vec![4, 3], 1.0, &mut rng);

        let mut tape = Tape::new();
        let h = tape.constant(h_val.clone());
        let out = pw.combine(&mut tape, &store, h).unwrap();

        let w = store.get(pw.weights).value.clone();
        let b = store.get(pw.bias).value.clone();
        for j in 0..3 {
            let mut s = 0.0;
            for t in 0..4 {
                s += w.data()[t] * h_val.at(t, j);
            }
            let expect = (s + b.data()[j]).tanh();
            assert!((tape.value(out).at(0, j) - expect).abs() < 1e-12);
        }
    }
}
