//! Spatial message passing: GCN layers (transformer pipeline) and GINE
//! convolution with edge attributes (GDG pipeline).

use crate::error::{Error, Result};
use crate::graph::PaddedAdjacency;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Activation, Tape, TensorId};
use crate::tensor::{matmul_raw, Tensor};

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::randn(vec![rows, cols], std, rng)
}

/// Symmetric normalization with self-loops:
/// `Ahat = Dhat^{-1/2} (A + I) Dhat^{-1/2}` where `Dhat` holds the row sums
/// of `A + I`. Rows that sum to zero or less keep a zero inverse root.
pub fn gcn_norm(adj: &PaddedAdjacency) -> Tensor {
    let n = adj.n;
    let mut with_loops = adj.matrix.clone();
    for i in 0..n {
        with_loops[i * n + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = with_loops[i * n..(i + 1) * n].iter().sum();
            if deg > 0.0 {
                deg.powf(-0.5)
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            with_loops[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Tensor::from_vec(vec![n, n], with_loops).expect("square")
}

/// One graph-convolution layer: `dropout(tanh(Ahat X W + b))`, with dropout
/// active only in training mode.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub dropout: f64,
    weight: ParamId,
    bias: ParamId,
}

impl GcnLayer {
    pub fn new(
        d_in: usize,
        d_out: usize,
        dropout: f64,
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
    ) -> Self {
        GcnLayer {
            d_in,
            d_out,
            dropout,
            weight: store.add(format!("{name}.weight"), xavier(d_in, d_out, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![d_out])),
        }
    }

    /// `a_hat` is the constant normalized adjacency (n x n) already on the
    /// tape; `x` is n x d_in.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        a_hat: TensorId,
        training: bool,
        rng: &mut Rng,
    ) -> Result<TensorId> {
        let w = store.mount(tape, self.weight);
        let b = store.mount(tape, self.bias);
        let mixed = tape.matmul(a_hat, x)?;
        let lin = tape.linear(mixed, w, b)?;
        let act = tape.activation(lin, Activation::Tanh);
        tape.dropout(act, self.dropout, training, rng)
    }
}

/// GINE convolution:
/// `out_i = φ((1 + ε) x_i + Σ_{j ∈ N(i)} relu(x_j + proj(e_{ji})))`
/// where φ is a two-layer relu perceptron d -> d, ε a learnable scalar, and
/// proj maps the scalar edge attribute to the node dimension. On directed
/// graphs N(i) holds the in-neighbors.
#[derive(Debug, Clone)]
pub struct GineLayer {
    pub d: usize,
    epsilon: ParamId,
    phi_w1: ParamId,
    phi_b1: ParamId,
    phi_w2: ParamId,
    phi_b2: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl GineLayer {
    pub fn new(d: usize, store: &mut ParamStore, rng: &mut Rng, name: &str) -> Self {
        GineLayer {
            d,
            epsilon: store.add(format!("{name}.epsilon"), Tensor::vector(vec![0.0])),
            phi_w1: store.add(format!("{name}.phi_w1"), xavier(d, d, rng)),
            phi_b1: store.add(format!("{name}.phi_b1"), Tensor::zeros(vec![d])),
            phi_w2: store.add(format!("{name}.phi_w2"), xavier(d, d, rng)),
            phi_b2: store.add(format!("{name}.phi_b2"), Tensor::zeros(vec![d])),
            proj_w: store.add(format!("{name}.proj_w"), Tensor::randn(vec![d], 0.5, rng)),
            proj_b: store.add(format!("{name}.proj_b"), Tensor::zeros(vec![d])),
        }
    }

    /// `edges[k] = (src, dst)` with `edge_attr[k]` its scalar attribute.
    /// Undirected graphs aggregate over both endpoints of every edge.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: TensorId,
        edges: &[(usize, usize)],
        edge_attr: &[f64],
        directed: bool,
    ) -> Result<TensorId> {
        if edges.len() != edge_attr.len() {
            return Err(Error::Data(format!(
                "{} edges but {} edge attributes",
                edges.len(),
                edge_attr.len()
            )));
        }
        let n = tape.value(x).shape()[0];
        if tape.value(x).shape()[1] != self.d {
            return Err(Error::Dimension(format!(
                "node features {:?} vs layer width {}",
                tape.value(x).shape(),
                self.d
            )));
        }

        let eps = store.mount(tape, self.epsilon);
        let w1 = store.mount(tape, self.phi_w1);
        let b1 = store.mount(tape, self.phi_b1);
        let w2 = store.mount(tape, self.phi_w2);
        let b2 = store.mount(tape, self.phi_b2);
        let proj_w = store.mount(tape, self.proj_w);
        let proj_b = store.mount(tape, self.proj_b);

        // Group directed contributions (src -> dst) by exact attribute value
        // so all messages with one attribute share a single relu + matmul.
        let mut groups: Vec<(u64, Vec<(usize, usize)>)> = Vec::new();
        let push = |attr: f64, src: usize, dst: usize, groups: &mut Vec<(u64, Vec<(usize, usize)>)>| {
            let bits = attr.to_bits();
            match groups.iter_mut().find(|(b, _)| *b == bits) {
                Some((_, v)) => v.push((src, dst)),
                None => groups.push((bits, vec![(src, dst)])),
            }
        };
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) outside {n} nodes"
                )));
            }
            push(edge_attr[k], u, v, &mut groups);
            if !directed && u != v {
                push(edge_attr[k], v, u, &mut groups);
            }
        }

        // (1 + ε) x
        let eps_x = tape.mul_scalar_tensor(x, eps)?;
        let mut agg = tape.add(x, eps_x)?;

        for (bits, pairs) in &groups {
            let attr = f64::from_bits(*bits);
            // proj(attr) = attr * proj_w + proj_b, a d-vector on the tape.
            let scaled = tape.scale(proj_w, attr);
            let proj = tape.add(scaled, proj_b)?;
            let shifted = tape.add_row_broadcast(x, proj)?;
            let msg = tape.activation(shifted, Activation::Relu);
            // incidence[dst][src] = multiplicity of (src -> dst)
            let mut incidence = vec![0.0; n * n];
            for &(src, dst) in pairs {
                incidence[dst * n + src] += 1.0;
            }
            let inc = tape.constant(Tensor::from_vec(vec![n, n], incidence)?);
            let summed = tape.matmul(inc, msg)?;
            agg = tape.add(agg, summed)?;
        }

        // φ: two-layer relu MLP.
        let h1 = tape.linear(agg, w1, b1)?;
        let h1 = tape.activation(h1, Activation::Relu);
        tape.linear(h1, w2, b2)
    }

    pub fn epsilon_id(&self) -> ParamId {
        self.epsilon
    }

    pub fn set_identity_phi(&self, store: &mut ParamStore) {
        let d = self.d;
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        store.get_mut(self.phi_w1).value =
            Tensor::from_vec(vec![d, d], eye.clone()).unwrap().with_grad();
        store.get_mut(self.phi_w2).value = Tensor::from_vec(vec![d, d], eye).unwrap().with_grad();
        store.get_mut(self.phi_b1).value = Tensor::zeros(vec![d]).with_grad();
        store.get_mut(self.phi_b2).value = Tensor::zeros(vec![d]).with_grad();
    }
}

/// Dense oracle-style reference for the GCN propagation, used by tests:
/// tanh(Ahat X W + b) computed with raw loops.
pub fn gcn_reference(a_hat: &Tensor, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let n = a_hat.shape()[0];
    let d_in = x.shape()[1];
    let d_out = w.shape()[1];
    let ax = matmul_raw(a_hat.data(), x.data(), n, n, d_in);
    let axw = matmul_raw(&ax, w.data(), n, d_in, d_out);
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        for j in 0..d_out {
            out[i * d_out + j] = (axw[i * d_out + j] + b.data()[j]).tanh();
        }
    }
    Tensor::from_vec(vec![n, d_out], out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{pad_adjacency, Snapshot};

    fn padded(edges: Vec<(usize, usize, f64)>, n: usize, directed: bool) -> PaddedAdjacency {
        let s = Snapshot::new(0, edges, n).unwrap();
        pad_adjacency(&s, n, directed).unwrap()
    }

    #[test]
    fn gcn_single_node_identity_weight_is_tanh() {
        let adj = padded(vec![], 1, false);
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(0);
        let layer = GcnLayer::new(1, 1, 0.0, &mut store, &mut rng, "gcn");
        store.get_mut(ParamId(0)).value = Tensor::matrix(1, 1, vec![1.0]).unwrap().with_grad();

        let mut tape = Tape::new();
        let a_hat = tape.constant(gcn_norm(&adj));
        let x = tape.constant(Tensor::matrix(1, 1, vec![0.7]).unwrap());
        let y = layer
            .forward(&mut tape, &store, x, a_hat, false, &mut rng)
            .unwrap();
        assert!((tape.value(y).data()[0] - 0.7f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn gcn_zero_features_give_tanh_bias_rows() {
        let adj = padded(vec![(0, 1, 1.0)], 3, false);
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(1);
        let layer = GcnLayer::new(2, 2, 0.0, &mut store, &mut rng, "gcn");
        store.get_mut(ParamId(1)).value = Tensor::vector(vec![0.3, -0.6]).with_grad();

        let mut tape = Tape::new();
        let a_hat = tape.constant(gcn_norm(&adj));
        let x = tape.constant(Tensor::zeros(vec![3, 2]));
        let y = layer
            .forward(&mut tape, &store, x, a_hat, false, &mut rng)
            .unwrap();
        for i in 0..3 {
            assert!((tape.value(y).at(i, 0) - 0.3f64.tanh()).abs() < 1e-15);
            assert!((tape.value(y).at(i, 1) - (-0.6f64).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_matches_dense_reference_on_path_graph() {
        let adj = padded(vec![(0, 1, 1.0), (1, 2, 1.0)], 3, false);
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(2);
        let layer = GcnLayer::new(2, 3, 0.0, &mut store, &mut rng, "gcn");
        let x_val = Tensor::randn(vec![3, 2], 1.0, &mut rng);

        let mut tape = Tape::new();
        let a_hat_val = gcn_norm(&adj);
        let a_hat = tape.constant(a_hat_val.clone());
        let x = tape.constant(x_val.clone());
        let y = layer
            .forward(&mut tape, &store, x, a_hat, false, &mut rng)
            .unwrap();

        let w = &store.get(ParamId(0)).value;
        let b = &store.get(ParamId(1)).value;
        let oracle = gcn_reference(&a_hat_val, &x_val, w, b);
        for (got, want) in tape.value(y).data().iter().zip(oracle.data()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_no_edges_is_per_node_dense_layer() {
        // Self-loops only: Ahat = I, so the layer reduces to tanh(X W + b).
        let adj = padded(vec![], 4, false);
        let a_hat = gcn_norm(&adj);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((a_hat.at(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gine_empty_neighborhood_identity_phi_passes_through() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(3);
        let layer = GineLayer::new(2, &mut store, &mut rng, "gine");
        layer.set_identity_phi(&mut store);

        let mut tape = Tape::new();
        // Positive features so identity relu passthrough holds exactly.
        let x = tape.constant(Tensor::matrix(2, 2, vec![0.5, 1.0, 2.0, 0.25]).unwrap());
        let y = layer
            .forward(&mut tape, &store, x, &[], &[], true)
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 1.0, 2.0, 0.25]);
    }

    #[test]
    fn gine_two_node_formula_matches_hand_expansion() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(4);
        let layer = GineLayer::new(2, &mut store, &mut rng, "gine");
        layer.set_identity_phi(&mut store);
        store.get_mut(layer.epsilon).value = Tensor::vector(vec![0.5]).with_grad();
        store.get_mut(layer.proj_w).value = Tensor::vector(vec![1.0, 2.0]).with_grad();
        store.get_mut(layer.proj_b).value = Tensor::vector(vec![0.1, -0.1]).with_grad();

        let x_val = vec![0.2, 0.4, 0.6, 0.8];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, x_val.clone()).unwrap());
        // one directed edge 0 -> 1 with attribute 3.0
        let y = layer
            .forward(&mut tape, &store, x, &[(0, 1)], &[3.0], true)
            .unwrap();

        // node 0: (1 + 0.5) x_0 (no in-neighbors)
        assert!((tape.value(y).at(0, 0) - 1.5 * 0.2).abs() < 1e-12);
        assert!((tape.value(y).at(0, 1) - 1.5 * 0.4).abs() < 1e-12);
        // node 1: 1.5 x_1 + relu(x_0 + [3*1+0.1, 3*2-0.1])
        let m0 = (0.2f64 + 3.1).max(0.0);
        let m1 = (0.4f64 + 5.9).max(0.0);
        assert!((tape.value(y).at(1, 0) - (1.5 * 0.6 + m0)).abs() < 1e-12);
        assert!((tape.value(y).at(1, 1) - (1.5 * 0.8 + m1)).abs() < 1e-12);
    }

    #[test]
    fn gine_rejects_missing_edge_attributes() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(5);
        let layer = GineLayer::new(2, &mut store, &mut rng, "gine");
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![2, 2]));
        let err = layer
            .forward(&mut tape, &store, x, &[(0, 1)], &[], true)
            .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn gine_aggregation_is_order_invariant() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(6);
        let layer = GineLayer::new(3, &mut store, &mut rng, "gine");
        let x_val = Tensor::randn(vec![4, 3], 1.0, &mut rng);
        let edges = vec![(0, 3), (1, 3), (2, 3), (0, 1)];
        let attrs = vec![1.0, 2.0, 1.0, 0.5];

        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone());
            let e: Vec<_> = order.iter().map(|&i| edges[i]).collect();
            let a: Vec<_> = order.iter().map(|&i| attrs[i]).collect();
            let y = layer.forward(&mut tape, &store, x, &e, &a, true).unwrap();
            tape.value(y).clone()
        };
        let base = run(&[0, 1, 2, 3]);
        let alt = run(&[3, 2, 0, 1]);
        for (a, b) in base.data().iter().zip(alt.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn both_layers_are_permutation_equivariant() {
        let mut rng = Rng::seed(7);
        for trial in 0..10 {
            let n = 6;
            let d = 3;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in 0..n {
                    if u != v && rng.uniform() < 0.3 {
                        edges.push((u, v, rng.uniform_in(0.5, 2.0)));
                    }
                }
            }
            let x_val = Tensor::randn(vec![n, d], 1.0, &mut rng);
            // random permutation
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);

            let mut store = ParamStore::new();
            let mut lrng = Rng::seed(100 + trial);
            let gcn = GcnLayer::new(d, d, 0.0, &mut store, &mut lrng, "gcn");
            let gine = GineLayer::new(d, &mut store, &mut lrng, "gine");

            let permuted_edges: Vec<_> = edges
                .iter()
                .map(|&(u, v, w)| (perm[u], perm[v], w))
                .collect();
            let mut x_perm = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    x_perm[perm[i] * d + j] = x_val.at(i, j);
                }
            }
            let x_perm = Tensor::from_vec(vec![n, d], x_perm).unwrap();

            // GCN on original and permuted graphs.
            let run_gcn = |edges: &[(usize, usize, f64)], x: &Tensor| {
                let s = Snapshot::new(0, edges.to_vec(), n).unwrap();
                let adj = pad_adjacency(&s, n, true).unwrap();
                let mut tape = Tape::new();
                let a_hat = tape.constant(gcn_norm(&adj));
                let xid = tape.constant(x.clone());
                let mut drng = Rng::seed(0);
                let y = gcn
                    .forward(&mut tape, &store, xid, a_hat, false, &mut drng)
                    .unwrap();
                tape.value(y).clone()
            };
            let y = run_gcn(&edges, &x_val);
            let y_perm = run_gcn(&permuted_edges, &x_perm);
            for i in 0..n {
                for j in 0..d {
                    assert!(
                        (y.at(i, j) - y_perm.at(perm[i], j)).abs() < 1e-12,
                        "gcn trial {trial}"
                    );
                }
            }

            // GINE likewise.
            let run_gine = |pairs: &[(usize, usize)], attrs: &[f64], x: &Tensor| {
                let mut tape = Tape::new();
                let xid = tape.constant(x.clone());
                let y = gine
                    .forward(&mut tape, &store, xid, pairs, attrs, true)
                    .unwrap();
                tape.value(y).clone()
            };
            let pairs: Vec<_> = edges.iter().map(|&(u, v, _)| (u, v)).collect();
            let attrs: Vec<_> = edges.iter().map(|&(_, _, w)| w).collect();
            let pairs_p: Vec<_> = permuted_edges.iter().map(|&(u, v, _)| (u, v)).collect();
            let g = run_gine(&pairs, &attrs, &x_val);
            let g_perm = run_gine(&pairs_p, &attrs, &x_perm);
            for i in 0..n {
                for j in 0..d {
                    assert!(
                        (g.at(i, j) - g_perm.at(perm[i], j)).abs() < 1e-12,
                        "gine trial {trial}"
                    );
                }
            }
        }
    }

    #[test]
    fn gine_gradients_pass_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(8);
        let layer = GineLayer::new(2, &mut store, &mut rng, "gine");
        let x_val = Tensor::randn(vec![3, 2], 0.8, &mut rng);
        let edges = vec![(0, 1), (2, 1), (1, 0)];
        let attrs = vec![1.5, -0.5, 2.0];

        let eval = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.constant(x_val.clone());
            let y = layer.forward(&mut tape, store, x, &edges, &attrs, true).unwrap();
            let sq = tape.mul(y, y).unwrap();
            let loss = tape.sum_all(sq);
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let y = layer.forward(&mut tape, &store, x, &edges, &attrs, true).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        store.apply_gradients(&tape, &grads);

        let step = 1e-5;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for pid in ids {
            for i in 0..store.get(pid).value.numel() {
                let orig = store.get(pid).value.data()[i];
                store.get_mut(pid).value.data_mut()[i] = orig + step;
                let hi = eval(&store);
                store.get_mut(pid).value.data_mut()[i] = orig - step;
                let lo = eval(&store);
                store.get_mut(pid).value.data_mut()[i] = orig;
                let num = (hi - lo) / (2.0 * step);
                let ana = store.get(pid).grad.data()[i];
                let tol = 1e-7 + 1e-4 * num.abs().max(ana.abs());
                assert!(
                    (num - ana).abs() <= tol,
                    "{}[{i}]: {ana} vs {num}",
                    store.get(pid).name
                );
            }
        }
    }
}
