//! The reverse-mode tape in isolation: record a small computation, run the
//! backward sweep, and confirm a gradient against central finite
//! differences.
//!
//! `cargo run -p dygem --example autodiff_basics`

use dygem::rng::Rng;
use dygem::tape::{Activation, Tape};
use dygem::tensor::Tensor;

fn main() {
    let mut rng = Rng::seed(1);
    let w_val = Tensor::randn(vec![3, 2], 0.7, &mut rng).with_grad();
    let x_val = Tensor::randn(vec![4, 3], 1.0, &mut rng);

    // loss = sum(tanh(X W)^2)
    let loss_of = |w: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let w = tape.leaf(w);
        let xw = tape.matmul(x, w).expect("shapes agree");
        let y = tape.activation(xw, Activation::Tanh);
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum_all(sq);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let x = tape.constant(x_val.clone());
    let w = tape.leaf(&w_val);
    let xw = tape.matmul(x, w).unwrap();
    let y = tape.activation(xw, Activation::Tanh);
    let sq = tape.mul(y, y).unwrap();
    let loss = tape.sum_all(sq);
    println!("forward: loss = {:.6} ({} tape nodes)", tape.value(loss).data()[0], tape.len());

    let grads = tape.backward(loss).expect("scalar loss");
    let gw = grads.get(w).expect("w requires grad");

    println!("dL/dW            central differences");
    let step = 1e-5;
    for i in 0..w_val.numel() {
        let mut hi = w_val.clone();
        hi.data_mut()[i] += step;
        let mut lo = w_val.clone();
        lo.data_mut()[i] -= step;
        let numeric = (loss_of(&hi) - loss_of(&lo)) / (2.0 * step);
        println!("{:+.8}      {:+.8}", gw.data()[i], numeric);
        assert!((gw.data()[i] - numeric).abs() < 1e-6);
    }
    println!("analytic gradients match finite differences");
}
