//! The two faces of a linear time-invariant SSM: the step-by-step state
//! recurrence and the equivalent causal convolution kernel
//! K[k] = C·Abar^k·Bbar. Both are evaluated on the same input and compared
//! elementwise, and a prefix-scan execution of the same recurrence is
//! checked against the sequential path.
//!
//! `cargo run -p dygem --example ssm_scan_vs_kernel`

use dygem::rng::Rng;
use dygem::ssm::{
    apply_conv_kernel, discretize, scan_states_prefix, scan_states_sequential, ssm_conv_kernel,
    ssm_scan_recurrent, SsmParams,
};
use dygem::tape::Tape;
use dygem::tensor::Tensor;

fn main() {
    let mut rng = Rng::seed(3);
    let (m, d, len) = (4, 2, 8);
    let params = SsmParams {
        a_diag: Tensor::vector((0..m).map(|k| -((k + 1) as f64)).collect()),
        b: Tensor::randn(vec![m, d], 0.8, &mut rng),
        c: Tensor::randn(vec![d, m], 0.8, &mut rng),
        d: Tensor::randn(vec![d], 0.5, &mut rng),
        delta: 0.2,
    };
    let x = Tensor::randn(vec![len, d], 1.0, &mut rng);

    let mut tape = Tape::new();
    let y_rec = ssm_scan_recurrent(&mut tape, &params, &x).expect("scan");

    let (a_bar, b_bar) = discretize(params.a_diag.data(), &params.b, params.delta).unwrap();
    let kernel = ssm_conv_kernel(&a_bar, &b_bar, &params.c, len).unwrap();
    let y_conv = apply_conv_kernel(&kernel, &x, params.d.data()).unwrap();

    println!("t   recurrence             convolution");
    let mut max_diff = 0.0f64;
    for t in 0..len {
        let r: Vec<f64> = (0..d).map(|j| tape.value(y_rec).at(t, j)).collect();
        let c: Vec<f64> = (0..d).map(|j| y_conv.at(t, j)).collect();
        for j in 0..d {
            max_diff = max_diff.max((r[j] - c[j]).abs());
        }
        println!("{t}  [{:+.5}, {:+.5}]  [{:+.5}, {:+.5}]", r[0], r[1], c[0], c[1]);
    }
    println!("max |recurrence - convolution| = {max_diff:.2e}");
    assert!(max_diff < 1e-10);

    // The same first-order recurrence solved by a parallel-style scan.
    let mut tape = Tape::new();
    let coeffs: Vec<_> = (0..len)
        .map(|_| tape.constant(Tensor::randn(vec![1, 6], 0.4, &mut rng)))
        .collect();
    let adds: Vec<_> = (0..len)
        .map(|_| tape.constant(Tensor::randn(vec![1, 6], 1.0, &mut rng)))
        .collect();
    let seq = scan_states_sequential(&mut tape, &coeffs, &adds).unwrap();
    let par = scan_states_prefix(&mut tape, &coeffs, &adds).unwrap();
    let max_scan_diff = seq
        .iter()
        .zip(&par)
        .flat_map(|(s, p)| {
            tape.value(*s)
                .data()
                .iter()
                .zip(tape.value(*p).data())
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0f64, f64::max);
    println!("max |sequential - prefix scan| = {max_scan_diff:.2e}");
    assert!(max_scan_diff < 1e-10);
}
