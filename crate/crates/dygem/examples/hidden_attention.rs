//! Peek inside the temporal models: the Mamba block's hidden-attention
//! scores (reconstructed from its selective state dynamics, strictly
//! causal) next to the transformer encoder's attention averaged over
//! nodes (full rows summing to one).
//!
//! `cargo run -p dygem --example hidden_attention`

use dygem::models::{EmbedModel, ModelConfig, ModelKind};
use dygem::rng::Rng;
use dygem::sbm::{generate_sbm, SbmConfig};

fn print_matrix(title: &str, rows: usize, at: impl Fn(usize, usize) -> f64) {
    println!("{title}");
    for i in 0..rows {
        let line: Vec<String> = (0..rows).map(|j| format!("{:7.4}", at(i, j))).collect();
        println!("  {}", line.join(" "));
    }
}

fn main() {
    let sbm = SbmConfig {
        n: 24,
        communities: 3,
        p_in: 0.35,
        p_out: 0.03,
        churn: (2, 3),
        timestamps: 10,
    };
    let graph = generate_sbm(&sbm, &mut Rng::seed(4)).expect("valid sbm");
    let t = 7;

    // Lookback 4 gives a 5-step window, so the matrices are 5x5.
    let mut mamba_cfg = ModelConfig::new(ModelKind::DgMamba, sbm.n);
    mamba_cfg.d_model = 16;
    mamba_cfg.d_state = 6;
    mamba_cfg.d_conv = 3;
    mamba_cfg.intermediate = 16;
    mamba_cfg.embed_dim = 8;
    mamba_cfg.lookback = 4;
    mamba_cfg.seed = 21;
    let mamba = EmbedModel::new(mamba_cfg).unwrap();
    let hidden = mamba.hidden_attention_at(&graph, t).unwrap();
    print_matrix(
        "mamba hidden attention (window position i attending to j <= i):",
        hidden.len,
        |i, j| hidden.at(i, j),
    );
    for i in 0..hidden.len {
        for j in (i + 1)..hidden.len {
            assert_eq!(hidden.at(i, j), 0.0, "causality violated");
        }
    }
    println!("strictly zero above the diagonal, as the scan guarantees\n");

    let mut enc_cfg = ModelConfig::new(ModelKind::StTransformerG2G, sbm.n);
    enc_cfg.hidden = 16;
    enc_cfg.intermediate = 16;
    enc_cfg.embed_dim = 8;
    enc_cfg.lookback = 4;
    enc_cfg.seed = 21;
    let transformer = EmbedModel::new(enc_cfg).unwrap();
    let attn = transformer.encoder_attention_at(&graph, t).unwrap();
    print_matrix(
        "encoder attention averaged over nodes (non-causal, rows sum to 1):",
        attn.shape()[0],
        |i, j| attn.at(i, j),
    );
    for i in 0..attn.shape()[0] {
        let row_sum: f64 = (0..attn.shape()[1]).map(|j| attn.at(i, j)).sum();
        assert!((row_sum - 1.0).abs() < 1e-9);
    }
    println!("every row is a probability vector");
}
