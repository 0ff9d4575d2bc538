//! Train the GCN + transformer-encoder pipeline (st-transformerg2g) on a
//! small synthetic graph, then train the GINE-enhanced Mamba variant
//! (gdg-mamba) on the same data for comparison.
//!
//! `cargo run -p dygem --example train_st_transformer`

use dygem::models::{EmbedModel, ModelConfig, ModelKind};
use dygem::rng::Rng;
use dygem::sbm::{generate_sbm, SbmConfig};
use dygem::train::train;

fn main() {
    let sbm = SbmConfig {
        n: 30,
        communities: 3,
        p_in: 0.3,
        p_out: 0.02,
        churn: (2, 3),
        timestamps: 10,
    };
    let graph = generate_sbm(&sbm, &mut Rng::seed(2)).expect("valid sbm");

    for kind in [ModelKind::StTransformerG2G, ModelKind::GdgMamba] {
        let mut cfg = ModelConfig::new(kind, sbm.n);
        cfg.hidden = 16; // GCN width (transformer pipeline)
        cfg.d_model = 16;
        cfg.d_state = 6;
        cfg.d_conv = 2;
        cfg.intermediate = 24;
        cfg.embed_dim = 12;
        cfg.lookback = 1;
        cfg.lr = 2e-3;
        cfg.dropout = 0.1;
        cfg.epochs = 10;
        cfg.patience = 10;
        cfg.seed = 4;

        let mut model = EmbedModel::new(cfg).expect("valid config");
        let history = train(&mut model, &graph).expect("training runs");
        println!(
            "{:18} loss {:8.2} -> {:8.2} over {} epochs (best epoch {})",
            kind.as_str(),
            history.train_loss[0],
            history.train_loss.last().unwrap(),
            history.epochs_run(),
            history.best_epoch
        );
    }
}
