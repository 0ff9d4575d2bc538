use dygem::models::{EmbedModel, ModelConfig, ModelKind};
use dygem::rng::Rng;
use dygem::sbm::{generate_sbm, SbmConfig};
use dygem::train::train;
use dygem::eval::{evaluate, evaluate_shuffled, EvalOptions};

fn main() {
    let sbm = SbmConfig { n: 99, communities: 3, p_in: 0.2, p_out: 0.01, churn: (10, 20), timestamps: 20 };
    for data_seed in [2u64, 3, 4] {
        let g = generate_sbm(&sbm, &mut Rng::seed(data_seed)).unwrap();
        for (lr, seed) in [(0.004f64, 7u64), (0.004, 13), (0.005, 13)] {
            let mut cfg = ModelConfig::new(ModelKind::DgMamba, 99);
            cfg.d_model = 99; cfg.d_state = 25; cfg.d_conv = 6; cfg.intermediate = 128;
            cfg.embed_dim = 64; cfg.lookback = 2; cfg.lr = lr; cfg.weight_decay = 0.0;
            cfg.dropout = 0.0; cfg.epochs = 50; cfg.patience = 50; cfg.seed = seed;
            let mut model = EmbedModel::new(cfg).unwrap();
            match train(&mut model, &g) {
                Err(e) => println!("data={data_seed} lr={lr} seed={seed}: DIVERGED {e}"),
                Ok(h) => {
                    let ratio = h.train_loss.last().unwrap() / h.train_loss[0];
                    let embs = model.embeddings_all(&g).unwrap();
                    let opts = EvalOptions { ratio: 10, use_sigma: false, seed };
                    let m = evaluate(&embs, &g, &opts).unwrap();
                    let b = evaluate_shuffled(&embs, &g, &opts, 12345).unwrap();
                    println!("data={data_seed} lr={lr} seed={seed}: loss x{ratio:.3} MAP {:.4} base {:.4} (x{:.2})", m.map, b.map, m.map/b.map);
                }
            }
        }
    }
}
