//! The three probabilistic embedding pipelines.
//!
//! All of them read a lookback window of snapshots `t-l ..= t`, use the
//! zero-padded adjacency rows as raw node features, and end in a pair of
//! projection heads emitting one diagonal Gaussian per node:
//!
//! - `st-transformerg2g`: 3 GCN layers per snapshot -> per-node temporal
//!   sequence + positional encoding -> single-head encoder -> point-wise
//!   temporal combination (tanh) -> tanh intermediate layer -> heads;
//! - `dg-mamba`: linear input projection -> Mamba block over the window ->
//!   temporal mean pool -> tanh intermediate -> elu -> heads;
//! - `gdg-mamba`: identical, with a GINE convolution (edge weights as
//!   attributes) transforming each snapshot's features first.
//!
//! The sigma head is `elu(z) + 1` for the transformer and `elu(z) + 1 + 1e-14`
//! for the Mamba variants.

use crate::encoder::{positional_encoding, EncoderBlock, PointwiseTemporalConv};
use crate::error::{Error, Result};
use crate::gnn::{gcn_norm, GcnLayer, GineLayer};
use crate::graph::{pad_adjacency, TemporalGraph};
use crate::loss::GaussianEmbedding;
use crate::mamba::{MambaBlock, MambaConfig, ScanPath};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Activation, Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    StTransformerG2G,
    DgMamba,
    GdgMamba,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::StTransformerG2G => "st-transformerg2g",
            ModelKind::DgMamba => "dg-mamba",
            ModelKind::GdgMamba => "gdg-mamba",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "st-transformerg2g" => Ok(ModelKind::StTransformerG2G),
            "dg-mamba" => Ok(ModelKind::DgMamba),
            "gdg-mamba" => Ok(ModelKind::GdgMamba),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Node universe size; must match the dataset.
    pub n: usize,
    /// GCN width `d` (transformer pipeline only).
    pub hidden: usize,
    /// Projection width feeding the Mamba block.
    pub d_model: usize,
    pub d_state: usize,
    pub d_conv: usize,
    /// Width of the tanh layer before the heads.
    pub intermediate: usize,
    /// Gaussian embedding size L_o.
    pub embed_dim: usize,
    /// Lookback l; the window holds l+1 snapshots.
    pub lookback: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Near-hop horizon for triplet sampling.
    pub k_near: usize,
    pub scan_path: ScanPath,
    pub pre_norm: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, n: usize) -> Self {
        ModelConfig {
            kind,
            n,
            hidden: 256,
            d_model: 64,
            d_state: 16,
            d_conv: 4,
            intermediate: 512,
            embed_dim: 64,
            lookback: 2,
            lr: 1e-3,
            weight_decay: 0.0,
            dropout: 0.0,
            epochs: 50,
            patience: 10,
            seed: 0,
            k_near: 1,
            scan_path: ScanPath::Sequential,
            pre_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.lookback) {
            return Err(Error::Config(format!(
                "lookback {} outside 1..=5",
                self.lookback
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.intermediate == 0 {
            return Err(Error::Config("intermediate width must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        match self.kind {
            ModelKind::StTransformerG2G => {
                if self.hidden == 0 {
                    return Err(Error::Config("hidden width must be positive".into()));
                }
                if self.hidden % 2 != 0 {
                    return Err(Error::Config(format!(
                        "hidden width {} must be even for positional encoding",
                        self.hidden
                    )));
                }
            }
            ModelKind::DgMamba | ModelKind::GdgMamba => {
                if self.d_model == 0 || self.d_state == 0 || self.d_conv == 0 {
                    return Err(Error::Config(
                        "d_model, d_state, d_conv must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.lookback + 1
    }

    /// Canonical flat `key = value` form, one field per line in a fixed
    /// order; hashed for provenance and embedded in checkpoints.
    pub fn to_kv_string(&self) -> String {
        let scan = match self.scan_path {
            ScanPath::Sequential => "sequential",
            ScanPath::Prefix => "prefix",
        };
        format!(
            "model = {}\nn = {}\nhidden = {}\nd_model = {}\nd_state = {}\nd_conv = {}\n\
             intermediate = {}\nembed_dim = {}\nlookback = {}\nlr = {}\nweight_decay = {}\n\
             dropout = {}\nepochs = {}\npatience = {}\nseed = {}\nk_near = {}\nscan = {}\n\
             pre_norm = {}\n",
            self.kind.as_str(),
            self.n,
            self.hidden,
            self.d_model,
            self.d_state,
            self.d_conv,
            self.intermediate,
            self.embed_dim,
            self.lookback,
            self.lr,
            self.weight_decay,
            self.dropout,
            self.epochs,
            self.patience,
            self.seed,
            self.k_near,
            scan,
            self.pre_norm,
        )
    }

    /// Apply one configuration key. Unknown keys are a configuration error.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "model" => self.kind = value.parse()?,
            "n" => self.n = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "d_state" => self.d_state = parse(key, value)?,
            "d_conv" => self.d_conv = parse(key, value)?,
            "intermediate" => self.intermediate = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "lookback" => self.lookback = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "k_near" => self.k_near = parse(key, value)?,
            "scan" => self.scan_path = value.parse()?,
            "pre_norm" => self.pre_norm = parse(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key `{other}`")))
            }
        }
        Ok(())
    }
}

/// Raw node features at timestamp `t`: the zero-padded adjacency rows, one
/// n-wide row per node. Absent nodes get zero rows; row sums equal weighted
/// out-degrees.
pub fn node_features(g: &TemporalGraph, t: usize) -> Result<Tensor> {
    if t >= g.timestamps() {
        return Err(Error::Contract(format!(
            "timestamp {t} outside 0..{}",
            g.timestamps()
        )));
    }
    let adj = pad_adjacency(g.snapshot(t), g.n, g.directed)?;
    Tensor::from_vec(vec![g.n, g.n], adj.matrix)
}

/// Projection heads: `μ = h Wμ + bμ` and `σ = elu(h Wσ + bσ) + 1 + eps`,
/// so σ stays strictly positive. The transformer pipeline uses eps = 0 and
/// the Mamba pipelines eps = 1e-14.
pub fn projection_heads(
    tape: &mut Tape,
    h: TensorId,
    mu_w: TensorId,
    mu_b: TensorId,
    sigma_w: TensorId,
    sigma_b: TensorId,
    sigma_eps: f64,
) -> Result<(TensorId, TensorId)> {
    let mu = tape.linear(h, mu_w, mu_b)?;
    let pre = tape.linear(h, sigma_w, sigma_b)?;
    let elu = tape.activation(pre, Activation::Elu);
    let sigma = tape.add_scalar(elu, 1.0 + sigma_eps);
    Ok((mu, sigma))
}

struct Heads {
    mu_w: ParamId,
    mu_b: ParamId,
    sigma_w: ParamId,
    sigma_b: ParamId,
    /// Added on top of `elu(z) + 1` in the sigma head.
    sigma_eps: f64,
}

impl Heads {
    fn new(d_in: usize, d_out: usize, sigma_eps: f64, store: &mut ParamStore, rng: &mut Rng) -> Self {
        let std = (2.0 / (d_in + d_out) as f64).sqrt();
        Heads {
            mu_w: store.add("head.mu_w", Tensor::randn(vec![d_in, d_out], std, rng)),
            mu_b: store.add("head.mu_b", Tensor::zeros(vec![d_out])),
            sigma_w: store.add("head.sigma_w", Tensor::randn(vec![d_in, d_out], std, rng)),
            sigma_b: store.add("head.sigma_b", Tensor::zeros(vec![d_out])),
            sigma_eps,
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let mu_w = store.mount(tape, self.mu_w);
        let mu_b = store.mount(tape, self.mu_b);
        let sw = store.mount(tape, self.sigma_w);
        let sb = store.mount(tape, self.sigma_b);
        projection_heads(tape, h, mu_w, mu_b, sw, sb, self.sigma_eps)
    }
}

enum Arch {
    StTransformer {
        gcn: [GcnLayer; 3],
        encoder: EncoderBlock,
        pointwise: PointwiseTemporalConv,
        inter_w: ParamId,
        inter_b: ParamId,
        heads: Heads,
    },
    DgMamba {
        in_w: ParamId,
        in_b: ParamId,
        mamba: MambaBlock,
        inter_w: ParamId,
        inter_b: ParamId,
        heads: Heads,
    },
    GdgMamba {
        gine: GineLayer,
        in_w: ParamId,
        in_b: ParamId,
        mamba: MambaBlock,
        inter_w: ParamId,
        inter_b: ParamId,
        heads: Heads,
    },
}

/// One trainable embedding model: config, parameter store, architecture.
pub struct EmbedModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    arch: Arch,
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Tensor::randn(vec![rows, cols], std, rng)
}

impl EmbedModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(cfg.seed).derive(0xda7a_1517);
        let arch = match cfg.kind {
            ModelKind::StTransformerG2G => {
                let d = cfg.hidden;
                let gcn = [
                    GcnLayer::new(cfg.n, d, cfg.dropout, &mut store, &mut rng, "gcn1"),
                    GcnLayer::new(d, d, cfg.dropout, &mut store, &mut rng, "gcn2"),
                    GcnLayer::new(d, d, cfg.dropout, &mut store, &mut rng, "gcn3"),
                ];
                let encoder = {
                    let mut e = EncoderBlock::new(d, &mut store, &mut rng, "encoder");
                    e.pre_norm = cfg.pre_norm;
                    e
                };
                let pointwise =
                    PointwiseTemporalConv::new(cfg.window(), d, &mut store, "pointwise");
                let inter_w = store.add("inter.w", xavier(d, cfg.intermediate, &mut rng));
                let inter_b = store.add("inter.b", Tensor::zeros(vec![cfg.intermediate]));
                let heads = Heads::new(cfg.intermediate, cfg.embed_dim, 0.0, &mut store, &mut rng);
                Arch::StTransformer {
                    gcn,
                    encoder,
                    pointwise,
                    inter_w,
                    inter_b,
                    heads,
                }
            }
            ModelKind::DgMamba => {
                let in_w = store.add("input.w", xavier(cfg.n, cfg.d_model, &mut rng));
                let in_b = store.add("input.b", Tensor::zeros(vec![cfg.d_model]));
                let mut mcfg = MambaConfig::new(cfg.d_model, cfg.d_state, cfg.d_conv);
                mcfg.scan_path = cfg.scan_path;
                let mamba = MambaBlock::new(mcfg, &mut store, &mut rng, "mamba")?;
                let inter_w = store.add("inter.w", xavier(cfg.d_model, cfg.intermediate, &mut rng));
                let inter_b = store.add("inter.b", Tensor::zeros(vec![cfg.intermediate]));
                let heads =
                    Heads::new(cfg.intermediate, cfg.embed_dim, 1e-14, &mut store, &mut rng);
                Arch::DgMamba {
                    in_w,
                    in_b,
                    mamba,
                    inter_w,
                    inter_b,
                    heads,
                }
            }
            ModelKind::GdgMamba => {
                let gine = GineLayer::new(cfg.n, &mut store, &mut rng, "gine");
                let in_w = store.add("input.w", xavier(cfg.n, cfg.d_model, &mut rng));
                let in_b = store.add("input.b", Tensor::zeros(vec![cfg.d_model]));
                let mut mcfg = MambaConfig::new(cfg.d_model, cfg.d_state, cfg.d_conv);
                mcfg.scan_path = cfg.scan_path;
                let mamba = MambaBlock::new(mcfg, &mut store, &mut rng, "mamba")?;
                let inter_w = store.add("inter.w", xavier(cfg.d_model, cfg.intermediate, &mut rng));
                let inter_b = store.add("inter.b", Tensor::zeros(vec![cfg.intermediate]));
                let heads =
                    Heads::new(cfg.intermediate, cfg.embed_dim, 1e-14, &mut store, &mut rng);
                Arch::GdgMamba {
                    gine,
                    in_w,
                    in_b,
                    mamba,
                    inter_w,
                    inter_b,
                    heads,
                }
            }
        };
        Ok(EmbedModel { cfg, store, arch })
    }

    fn check_time(&self, g: &TemporalGraph, t: usize) -> Result<()> {
        if g.n != self.cfg.n {
            return Err(Error::Dimension(format!(
                "graph has {} nodes, model expects {}",
                g.n, self.cfg.n
            )));
        }
        if t < self.cfg.lookback {
            return Err(Error::Contract(format!(
                "timestamp {t} precedes lookback {}",
                self.cfg.lookback
            )));
        }
        if t >= g.timestamps() {
            return Err(Error::Contract(format!(
                "timestamp {t} outside 0..{}",
                g.timestamps()
            )));
        }
        Ok(())
    }

    /// Forward pass at timestamp `t` (window `t-l ..= t`), producing the
    /// batched Gaussian parameters (n x L_o each). `rng` only feeds dropout
    /// and is untouched outside training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &TemporalGraph,
        t: usize,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(TensorId, TensorId)> {
        self.check_time(g, t)?;
        let window: Vec<usize> = (t - self.cfg.lookback..=t).collect();
        match &self.arch {
            Arch::StTransformer {
                gcn,
                encoder,
                pointwise,
                inter_w,
                inter_b,
                heads,
            } => {
                let d = self.cfg.hidden;
                let n = self.cfg.n;
                // GCN stack per snapshot.
                let mut per_snapshot = Vec::with_capacity(window.len());
                for &s in &window {
                    let adj = pad_adjacency(g.snapshot(s), n, g.directed)?;
                    let a_hat = tape.constant(gcn_norm(&adj));
                    let mut x = tape.constant(Tensor::from_vec(vec![n, n], adj.matrix)?);
                    for layer in gcn {
                        x = layer.forward(tape, &self.store, x, a_hat, training, rng)?;
                    }
                    per_snapshot.push(x);
                }
                // Temporal encoder per node.
                let pe = tape.constant(positional_encoding(window.len(), d)?);
                let mut combined_rows = Vec::with_capacity(n);
                for node in 0..n {
                    let rows: Vec<TensorId> = per_snapshot
                        .iter()
                        .map(|&m| tape.gather_rows(m, &[node]))
                        .collect::<Result<Vec<_>>>()?;
                    let seq = tape.concat_rows(&rows)?;
                    let seq_pe = tape.add(seq, pe)?;
                    let enc = encoder.forward(tape, &self.store, seq_pe)?;
                    combined_rows.push(pointwise.combine(tape, &self.store, enc)?);
                }
                let h = tape.concat_rows(&combined_rows)?;
                let iw = self.store.mount(tape, *inter_w);
                let ib = self.store.mount(tape, *inter_b);
                let lin = tape.linear(h, iw, ib)?;
                let inter = tape.activation(lin, Activation::Tanh);
                heads.forward(tape, &self.store, inter)
            }
            Arch::DgMamba {
                in_w,
                in_b,
                mamba,
                inter_w,
                inter_b,
                heads,
            } => {
                let xs = self.project_window(tape, g, &window, *in_w, *in_b, None)?;
                self.mamba_tail(tape, mamba, &xs, *inter_w, *inter_b, heads, training, rng)
            }
            Arch::GdgMamba {
                gine,
                in_w,
                in_b,
                mamba,
                inter_w,
                inter_b,
                heads,
            } => {
                let xs =
                    self.project_window(tape, g, &window, *in_w, *in_b, Some(gine))?;
                self.mamba_tail(tape, mamba, &xs, *inter_w, *inter_b, heads, training, rng)
            }
        }
    }

    /// Features per window snapshot: padded adjacency rows, optionally
    /// passed through the GINE layer, then linearly projected to d_model.
    fn project_window(
        &self,
        tape: &mut Tape,
        g: &TemporalGraph,
        window: &[usize],
        in_w: ParamId,
        in_b: ParamId,
        gine: Option<&GineLayer>,
    ) -> Result<Vec<TensorId>> {
        let n = self.cfg.n;
        let w = self.store.mount(tape, in_w);
        let b = self.store.mount(tape, in_b);
        let mut xs = Vec::with_capacity(window.len());
        for &s in window {
            let adj = pad_adjacency(g.snapshot(s), n, g.directed)?;
            let mut feats = tape.constant(Tensor::from_vec(vec![n, n], adj.matrix.clone())?);
            if let Some(layer) = gine {
                // Deduplicated edge set as materialized by the padding
                // (last weight wins), with the scalar weight as attribute.
                let mut pairs = Vec::new();
                let mut attrs = Vec::new();
                for u in 0..n {
                    for v in 0..n {
                        let w_uv = adj.matrix[u * n + v];
                        if w_uv != 0.0 && (g.directed || u <= v) {
                            pairs.push((u, v));
                            attrs.push(w_uv);
                        }
                    }
                }
                feats = layer.forward(tape, &self.store, feats, &pairs, &attrs, g.directed)?;
            }
            xs.push(tape.linear(feats, w, b)?);
        }
        Ok(xs)
    }

    #[allow(clippy::too_many_arguments)]
    fn mamba_tail(
        &self,
        tape: &mut Tape,
        mamba: &MambaBlock,
        xs: &[TensorId],
        inter_w: ParamId,
        inter_b: ParamId,
        heads: &Heads,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(TensorId, TensorId)> {
        let ys = mamba.forward(tape, &self.store, xs)?;
        // Temporal mean pool.
        let mut pooled = ys[0];
        for &y in &ys[1..] {
            pooled = tape.add(pooled, y)?;
        }
        let pooled = tape.scale(pooled, 1.0 / ys.len() as f64);
        let iw = self.store.mount(tape, inter_w);
        let ib = self.store.mount(tape, inter_b);
        let lin = tape.linear(pooled, iw, ib)?;
        let tanh = tape.activation(lin, Activation::Tanh);
        let elu = tape.activation(tanh, Activation::Elu);
        let dropped = tape.dropout(elu, self.cfg.dropout, training, rng)?;
        heads.forward(tape, &self.store, dropped)
    }

    /// Evaluation-mode embeddings for every node at timestamp `t`.
    pub fn embeddings_at(&self, g: &TemporalGraph, t: usize) -> Result<Vec<GaussianEmbedding>> {
        let mut tape = Tape::new();
        let mut rng = Rng::seed(0);
        let (mu, sigma) = self.forward(&mut tape, g, t, false, &mut rng)?;
        let mu_v = tape.value(mu);
        let sig_v = tape.value(sigma);
        let l = self.cfg.embed_dim;
        Ok((0..self.cfg.n)
            .map(|i| GaussianEmbedding {
                mu: (0..l).map(|j| mu_v.at(i, j)).collect(),
                sigma: (0..l).map(|j| sig_v.at(i, j)).collect(),
            })
            .collect())
    }

    /// Evaluation-mode embeddings for all timestamps `l ..< T`, indexed by
    /// timestamp.
    pub fn embeddings_all(&self, g: &TemporalGraph) -> Result<Vec<(usize, Vec<GaussianEmbedding>)>> {
        (self.cfg.lookback..g.timestamps())
            .map(|t| self.embeddings_at(g, t).map(|e| (t, e)))
            .collect()
    }

    /// Hidden-attention matrix at `t` (Mamba pipelines only).
    pub fn hidden_attention_at(
        &self,
        g: &TemporalGraph,
        t: usize,
    ) -> Result<crate::mamba::HiddenAttention> {
        self.check_time(g, t)?;
        let window: Vec<usize> = (t - self.cfg.lookback..=t).collect();
        let mut tape = Tape::new();
        match &self.arch {
            Arch::DgMamba { in_w, in_b, mamba, .. } => {
                let xs = self.project_window(&mut tape, g, &window, *in_w, *in_b, None)?;
                let (_, trace) = mamba.forward_with_trace(&mut tape, &self.store, &xs)?;
                mamba.hidden_attention_from_trace(&self.store, &trace)
            }
            Arch::GdgMamba {
                gine,
                in_w,
                in_b,
                mamba,
                ..
            } => {
                let xs =
                    self.project_window(&mut tape, g, &window, *in_w, *in_b, Some(gine))?;
                let (_, trace) = mamba.forward_with_trace(&mut tape, &self.store, &xs)?;
                mamba.hidden_attention_from_trace(&self.store, &trace)
            }
            Arch::StTransformer { .. } => Err(Error::Contract(
                "hidden attention requires a Mamba model; transformer models export encoder attention".into(),
            )),
        }
    }

    /// Encoder attention at `t`, averaged over nodes (transformer only).
    /// Rows remain probability vectors.
    pub fn encoder_attention_at(&self, g: &TemporalGraph, t: usize) -> Result<Tensor> {
        self.check_time(g, t)?;
        let window: Vec<usize> = (t - self.cfg.lookback..=t).collect();
        match &self.arch {
            Arch::StTransformer { gcn, encoder, .. } => {
                let d = self.cfg.hidden;
                let n = self.cfg.n;
                let mut tape = Tape::new();
                let mut rng = Rng::seed(0);
                let mut per_snapshot = Vec::with_capacity(window.len());
                for &s in &window {
                    let adj = pad_adjacency(g.snapshot(s), n, g.directed)?;
                    let a_hat = tape.constant(gcn_norm(&adj));
                    let mut x = tape.constant(Tensor::from_vec(vec![n, n], adj.matrix)?);
                    for layer in gcn {
                        x = layer.forward(&mut tape, &self.store, x, a_hat, false, &mut rng)?;
                    }
                    per_snapshot.push(x);
                }
                let len = window.len();
                let pe = tape.constant(positional_encoding(len, d)?);
                let mut mean = vec![0.0; len * len];
                for node in 0..n {
                    let rows: Vec<TensorId> = per_snapshot
                        .iter()
                        .map(|&m| tape.gather_rows(m, &[node]))
                        .collect::<Result<Vec<_>>>()?;
                    let seq = tape.concat_rows(&rows)?;
                    let seq_pe = tape.add(seq, pe)?;
                    let (_, attn) = encoder.forward_with_attention(&mut tape, &self.store, seq_pe)?;
                    for (acc, v) in mean.iter_mut().zip(tape.value(attn).data()) {
                        *acc += v;
                    }
                }
                for v in &mut mean {
                    *v /= n as f64;
                }
                Tensor::from_vec(vec![len, len], mean)
            }
            _ => Err(Error::Contract(
                "encoder attention requires the transformer model".into(),
            )),
        }
    }
}
