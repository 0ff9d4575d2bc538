//! Temporal link prediction: positive/negative pair sampling, a logistic
//! classifier over concatenated embedding means, and ranked retrieval
//! metrics (MAP, MRR).
//!
//! Queries are source nodes per test timestamp; a query's candidates are
//! its positive edges plus the sampled negatives, ranked by classifier
//! score with ties broken by candidate id.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::loss::GaussianEmbedding;
use crate::rng::Rng;
use crate::tape::sigmoid;

/// One labeled node pair at a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSample {
    pub t: usize,
    pub u: usize,
    pub v: usize,
    /// true = edge exists in snapshot t, false = sampled non-edge.
    pub label: bool,
}

/// All positive edges of snapshot `t` (deduplicated, stored orientation)
/// plus `ratio` sampled non-edges per positive, drawn for the same source
/// node, so every source's candidate list keeps the 1:ratio balance and a
/// chance ranking sits near the 1/(1+ratio) positive rate. Negatives never
/// collide with true edges (in either direction on undirected graphs) nor
/// with each other, and self-pairs are excluded.
pub fn sample_link_pairs(
    g: &TemporalGraph,
    t: usize,
    ratio: usize,
    rng: &mut Rng,
) -> Result<Vec<LinkSample>> {
    let snap = g.snapshot(t);
    let mut positives: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(u, v, _) in &snap.edges {
        positives.insert((u, v));
    }
    if positives.is_empty() {
        return Err(Error::Data(format!("snapshot {t} has no edges")));
    }
    let mut forbidden: HashSet<(usize, usize)> = HashSet::new();
    for &(u, v) in &positives {
        forbidden.insert((u, v));
        if !g.directed {
            forbidden.insert((v, u));
        }
    }

    let mut samples: Vec<LinkSample> = positives
        .iter()
        .map(|&(u, v)| LinkSample {
            t,
            u,
            v,
            label: true,
        })
        .collect();

    // Positives per source, in ascending source order for determinism.
    let mut per_source: BTreeMap<usize, usize> = BTreeMap::new();
    for &(u, _) in &positives {
        *per_source.entry(u).or_insert(0) += 1;
    }
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut total_drawn = 0usize;
    for (&u, &count) in &per_source {
        let available = (0..g.n)
            .filter(|&v| v != u && !forbidden.contains(&(u, v)))
            .count();
        // Dense sources saturate: take every non-edge rather than erroring
        // the whole snapshot.
        let needed = (count * ratio).min(available);
        let budget = 200 + 60 * needed;
        let mut drawn = 0usize;
        let mut attempts = 0usize;
        while drawn < needed {
            if attempts >= budget {
                return Err(Error::Sampling(format!(
                    "snapshot {t}: source {u} found {drawn} of {needed} negatives in {budget} draws"
                )));
            }
            attempts += 1;
            let v = rng.index(g.n);
            if v == u || forbidden.contains(&(u, v)) || taken.contains(&(u, v)) {
                continue;
            }
            taken.insert((u, v));
            drawn += 1;
            samples.push(LinkSample {
                t,
                u,
                v,
                label: false,
            });
        }
        total_drawn += drawn;
    }
    if total_drawn == 0 {
        return Err(Error::Sampling(format!(
            "snapshot {t} too dense: no non-edges available for any source"
        )));
    }
    Ok(samples)
}

/// Logistic regression over concatenated embedding features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub use_sigma: bool,
}

impl LinkClassifier {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score_features(&self, features: &[f64]) -> f64 {
        let mut z = self.bias;
        for (w, f) in self.weights.iter().zip(features) {
            z += w * f;
        }
        sigmoid(z)
    }

    pub fn score(&self, a: &GaussianEmbedding, b: &GaussianEmbedding) -> f64 {
        self.score_features(&pair_features(a, b, self.use_sigma))
    }
}

/// `[μ_u ∥ μ_v]`, extended with the σ vectors when enabled.
pub fn pair_features(a: &GaussianEmbedding, b: &GaussianEmbedding, use_sigma: bool) -> Vec<f64> {
    let mut f = Vec::with_capacity(if use_sigma { 4 } else { 2 } * a.dim());
    f.extend_from_slice(&a.mu);
    f.extend_from_slice(&b.mu);
    if use_sigma {
        f.extend_from_slice(&a.sigma);
        f.extend_from_slice(&b.sigma);
    }
    f
}

/// Mini-batch Adam on the binary cross entropy, lr 1e-3, batches of 128 in
/// fixed order, until the per-epoch mean loss plateaus below 1e-6 or 500
/// epochs elapse.
pub fn train_link_classifier(
    features: &[Vec<f64>],
    labels: &[bool],
    use_sigma: bool,
) -> Result<LinkClassifier> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Data(
            "single-class training set: need both positive and negative samples".into(),
        ));
    }
    let dim = features[0].len();
    let batch = 128usize;

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let (mut mw, mut vw) = (vec![0.0; dim], vec![0.0; dim]);
    let (mut mb, mut vb) = (0.0f64, 0.0f64);
    let (beta1, beta2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 1e-3);
    let mut steps = 0usize;
    let mut prev_loss = f64::INFINITY;

    for _epoch in 0..500 {
        let mut epoch_loss = 0.0;
        for chunk_start in (0..features.len()).step_by(batch) {
            let chunk_end = (chunk_start + batch).min(features.len());
            let m = (chunk_end - chunk_start) as f64;
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for idx in chunk_start..chunk_end {
                let f = &features[idx];
                let mut z = b;
                for (wi, fi) in w.iter().zip(f) {
                    z += wi * fi;
                }
                let p = sigmoid(z);
                let y = if labels[idx] { 1.0 } else { 0.0 };
                let p_clamped = p.clamp(1e-12, 1.0 - 1e-12);
                epoch_loss -= y * p_clamped.ln() + (1.0 - y) * (1.0 - p_clamped).ln();
                let err = p - y;
                for (g, fi) in gw.iter_mut().zip(f) {
                    *g += err * fi;
                }
                gb += err;
            }
            for g in &mut gw {
                *g /= m;
            }
            gb /= m;

            steps += 1;
            let bc1 = 1.0 - beta1.powi(steps as i32);
            let bc2 = 1.0 - beta2.powi(steps as i32);
            for i in 0..dim {
                mw[i] = beta1 * mw[i] + (1.0 - beta1) * gw[i];
                vw[i] = beta2 * vw[i] + (1.0 - beta2) * gw[i] * gw[i];
                w[i] -= lr * (mw[i] / bc1) / ((vw[i] / bc2).sqrt() + eps);
            }
            mb = beta1 * mb + (1.0 - beta1) * gb;
            vb = beta2 * vb + (1.0 - beta2) * gb * gb;
            b -= lr * (mb / bc1) / ((vb / bc2).sqrt() + eps);
        }
        epoch_loss /= features.len() as f64;
        if (prev_loss - epoch_loss).abs() < 1e-6 {
            break;
        }
        prev_loss = epoch_loss;
    }

    Ok(LinkClassifier {
        weights: w,
        bias: b,
        use_sigma,
    })
}

/// One ranked candidate list for a (timestamp, source node) query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub t: usize,
    pub source: usize,
    /// (candidate id, score, relevant), sorted by score descending with
    /// ties broken by candidate id ascending.
    pub ranked: Vec<(usize, f64, bool)>,
}

impl RankingResult {
    pub fn from_scored(t: usize, source: usize, mut scored: Vec<(usize, f64, bool)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        RankingResult {
            t,
            source,
            ranked: scored,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub map: f64,
    pub mrr: f64,
}

/// Mean average precision. Queries without any relevant candidate are
/// excluded from the mean; an empty result list is a data error.
pub fn compute_map(results: &[RankingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Data("no ranking results".into()));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for r in results {
        if r.ranked.is_empty() {
            return Err(Error::Data(format!(
                "query ({}, {}) has no candidates",
                r.t, r.source
            )));
        }
        let relevant_total = r.ranked.iter().filter(|c| c.2).count();
        if relevant_total == 0 {
            continue;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &(_, _, rel)) in r.ranked.iter().enumerate() {
            if rel {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        sum += ap / relevant_total as f64;
        counted += 1;
    }
    if counted == 0 {
        return Ok(0.0);
    }
    Ok(sum / counted as f64)
}

/// Mean reciprocal rank of the first relevant candidate; queries without a
/// relevant candidate contribute zero but stay in the denominator.
pub fn compute_mrr(results: &[RankingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Data("no ranking results".into()));
    }
    let mut sum = 0.0;
    for r in results {
        if r.ranked.is_empty() {
            return Err(Error::Data(format!(
                "query ({}, {}) has no candidates",
                r.t, r.source
            )));
        }
        if let Some(rank0) = r.ranked.iter().position(|c| c.2) {
            sum += 1.0 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / results.len() as f64)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Negatives per positive.
    pub ratio: usize,
    /// Include σ vectors in the classifier features.
    pub use_sigma: bool,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ratio: 10,
            use_sigma: false,
            seed: 0,
        }
    }
}

/// Embeddings per timestamp as produced by `EmbedModel::embeddings_all`.
pub type EmbeddingSeries = [(usize, Vec<GaussianEmbedding>)];

fn embeddings_for(embs: &EmbeddingSeries, t: usize) -> Option<&Vec<GaussianEmbedding>> {
    embs.iter().find(|(et, _)| *et == t).map(|(_, e)| e)
}

const STREAM_TRAIN_PAIRS: u64 = 101;
const STREAM_TEST_PAIRS: u64 = 102;

/// Classifier fit on pooled training-period samples.
pub fn fit_classifier(
    embs: &EmbeddingSeries,
    g: &TemporalGraph,
    opts: &EvalOptions,
) -> Result<LinkClassifier> {
    let root = Rng::seed(opts.seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for t in 0..g.train_end {
        let Some(table) = embeddings_for(embs, t) else {
            continue;
        };
        if g.snapshot(t).edges.is_empty() {
            continue;
        }
        let mut rng = root.derive(STREAM_TRAIN_PAIRS).derive(t as u64);
        let samples = sample_link_pairs(g, t, opts.ratio, &mut rng)?;
        for s in samples {
            features.push(pair_features(&table[s.u], &table[s.v], opts.use_sigma));
            labels.push(s.label);
        }
    }
    train_link_classifier(&features, &labels, opts.use_sigma)
}

/// Rankings for every test-period query (source nodes with at least one
/// positive edge), with negatives resampled per timestamp.
pub fn test_rankings(
    classifier: &LinkClassifier,
    embs: &EmbeddingSeries,
    g: &TemporalGraph,
    opts: &EvalOptions,
) -> Result<Vec<RankingResult>> {
    let root = Rng::seed(opts.seed);
    let mut results = Vec::new();
    for t in g.test_range() {
        let Some(table) = embeddings_for(embs, t) else {
            continue;
        };
        if g.snapshot(t).edges.is_empty() {
            continue;
        }
        let mut rng = root.derive(STREAM_TEST_PAIRS).derive(t as u64);
        let samples = sample_link_pairs(g, t, opts.ratio, &mut rng)?;
        let mut by_source: BTreeMap<usize, Vec<(usize, f64, bool)>> = BTreeMap::new();
        for s in &samples {
            let score = classifier.score(&table[s.u], &table[s.v]);
            by_source
                .entry(s.u)
                .or_default()
                .push((s.v, score, s.label));
        }
        for (source, cands) in by_source {
            if cands.iter().any(|c| c.2) {
                results.push(RankingResult::from_scored(t, source, cands));
            }
        }
    }
    if results.is_empty() {
        return Err(Error::Data(
            "no test queries with embeddings and positive edges".into(),
        ));
    }
    Ok(results)
}

/// Full protocol: classifier on the training period, MAP/MRR pooled over
/// every test-period query.
pub fn evaluate(
    embs: &EmbeddingSeries,
    g: &TemporalGraph,
    opts: &EvalOptions,
) -> Result<Metrics> {
    let classifier = fit_classifier(embs, g, opts)?;
    let results = test_rankings(&classifier, embs, g, opts)?;
    Ok(Metrics {
        map: compute_map(&results)?,
        mrr: compute_mrr(&results)?,
    })
}

/// Chance baseline: the node-to-embedding assignment is shuffled per
/// timestamp before running the identical protocol.
pub fn evaluate_shuffled(
    embs: &EmbeddingSeries,
    g: &TemporalGraph,
    opts: &EvalOptions,
    shuffle_seed: u64,
) -> Result<Metrics> {
    let mut rng = Rng::seed(shuffle_seed);
    let shuffled: Vec<(usize, Vec<GaussianEmbedding>)> = embs
        .iter()
        .map(|(t, table)| {
            let mut perm: Vec<usize> = (0..table.len()).collect();
            rng.shuffle(&mut perm);
            (*t, perm.into_iter().map(|i| table[i].clone()).collect())
        })
        .collect();
    evaluate(&shuffled, g, opts)
}
