//! Gaussian node embeddings, their KL divergence, and the triplet
//! contrastive objective
//!
//!   L = Σ_triples [ KL(ref‖near)² + exp(−KL(ref‖far)) ]
//!
//! with diagonal-covariance Gaussians, so the KL reduces to sums over
//! coordinates. Both a plain value-level form (evaluation, oracles) and a
//! tape form (training) are provided; tests pin them against each other.

use crate::error::{Error, Result};
use crate::graph::TripletSet;
use crate::tape::{Activation, Tape, TensorId};

/// One node's embedding: mean and positive per-coordinate variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmbedding {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianEmbedding {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Closed-form KL between diagonal Gaussians:
/// `½ [ Σ σa/σb + Σ (μb−μa)²/σb − L + Σ ln σb − Σ ln σa ]`.
pub fn kl_divergence(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
    if a.dim() != b.dim() || a.sigma.len() != a.dim() || b.sigma.len() != b.dim() {
        return Err(Error::Dimension(format!(
            "embedding dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if b.sigma.iter().chain(&a.sigma).any(|&s| s <= 0.0) {
        return Err(Error::Contract("non-positive sigma in KL".into()));
    }
    let l = a.dim() as f64;
    let mut trace = 0.0;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for i in 0..a.dim() {
        trace += a.sigma[i] / b.sigma[i];
        let d = b.mu[i] - a.mu[i];
        quad += d * d / b.sigma[i];
        log_det += b.sigma[i].ln() - a.sigma[i].ln();
    }
    Ok(0.5 * (trace + quad - l + log_det))
}

/// Value-level triplet loss over one timestamp's triples;
/// `embeddings[v]` must exist for every node id referenced.
pub fn triplet_loss(triplets: &TripletSet, embeddings: &[GaussianEmbedding]) -> Result<f64> {
    let mut loss = 0.0;
    for &(r, near, far) in &triplets.triples {
        let get = |v: usize| -> Result<&GaussianEmbedding> {
            embeddings
                .get(v)
                .ok_or_else(|| Error::Contract(format!("missing embedding for node {v}")))
        };
        let e_near = kl_divergence(get(r)?, get(near)?)?;
        let e_far = kl_divergence(get(r)?, get(far)?)?;
        loss += e_near * e_near + (-e_far).exp();
    }
    Ok(loss)
}

/// Per-row KL between two batches of Gaussians (k x L each) on the tape.
/// Returns a k-vector.
pub fn kl_rows(
    tape: &mut Tape,
    mu_a: TensorId,
    sigma_a: TensorId,
    mu_b: TensorId,
    sigma_b: TensorId,
) -> Result<TensorId> {
    let l = tape.value(mu_a).shape()[1] as f64;
    let ratio = tape.div(sigma_a, sigma_b)?;
    let trace = tape.reduce_sum(ratio, 1)?;
    let diff = tape.sub(mu_b, mu_a)?;
    let sq = tape.mul(diff, diff)?;
    let quad_terms = tape.div(sq, sigma_b)?;
    let quad = tape.reduce_sum(quad_terms, 1)?;
    let ln_b = tape.ln(sigma_b);
    let ln_a = tape.ln(sigma_a);
    let log_b = tape.reduce_sum(ln_b, 1)?;
    let log_a = tape.reduce_sum(ln_a, 1)?;
    let s1 = tape.add(trace, quad)?;
    let s2 = tape.sub(s1, log_a)?;
    let s3 = tape.add(s2, log_b)?;
    let shifted = tape.add_scalar(s3, -l);
    Ok(tape.scale(shifted, 0.5))
}

/// Taped triplet loss from batched embeddings (n x L mu/sigma) and the
/// timestamp's triples: gathers the referenced rows, computes both KL
/// vectors, and reduces to the scalar objective.
pub fn triplet_loss_on_tape(
    tape: &mut Tape,
    mu: TensorId,
    sigma: TensorId,
    triplets: &TripletSet,
) -> Result<TensorId> {
    if triplets.is_empty() {
        return Ok(tape.constant(crate::tensor::Tensor::scalar(0.0)));
    }
    let n = tape.value(mu).shape()[0];
    for &(r, near, far) in &triplets.triples {
        if r >= n || near >= n || far >= n {
            return Err(Error::Contract(format!(
                "triple ({r}, {near}, {far}) outside {n} embeddings"
            )));
        }
    }
    let refs: Vec<usize> = triplets.triples.iter().map(|t| t.0).collect();
    let nears: Vec<usize> = triplets.triples.iter().map(|t| t.1).collect();
    let fars: Vec<usize> = triplets.triples.iter().map(|t| t.2).collect();

    let mu_r = tape.gather_rows(mu, &refs)?;
    let sig_r = tape.gather_rows(sigma, &refs)?;
    let mu_n = tape.gather_rows(mu, &nears)?;
    let sig_n = tape.gather_rows(sigma, &nears)?;
    let mu_f = tape.gather_rows(mu, &fars)?;
    let sig_f = tape.gather_rows(sigma, &fars)?;

    let kl_near = kl_rows(tape, mu_r, sig_r, mu_n, sig_n)?;
    let kl_far = kl_rows(tape, mu_r, sig_r, mu_f, sig_f)?;

    let near_sq = tape.mul(kl_near, kl_near)?;
    let neg_far = tape.scale(kl_far, -1.0);
    let push = tape.activation(neg_far, Activation::Exp);
    let total_near = tape.sum_all(near_sq);
    let total_far = tape.sum_all(push);
    tape.add(total_near, total_far)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn gauss(mu: Vec<f64>, sigma: Vec<f64>) -> GaussianEmbedding {
        GaussianEmbedding { mu, sigma }
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let g = gauss(vec![0.3, -1.0], vec![0.5, 2.0]);
        assert_eq!(kl_divergence(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn kl_standard_normal_vs_shifted_matches_closed_form() {
        // KL(N(0,1) ‖ N(1,2)) = ½[0.5 + 0.5 − 1 + ln 2]
        let a = gauss(vec![0.0], vec![1.0]);
        let b = gauss(vec![1.0], vec![2.0]);
        let expect = 0.5 * (0.5 + 0.5 - 1.0 + 2.0f64.ln());
        let got = kl_divergence(&a, &b).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.346574).abs() < 1e-6);
    }

    #[test]
    fn kl_is_nonnegative_and_asymmetric_on_random_pairs() {
        let mut rng = Rng::seed(42);
        let mut saw_asymmetry = false;
        for _ in 0..1000 {
            let dim = 1 + rng.index(6);
            let draw = |rng: &mut Rng| {
                gauss(
                    (0..dim).map(|_| rng.normal()).collect(),
                    (0..dim).map(|_| rng.uniform_in(0.1, 3.0)).collect(),
                )
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let ab = kl_divergence(&a, &b).unwrap();
            let ba = kl_divergence(&b, &a).unwrap();
            assert!(ab >= -1e-12, "KL {ab} negative");
            if (ab - ba).abs() > 1e-9 {
                saw_asymmetry = true;
            }
        }
        assert!(saw_asymmetry);
    }

    #[test]
    fn kl_rejects_nonpositive_sigma() {
        let a = gauss(vec![0.0], vec![1.0]);
        let b = gauss(vec![0.0], vec![0.0]);
        assert!(matches!(kl_divergence(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_triplet_set_gives_zero_loss() {
        let ts = TripletSet { t: 0, triples: vec![] };
        assert_eq!(triplet_loss(&ts, &[]).unwrap(), 0.0);
    }

    #[test]
    fn single_triple_with_unit_kls() {
        // KL(N(√2, 1) ‖ N(0, 1)) = (√2)²/2 = 1 exactly, giving a triple
        // with unit pull and push divergences.
        let reference = gauss(vec![2.0f64.sqrt()], vec![1.0]);
        let other = gauss(vec![0.0], vec![1.0]);
        let kl = kl_divergence(&reference, &other).unwrap();
        assert!((kl - 1.0).abs() < 1e-12);
        let ts = TripletSet {
            t: 0,
            triples: vec![(0, 1, 2)],
        };
        let loss = triplet_loss(&ts, &[reference, other.clone(), other]).unwrap();
        let expect = 1.0 + (-1.0f64).exp();
        assert!((loss - expect).abs() < 1e-8, "{loss} vs {expect}");
        assert!((expect - 1.367879).abs() < 1e-6);
    }

    #[test]
    fn missing_embedding_is_contract_error() {
        let ts = TripletSet {
            t: 0,
            triples: vec![(0, 1, 2)],
        };
        let g = gauss(vec![0.0], vec![1.0]);
        assert!(matches!(
            triplet_loss(&ts, &[g.clone(), g]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn loss_vanishes_in_the_optimum_limit() {
        // near identical to ref, far pushed away: loss -> 0.
        let reference = gauss(vec![0.0, 0.0], vec![1.0, 1.0]);
        let near = reference.clone();
        let far = gauss(vec![60.0, -60.0], vec![1.0, 1.0]);
        let ts = TripletSet {
            t: 0,
            triples: vec![(0, 1, 2)],
        };
        let loss = triplet_loss(&ts, &[reference, near, far]).unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn taped_loss_matches_value_level_loss() {
        let mut rng = Rng::seed(7);
        for trial in 0..20 {
            let n = 6;
            let dim = 3;
            let mu_v = Tensor::randn(vec![n, dim], 1.0, &mut rng);
            let sig_v = Tensor::from_vec(
                vec![n, dim],
                (0..n * dim).map(|_| rng.uniform_in(0.2, 2.5)).collect(),
            )
            .unwrap();
            let ts = TripletSet {
                t: 0,
                triples: vec![(0, 1, 2), (3, 4, 5), (1, 0, 4)],
            };
            let embeddings: Vec<GaussianEmbedding> = (0..n)
                .map(|i| {
                    gauss(
                        (0..dim).map(|j| mu_v.at(i, j)).collect(),
                        (0..dim).map(|j| sig_v.at(i, j)).collect(),
                    )
                })
                .collect();
            let direct = triplet_loss(&ts, &embeddings).unwrap();

            let mut tape = Tape::new();
            let mu = tape.constant(mu_v);
            let sigma = tape.constant(sig_v);
            let loss = triplet_loss_on_tape(&mut tape, mu, sigma, &ts).unwrap();
            let taped = tape.value(loss).data()[0];
            assert!(
                (direct - taped).abs() < 1e-12,
                "trial {trial}: {direct} vs {taped}"
            );
        }
    }

    #[test]
    fn taped_loss_gradients_pass_finite_differences() {
        let mut rng = Rng::seed(9);
        let n = 5;
        let dim = 2;
        let mu_v = Tensor::randn(vec![n, dim], 1.0, &mut rng).with_grad();
        let sig_v = Tensor::from_vec(
            vec![n, dim],
            (0..n * dim).map(|_| rng.uniform_in(0.3, 2.0)).collect(),
        )
        .unwrap()
        .with_grad();
        let ts = TripletSet {
            t: 0,
            triples: vec![(0, 1, 2), (2, 3, 4)],
        };

        let eval = |mu_d: &[f64], sig_d: &[f64]| {
            let mut tape = Tape::new();
            let mu = tape.constant(Tensor::from_vec(vec![n, dim], mu_d.to_vec()).unwrap());
            let sigma = tape.constant(Tensor::from_vec(vec![n, dim], sig_d.to_vec()).unwrap());
            let loss = triplet_loss_on_tape(&mut tape, mu, sigma, &ts).unwrap();
            tape.value(loss).data()[0]
        };

        let mut tape = Tape::new();
        let mu = tape.leaf(&mu_v);
        let sigma = tape.leaf(&sig_v);
        let loss = triplet_loss_on_tape(&mut tape, mu, sigma, &ts).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gm = grads.or_zeros(mu, &[n, dim]);
        let gs = grads.or_zeros(sigma, &[n, dim]);

        let step = 1e-5;
        for i in 0..n * dim {
            let mut hi = mu_v.data().to_vec();
            let mut lo = mu_v.data().to_vec();
            hi[i] += step;
            lo[i] -= step;
            let num = (eval(&hi, sig_v.data()) - eval(&lo, sig_v.data())) / (2.0 * step);
            let ana = gm.data()[i];
            let tol = 1e-7 + 1e-4 * num.abs().max(ana.abs());
            assert!((num - ana).abs() <= tol, "d/dmu[{i}]: {ana} vs {num}");

            let mut hi = sig_v.data().to_vec();
            let mut lo = sig_v.data().to_vec();
            hi[i] += step;
            lo[i] -= step;
            let num = (eval(mu_v.data(), &hi) - eval(mu_v.data(), &lo)) / (2.0 * step);
            let ana = gs.data()[i];
            let tol = 1e-7 + 1e-4 * num.abs().max(ana.abs());
            assert!((num - ana).abs() <= tol, "d/dsigma[{i}]: {ana} vs {num}");
        }
    }
}
