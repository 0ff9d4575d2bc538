//! Synthetic dynamic graphs from a stochastic block model.
//!
//! Snapshot 0 samples an undirected graph with equal-sized communities
//! (edge probability `p_in` within a block, `p_out` across). Every later
//! snapshot moves a random number of nodes (drawn from the churn range) to
//! different communities and resamples exactly the incident edges of the
//! moved nodes under the updated membership.

use crate::error::{Error, Result};
use crate::graph::{Snapshot, TemporalGraph};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct SbmConfig {
    pub n: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Inclusive range of nodes to relocate per timestep.
    pub churn: (usize, usize),
    pub timestamps: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n: 1000,
            communities: 3,
            p_in: 0.2,
            p_out: 0.01,
            churn: (10, 20),
            timestamps: 50,
        }
    }
}

impl SbmConfig {
    fn validate(&self) -> Result<()> {
        if self.communities == 0 || self.n == 0 || self.n % self.communities != 0 {
            return Err(Error::Config(format!(
                "n = {} must be a positive multiple of communities = {}",
                self.n, self.communities
            )));
        }
        if self.communities < 2 {
            return Err(Error::Config("need at least 2 communities".into()));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.churn;
        if lo > hi || hi > self.n {
            return Err(Error::Config(format!(
                "churn range {lo}..={hi} invalid for n = {}",
                self.n
            )));
        }
        if self.timestamps == 0 {
            return Err(Error::Config("timestamps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Generate the graph together with the per-timestamp community membership.
pub fn generate_sbm_with_membership(
    cfg: &SbmConfig,
    rng: &mut Rng,
) -> Result<(TemporalGraph, Vec<Vec<usize>>)> {
    cfg.validate()?;
    let n = cfg.n;
    let block = n / cfg.communities;
    let mut membership: Vec<usize> = (0..n).map(|i| i / block).collect();

    let pair_prob = |membership: &[usize], u: usize, v: usize| {
        if membership[u] == membership[v] {
            cfg.p_in
        } else {
            cfg.p_out
        }
    };

    // Snapshot 0: full pairwise sample.
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.uniform() < pair_prob(&membership, u, v) {
                edges.push((u, v, 1.0));
            }
        }
    }

    let mut snapshots = Vec::with_capacity(cfg.timestamps);
    let mut memberships = Vec::with_capacity(cfg.timestamps);
    snapshots.push(Snapshot::new(0, edges.clone(), n)?);
    memberships.push(membership.clone());

    for t in 1..cfg.timestamps {
        let count = rng.range_inclusive(cfg.churn.0, cfg.churn.1);
        let movers = rng.sample_distinct(n, count);
        let mut moved = vec![false; n];
        for &v in &movers {
            moved[v] = true;
            let shift = 1 + rng.index(cfg.communities - 1);
            membership[v] = (membership[v] + shift) % cfg.communities;
        }
        // Edges with no moved endpoint survive; touched pairs are resampled.
        edges.retain(|&(u, v, _)| !moved[u] && !moved[v]);
        for u in 0..n {
            for v in (u + 1)..n {
                if (moved[u] || moved[v]) && rng.uniform() < pair_prob(&membership, u, v) {
                    edges.push((u, v, 1.0));
                }
            }
        }
        snapshots.push(Snapshot::new(t, edges.clone(), n)?);
        memberships.push(membership.clone());
    }

    let graph = TemporalGraph::new(snapshots, n, false)?;
    Ok((graph, memberships))
}

pub fn generate_sbm(cfg: &SbmConfig, rng: &mut Rng) -> Result<TemporalGraph> {
    generate_sbm_with_membership(cfg, rng).map(|(g, _)| g)
}
