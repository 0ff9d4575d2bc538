//! Discrete-time dynamic graphs: snapshots, zero-padded adjacency,
//! chronological splits, hop distances, and triplet sampling.
//!
//! Node ids are dense `0..n` over a global universe fixed at ingestion;
//! a node absent from a snapshot simply has no incident edges there.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One edge as stored: `(src, dst, weight)`.
pub type Edge = (usize, usize, f64);

/// The state of the graph at a single timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// 0-based timestamp index.
    pub index: usize,
    /// Edges in ingestion order; duplicates keep the last weight when
    /// materialized into an adjacency matrix.
    pub edges: Vec<Edge>,
    /// Sorted ids of nodes incident to at least one edge at this timestamp.
    pub active: Vec<usize>,
    /// Undirected adjacency lists (direction ignored), deduplicated,
    /// used for hop distances.
    pub(crate) neighbors: Vec<Vec<usize>>,
}

impl Snapshot {
    pub fn new(index: usize, edges: Vec<Edge>, n: usize) -> Result<Self> {
        for &(u, v, w) in &edges {
            if u >= n || v >= n {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) outside node universe of size {n}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Data(format!("non-finite weight on edge ({u}, {v})")));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut self_loop = vec![false; n];
        for &(u, v, _) in &edges {
            if u != v {
                neighbors[u].push(v);
                neighbors[v].push(u);
            } else {
                self_loop[u] = true;
            }
        }
        let mut active = Vec::new();
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            if !nb.is_empty() || self_loop[i] {
                active.push(i);
            }
        }
        Ok(Snapshot {
            index,
            edges,
            active,
            neighbors,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active.binary_search(&node).is_ok()
    }

    /// Hop distances from `src` up to `max_depth` (inclusive); `usize::MAX`
    /// marks nodes not reached within the horizon. Direction and weight are
    /// ignored.
    pub fn bfs_depths(&self, src: usize, max_depth: usize) -> Vec<usize> {
        let n = self.neighbors.len();
        let mut dist = vec![usize::MAX; n];
        dist[src] = 0;
        let mut frontier = vec![src];
        let mut depth = 0;
        while !frontier.is_empty() && depth < max_depth {
            depth += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.neighbors[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = depth;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}

/// Ordered snapshot sequence with a fixed node universe and split bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    pub snapshots: Vec<Snapshot>,
    /// Node universe size (max node count over all timestamps).
    pub n: usize,
    pub directed: bool,
    pub train_end: usize,
    pub val_end: usize,
}

impl TemporalGraph {
    pub fn new(snapshots: Vec<Snapshot>, n: usize, directed: bool) -> Result<Self> {
        for (i, s) in snapshots.iter().enumerate() {
            if s.index != i {
                return Err(Error::Data(format!(
                    "snapshot indices must be contiguous: expected {i}, got {}",
                    s.index
                )));
            }
        }
        let t = snapshots.len();
        // The 70/10/20 rule needs at least 5 timestamps; shorter sequences
        // get a degenerate split so they can still be inspected, and the
        // trainer rejects them up front.
        let (train_end, val_end) = if t >= 5 {
            split_timestamps(t)?
        } else {
            (t.saturating_sub(1).max(1), t.max(1))
        };
        Ok(TemporalGraph {
            snapshots,
            n,
            directed,
            train_end,
            val_end,
        })
    }

    pub fn timestamps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshot(&self, t: usize) -> &Snapshot {
        &self.snapshots[t]
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.train_end
    }

    pub fn val_range(&self) -> std::ops::Range<usize> {
        self.train_end..self.val_end
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.val_end..self.timestamps()
    }
}

/// 70/10/20 chronological split: `train_end = round(0.7 T)`,
/// `val_end = train_end + round(0.1 T)`, remainder is test.
pub fn split_timestamps(t: usize) -> Result<(usize, usize)> {
    if t < 5 {
        return Err(Error::Data(format!(
            "need at least 5 timestamps to split, got {t}"
        )));
    }
    let train = (0.7 * t as f64).round() as usize;
    let val = (0.1 * t as f64).round() as usize;
    let train_end = train.max(1);
    let val_end = (train_end + val.max(1)).min(t);
    Ok((train_end, val_end))
}

/// Dense zero-padded adjacency of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedAdjacency {
    pub t: usize,
    pub n: usize,
    /// Row-major n*n weights.
    pub matrix: Vec<f64>,
}

impl PaddedAdjacency {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.matrix[u * self.n + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.matrix[u * self.n..(u + 1) * self.n]
    }
}

/// Materialize the n-by-n padded matrix; undirected snapshots are
/// symmetrized. Duplicate edges keep the last written weight.
pub fn pad_adjacency(s: &Snapshot, n: usize, directed: bool) -> Result<PaddedAdjacency> {
    let mut matrix = vec![0.0; n * n];
    for &(u, v, w) in &s.edges {
        if u >= n || v >= n {
            return Err(Error::Contract(format!(
                "edge ({u}, {v}) outside padded extent {n}"
            )));
        }
        matrix[u * n + v] = w;
        if !directed {
            matrix[v * n + u] = w;
        }
    }
    Ok(PaddedAdjacency {
        t: s.index,
        n,
        matrix,
    })
}

/// Unweighted hop distance on the padded matrix's connectivity, ignoring
/// edge direction. `None` means unreachable.
pub fn shortest_path_length(adj: &PaddedAdjacency, u: usize, v: usize) -> Option<usize> {
    let n = adj.n;
    assert!(u < n && v < n, "node id outside universe");
    if u == v {
        return Some(0);
    }
    let mut dist = vec![usize::MAX; n];
    dist[u] = 0;
    let mut frontier = vec![u];
    let mut depth = 0;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &a in &frontier {
            for b in 0..n {
                if dist[b] == usize::MAX && (adj.at(a, b) != 0.0 || adj.at(b, a) != 0.0) {
                    if b == v {
                        return Some(depth);
                    }
                    dist[b] = depth;
                    next.push(b);
                }
            }
        }
        frontier = next;
    }
    None
}

/// Reference/near/far triples for one timestamp; every triple satisfies
/// `sp(ref, near) < sp(ref, far)` with unreachable read as infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub t: usize,
    pub triples: Vec<(usize, usize, usize)>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Sample one `(reference, near, far)` triple per eligible node: near is a
/// uniform choice among nodes within `k_near` hops, far among all strictly
/// farther nodes (unreachable included). Nodes lacking either pool are
/// skipped, so the result may be empty.
pub fn sample_triplets(s: &Snapshot, n: usize, k_near: usize, rng: &mut Rng) -> Result<TripletSet> {
    if k_near < 1 {
        return Err(Error::Contract("k_near must be >= 1".into()));
    }
    let mut triples = Vec::new();
    for v in 0..n {
        if s.neighbors[v].is_empty() {
            continue; // isolated reference contributes no triple
        }
        let depths = s.bfs_depths(v, k_near);
        let mut near = Vec::new();
        let mut far_count = 0usize;
        for (u, &d) in depths.iter().enumerate() {
            if u == v {
                continue;
            }
            if d <= k_near {
                near.push(u);
            } else {
                far_count += 1;
            }
        }
        if near.is_empty() || far_count == 0 {
            continue;
        }
        let near_pick = near[rng.index(near.len())];
        let far_rank = rng.index(far_count);
        let mut seen = 0;
        let mut far_pick = usize::MAX;
        for (u, &d) in depths.iter().enumerate() {
            if u != v && d > k_near {
                if seen == far_rank {
                    far_pick = u;
                    break;
                }
                seen += 1;
            }
        }
        debug_assert!(far_pick != usize::MAX);
        triples.push((v, near_pick, far_pick));
    }
    Ok(TripletSet {
        t: s.index,
        triples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n_nodes: usize) -> Snapshot {
        let edges = (0..n_nodes - 1).map(|i| (i, i + 1, 1.0)).collect();
        Snapshot::new(0, edges, n_nodes).unwrap()
    }

    #[test]
    fn snapshot_rejects_out_of_universe_endpoints() {
        assert!(Snapshot::new(0, vec![(0, 5, 1.0)], 3).is_err());
    }

    #[test]
    fn split_matches_published_ratios() {
        assert_eq!(split_timestamps(90).unwrap(), (63, 72)); // 63/9/18
        assert_eq!(split_timestamps(88).unwrap(), (62, 71)); // 62/9/17
        assert_eq!(split_timestamps(50).unwrap(), (35, 40)); // 35/5/10
        assert_eq!(split_timestamps(10).unwrap(), (7, 8)); // 7/1/2
        assert!(split_timestamps(4).is_err());
    }

    #[test]
    fn pad_empty_snapshot_is_all_zero() {
        let s = Snapshot::new(0, vec![], 4).unwrap();
        let adj = pad_adjacency(&s, 4, false).unwrap();
        assert!(adj.matrix.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pad_weighted_and_unweighted_entries() {
        let s = Snapshot::new(0, vec![(0, 1, 3.5)], 3).unwrap();
        let adj = pad_adjacency(&s, 3, true).unwrap();
        assert_eq!(adj.at(0, 1), 3.5);
        assert_eq!(adj.at(1, 0), 0.0);

        let s = Snapshot::new(0, vec![(0, 1, 1.0)], 3).unwrap();
        let adj = pad_adjacency(&s, 3, false).unwrap();
        assert_eq!(adj.at(0, 1), 1.0);
        assert_eq!(adj.at(1, 0), 1.0);
    }

    #[test]
    fn padded_row_sum_equals_weighted_out_degree() {
        let mut rng = Rng::seed(11);
        for _ in 0..20 {
            let n = 6;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in 0..n {
                    if u != v && rng.uniform() < 0.3 {
                        edges.push((u, v, rng.uniform_in(0.5, 2.0)));
                    }
                }
            }
            let s = Snapshot::new(0, edges.clone(), n).unwrap();
            let adj = pad_adjacency(&s, n, true).unwrap();
            for u in 0..n {
                let row_sum: f64 = adj.row(u).iter().sum();
                let degree: f64 = edges
                    .iter()
                    .filter(|&&(a, _, _)| a == u)
                    .map(|&(_, _, w)| w)
                    .sum();
                assert!((row_sum - degree).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shortest_path_cases() {
        let s = path_graph(3);
        let adj = pad_adjacency(&s, 3, false).unwrap();
        assert_eq!(shortest_path_length(&adj, 1, 1), Some(0));
        assert_eq!(shortest_path_length(&adj, 0, 1), Some(1));
        assert_eq!(shortest_path_length(&adj, 0, 2), Some(2));
        // BFS oracle over the adjacency lists must agree.
        let depths = s.bfs_depths(0, usize::MAX);
        assert_eq!(depths[2], 2);
    }

    #[test]
    fn shortest_path_unreachable() {
        let s = Snapshot::new(0, vec![(0, 1, 1.0)], 4).unwrap();
        let adj = pad_adjacency(&s, 4, false).unwrap();
        assert_eq!(shortest_path_length(&adj, 0, 3), None);
    }

    #[test]
    fn triplets_satisfy_distance_constraint() {
        let mut rng = Rng::seed(21);
        for trial in 0..20 {
            let n = 8;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.uniform() < 0.25 {
                        edges.push((u, v, 1.0));
                    }
                }
            }
            let s = Snapshot::new(0, edges, n).unwrap();
            let adj = pad_adjacency(&s, n, false).unwrap();
            let mut srng = rng.derive(trial);
            let ts = sample_triplets(&s, n, 1, &mut srng).unwrap();
            for &(r, near, far) in &ts.triples {
                let dn = shortest_path_length(&adj, r, near).expect("near reachable");
                let df = shortest_path_length(&adj, r, far);
                match df {
                    Some(df) => assert!(dn < df, "sp({r},{near})={dn} !< sp({r},{far})={df}"),
                    None => {} // infinite is strictly farther
                }
            }
        }
    }

    #[test]
    fn isolated_node_contributes_no_triple() {
        let s = Snapshot::new(0, vec![(0, 1, 1.0)], 3).unwrap();
        let mut rng = Rng::seed(1);
        let ts = sample_triplets(&s, 3, 1, &mut rng).unwrap();
        assert!(ts.triples.iter().all(|&(r, _, _)| r != 2));
    }

    #[test]
    fn path_graph_triplet_pools_match_enumeration() {
        // 0-1-2-3 with k_near=1: from node 0, near must be {1}, far ⊆ {2,3}.
        let s = path_graph(4);
        for seed in 0..50 {
            let mut rng = Rng::seed(seed);
            let ts = sample_triplets(&s, 4, 1, &mut rng).unwrap();
            let from0: Vec<_> = ts.triples.iter().filter(|t| t.0 == 0).collect();
            assert_eq!(from0.len(), 1);
            let &&(_, near, far) = from0.first().unwrap();
            assert_eq!(near, 1);
            assert!(far == 2 || far == 3);
        }
    }

    #[test]
    fn triplet_sampling_is_reproducible() {
        let s = path_graph(6);
        let mut a = Rng::seed(33);
        let mut b = Rng::seed(33);
        let ta = sample_triplets(&s, 6, 1, &mut a).unwrap();
        let tb = sample_triplets(&s, 6, 1, &mut b).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn split_bounds_are_ordered() {
        for t in 5..200 {
            let (train_end, val_end) = split_timestamps(t).unwrap();
            assert!(0 < train_end && train_end < val_end && val_end <= t, "T={t}");
        }
    }
}
