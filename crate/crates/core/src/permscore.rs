//! Permutation quality: how well a node ordering concentrates ties near the
//! diagonal of the permuted adjacency matrix.
//!
//! The scoring matrix gives probability 1 to cells adjacent to the diagonal
//! and loses `1/n` per additional step of distance, with no self-loops. A
//! permutation's log-likelihood sums `ln z` over the present edges only.
//! Significance comes from a bootstrap of worst-case displacements.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{quantile_sorted, FollowerGraph};
use crate::rng;
use crate::slantstats::AccountSummary;
use crate::AccountId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OutgoingSlant,
    IncomingSlant,
    Spectral,
    Cnm,
    Random,
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::OutgoingSlant => "outgoing_slant",
            Provenance::IncomingSlant => "incoming_slant",
            Provenance::Spectral => "spectral",
            Provenance::Cnm => "cnm",
            Provenance::Random => "random",
            Provenance::External => "external",
        })
    }
}

/// Bijection from node index to rank `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    rank: Vec<usize>,
    pub provenance: Provenance,
}

impl Permutation {
    /// `order[k]` is the node placed at rank `k + 1`.
    pub fn from_order(order: &[usize], provenance: Provenance) -> Result<Self> {
        let n = order.len();
        let mut rank = vec![0usize; n];
        for (k, &v) in order.iter().enumerate() {
            if v >= n || rank[v] != 0 {
                return Err(Error::NotAPermutation(n));
            }
            rank[v] = k + 1;
        }
        Ok(Self { rank, provenance })
    }

    /// `ranks[v]` is the 1-based rank of node `v`.
    pub fn from_ranks(ranks: Vec<usize>, provenance: Provenance) -> Result<Self> {
        let n = ranks.len();
        let mut seen = vec![false; n];
        for &r in &ranks {
            if r == 0 || r > n || std::mem::replace(&mut seen[r - 1], true) {
                return Err(Error::NotAPermutation(n));
            }
        }
        Ok(Self {
            rank: ranks,
            provenance,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rank: (1..=n).collect(),
            provenance: Provenance::External,
        }
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }

    pub fn rank(&self, v: usize) -> usize {
        self.rank[v]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.rank
    }

    /// Nodes in rank order.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.rank.len()];
        for (v, &r) in self.rank.iter().enumerate() {
            order[r - 1] = v;
        }
        order
    }

    pub fn reversed(&self) -> Self {
        let n = self.len();
        Self {
            rank: self.rank.iter().map(|r| n + 1 - r).collect(),
            provenance: self.provenance,
        }
    }
}

/// Scoring-matrix entry for ranks `i`, `j` in `1..=n`.
pub fn z_value(i: usize, j: usize, n: usize) -> f64 {
    debug_assert!(i >= 1 && j >= 1 && i <= n && j <= n);
    z_at_distance(i.abs_diff(j), n)
}

fn z_at_distance(d: usize, n: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 1.0,
        d => 1.0 - (d - 1) as f64 / n as f64,
    }
}

/// Largest distance reachable from row `i`.
fn max_distance(i: usize, n: usize) -> usize {
    (i - 1).max(n - i)
}

/// Log-likelihood over an explicit edge list on `perm.len()` nodes.
pub fn loglik_edges(edges: &[(usize, usize)], perm: &Permutation) -> Result<f64> {
    let n = perm.len();
    let mut ll = 0.0;
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::NodeOutOfRange(u.max(v)));
        }
        if u == v {
            return Err(Error::SelfLoop(u));
        }
        ll += z_value(perm.rank(u), perm.rank(v), n).ln();
    }
    Ok(ll)
}

pub fn perm_loglik(g: &FollowerGraph, perm: &Permutation) -> Result<f64> {
    if perm.len() != g.node_count() {
        return Err(Error::NotAPermutation(g.node_count()));
    }
    let n = perm.len();
    Ok(g.edges()
        .map(|(u, v)| z_value(perm.rank(u), perm.rank(v), n).ln())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlantKey {
    InMean,
    OutMean,
}

impl FromStr for SlantKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" | "in_mean" | "incoming" => Ok(SlantKey::InMean),
            "out" | "out_mean" | "outgoing" => Ok(SlantKey::OutMean),
            other => Err(Error::InvalidParameter(format!(
                "unknown slant key {other:?}"
            ))),
        }
    }
}

/// Order the nodes of `sub` by ascending mean slant, ties by account id.
pub fn slant_permutation(
    sub: &FollowerGraph,
    summaries: &[AccountSummary],
    key: SlantKey,
) -> Result<Permutation> {
    let by_id: HashMap<AccountId, &AccountSummary> =
        summaries.iter().map(|s| (s.account_id, s)).collect();
    let mut keyed = Vec::with_capacity(sub.node_count());
    for v in 0..sub.node_count() {
        let id = sub.id(v);
        let row = by_id.get(&id).ok_or(Error::UnknownAccount(id))?;
        let val = match key {
            SlantKey::InMean => row.in_mean,
            SlantKey::OutMean => row.out_mean,
        }
        .ok_or_else(|| Error::InvalidParameter(format!("account {id} has no {key:?} slant")))?;
        keyed.push((val, id, v));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.iter().map(|k| k.2).collect();
    let prov = match key {
        SlantKey::InMean => Provenance::IncomingSlant,
        SlantKey::OutMean => Provenance::OutgoingSlant,
    };
    Permutation::from_order(&order, prov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalConfig {
    /// Fraction of nodes displaced per replicate.
    pub frac: f64,
    pub reps: usize,
    /// Quantile of the reduction distribution.
    pub q: f64,
    pub seed: u64,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        Self {
            frac: 0.05,
            reps: 1000,
            q: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalValue {
    pub base_loglik: f64,
    pub critical_value: f64,
    pub reduction_quantile: f64,
    pub sampled_per_rep: usize,
    pub reductions: Vec<f64>,
}

/// Nodes displaced in replicate `rep`, ascending.
pub fn sampled_nodes(n: usize, k: usize, seed: u64, rep: usize) -> Vec<usize> {
    let mut r = rng::keyed(seed, rep as u64);
    let mut v = sample(&mut r, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Bootstrap threshold below which another ordering's log-likelihood counts
/// as a worse description of the graph than `perm`.
///
/// Each replicate displaces `ceil(frac * n)` uniformly chosen nodes: every
/// edge touching one of them is scored at the largest distance its source
/// row allows. The displacement is a per-edge bound, not a realizable
/// permutation. Edges with both endpoints displaced count once.
pub fn critical_value(
    g: &FollowerGraph,
    perm: &Permutation,
    cfg: &CriticalConfig,
) -> Result<CriticalValue> {
    let n = g.node_count();
    if perm.len() != n {
        return Err(Error::NotAPermutation(n));
    }
    if !(cfg.frac > 0.0) || cfg.frac * n as f64 + 1e-9 < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "frac * n = {} displaces no node",
            cfg.frac * n as f64
        )));
    }
    if cfg.reps == 0 || !(0.0..=1.0).contains(&cfg.q) {
        return Err(Error::InvalidParameter(
            "reps must be positive and q in [0, 1]".into(),
        ));
    }
    let k = ((cfg.frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let base = perm_loglik(g, perm)?;

    // loss of each out-edge of u when its source row is pushed to the edge
    let loss = |u: usize, v: usize| -> f64 {
        let i = perm.rank(u);
        let orig = z_value(i, perm.rank(v), n).ln();
        let worst = z_at_distance(max_distance(i, n), n).ln();
        orig - worst
    };

    let reductions: Vec<f64> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let nodes = sampled_nodes(n, k, cfg.seed, rep);
            let mut mask = vec![false; n];
            for &s in &nodes {
                mask[s] = true;
            }
            let mut red = 0.0;
            for &s in &nodes {
                for &v in g.out_neighbors(s) {
                    red += loss(s, v);
                }
                for &u in g.in_neighbors(s) {
                    if !mask[u] {
                        red += loss(u, s);
                    }
                }
            }
            red
        })
        .collect();

    let mut sorted = reductions.clone();
    sorted.sort_by(f64::total_cmp);
    let rq = quantile_sorted(&sorted, cfg.q);
    Ok(CriticalValue {
        base_loglik: base,
        critical_value: base - rq,
        reduction_quantile: rq,
        sampled_per_rep: k,
        reductions,
    })
}

/// `B` is a worse description than `A` when its log-likelihood falls below
/// `A`'s critical value.
pub fn worse_than(loglik_b: f64, critical_a: f64) -> bool {
    loglik_b < critical_a
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationScore {
    pub perm: String,
    pub loglik: f64,
    pub critical_value: Option<f64>,
    pub n: usize,
    pub edges: usize,
}

pub fn score(
    g: &FollowerGraph,
    perm: &Permutation,
    critical: Option<&CriticalConfig>,
) -> Result<PermutationScore> {
    let loglik = perm_loglik(g, perm)?;
    let critical_value = match critical {
        Some(cfg) => Some(critical_value(g, perm, cfg)?.critical_value),
        None => None,
    };
    Ok(PermutationScore {
        perm: perm.provenance.to_string(),
        loglik,
        critical_value,
        n: g.node_count(),
        edges: g.edge_count(),
    })
}

/// Permuted adjacency as `(rank(u), rank(v))` points, one per edge.
pub fn permuted_matrix_figure(g: &FollowerGraph, perm: &Permutation) -> Vec<(usize, usize)> {
    g.edges()
        .map(|(u, v)| (perm.rank(u), perm.rank(v)))
        .collect()
}

/// Uniformly random ordering keyed by `seed`.
pub fn random_permutation(n: usize, seed: u64) -> Permutation {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::keyed2(seed, 0x5045_524d, 0));
    Permutation::from_order(&order, Provenance::Random).expect("shuffle is a bijection")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_examples() {
        assert_eq!(z_value(1, 2, 3), 1.0);
        assert!((z_value(1, 3, 3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(z_value(1, 4, 4), 0.5);
        assert_eq!(z_value(2, 2, 4), 0.0);
        // farthest cell still positive
        assert!((z_value(1, 10, 10) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn z_matches_recurrence() {
        let n = 9;
        for i in 1..=n {
            let mut z = vec![0.0; n + 1];
            for j in 1..=n {
                z[j] = if j == i {
                    0.0
                } else if j + 1 == i || j == i + 1 {
                    1.0
                } else {
                    f64::NAN
                };
            }
            for j in i + 2..=n {
                z[j] = z[j - 1] - 1.0 / n as f64;
            }
            for j in (1..i.saturating_sub(1)).rev() {
                z[j] = z[j + 1] - 1.0 / n as f64;
            }
            for j in 1..=n {
                assert!((z[j] - z_value(i, j, n)).abs() < 1e-12, "i={i} j={j}");
            }
        }
    }

    #[test]
    fn loglik_examples() {
        let id3 = Permutation::identity(3);
        assert_eq!(loglik_edges(&[(0, 1), (1, 2)], &id3).unwrap(), 0.0);
        let l = loglik_edges(&[(0, 2)], &id3).unwrap();
        assert!((l - (2.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((l + 0.405465).abs() < 1e-6);
        let l = loglik_edges(&[(0, 3)], &Permutation::identity(4)).unwrap();
        assert!((l + std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            loglik_edges(&[(1, 1)], &id3),
            Err(Error::SelfLoop(1))
        ));
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::from_order(&[0, 0, 1], Provenance::External).is_err());
        assert!(Permutation::from_ranks(vec![1, 3, 3], Provenance::External).is_err());
        let p = Permutation::from_order(&[2, 0, 1], Provenance::External).unwrap();
        assert_eq!(p.ranks(), &[2, 3, 1]);
        assert_eq!(p.order(), vec![2, 0, 1]);
        assert_eq!(p.reversed().ranks(), &[2, 1, 3]);
    }

    #[test]
    fn reversal_leaves_loglik_unchanged() {
        let g = FollowerGraph::from_index_pairs(6, [(0, 3), (1, 5), (4, 2), (5, 0), (2, 3)]);
        let p = Permutation::from_order(&[3, 1, 5, 0, 2, 4], Provenance::External).unwrap();
        let a = perm_loglik(&g, &p).unwrap();
        let b = perm_loglik(&g, &p.reversed()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn summary(id: AccountId, in_mean: f64, out_mean: f64) -> AccountSummary {
        AccountSummary {
            account_id: id,
            out_mean: Some(out_mean),
            out_sd: 0.0,
            out_count: 1,
            out_quality_mean: None,
            in_mean: Some(in_mean),
            in_sd: 0.0,
            in_count: 1,
            in_quality_mean: None,
            outdegree: 0,
            indegree: 0,
            clustering_coefficient: 0.0,
            retweet_count: 0,
        }
    }

    #[test]
    fn slant_order_and_ties() {
        // ids a=1, b=2, c=3 with slants a:0, b:-1, c:+1
        let g = FollowerGraph::from_edges([1, 2, 3], []);
        let rows = [
            summary(1, 0.0, 0.0),
            summary(2, -1.0, 0.0),
            summary(3, 1.0, 0.0),
        ];
        let p = slant_permutation(&g, &rows, SlantKey::InMean).unwrap();
        assert_eq!(p.order(), vec![1, 0, 2]);
        // out_mean all tied: id ascending
        let p = slant_permutation(&g, &rows, SlantKey::OutMean).unwrap();
        assert_eq!(p.order(), vec![0, 1, 2]);
        assert_eq!(p.provenance, Provenance::OutgoingSlant);
    }

    #[test]
    fn banded_graph_critical_value_below_base() {
        let n = 30;
        let g =
            FollowerGraph::from_index_pairs(n, (0..n - 1).flat_map(|i| [(i, i + 1), (i + 1, i)]));
        let cfg = CriticalConfig {
            reps: 50,
            seed: 3,
            ..Default::default()
        };
        let cv = critical_value(&g, &Permutation::identity(n), &cfg).unwrap();
        assert_eq!(cv.base_loglik, 0.0);
        assert!(cv.reductions.iter().all(|&r| r > 0.0));
        assert!(cv.critical_value < 0.0);
    }

    #[test]
    fn critical_value_is_seed_deterministic() {
        let n = 40;
        let g = FollowerGraph::from_index_pairs(n, (0..n).map(|i| (i, (i * 7 + 3) % n)));
        let cfg = CriticalConfig {
            reps: 200,
            seed: 11,
            ..Default::default()
        };
        let p = random_permutation(n, 5);
        let a = critical_value(&g, &p, &cfg).unwrap();
        let b = critical_value(&g, &p, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.critical_value <= a.base_loglik);
    }

    #[test]
    fn single_rep_matches_row_scan_oracle() {
        let n = 20;
        let mut r = rng::keyed(99, 0);
        let mut pairs = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rand::Rng::random::<f64>(&mut r) < 0.15 {
                    pairs.push((u, v));
                }
            }
        }
        let g = FollowerGraph::from_index_pairs(n, pairs.iter().copied());
        let p = random_permutation(n, 4);
        let cfg = CriticalConfig {
            reps: 1,
            seed: 21,
            ..Default::default()
        };
        let cv = critical_value(&g, &p, &cfg).unwrap();

        let sampled = sampled_nodes(n, 1, 21, 0);
        let mut expected = 0.0;
        for &(u, v) in &pairs {
            if !(sampled.contains(&u) || sampled.contains(&v)) {
                continue;
            }
            let i = p.ranks()[u];
            // scan the whole row for its smallest positive entry
            let worst = (1..=n)
                .filter(|&j| j != i)
                .map(|j| z_value(i, j, n))
                .fold(f64::INFINITY, f64::min);
            expected += z_value(i, p.ranks()[v], n).ln() - worst.ln();
        }
        assert!((cv.reductions[0] - expected).abs() < 1e-12);
        assert!((cv.critical_value - (cv.base_loglik - expected)).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_maximizer_on_small_graph() {
        let n = 7;
        let g = FollowerGraph::from_index_pairs(
            n,
            [
                (0, 4),
                (4, 2),
                (2, 6),
                (6, 1),
                (1, 3),
                (3, 5),
                (5, 0),
                (2, 0),
            ],
        );
        let edges: Vec<_> = g.edges().collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut best = f64::NEG_INFINITY;
        let mut best_order = order.clone();
        // Heap's algorithm over all orderings
        fn heap(k: usize, a: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
            if k == 1 {
                f(a);
                return;
            }
            for i in 0..k {
                heap(k - 1, a, f);
                let j = if k % 2 == 0 { i } else { 0 };
                a.swap(j, k - 1);
            }
        }
        heap(n, &mut order, &mut |o: &[usize]| {
            let mut rank = vec![0; n];
            for (k, &v) in o.iter().enumerate() {
                rank[v] = k + 1;
            }
            let ll: f64 = edges
                .iter()
                .map(|&(u, v)| {
                    let d = rank[u].abs_diff(rank[v]);
                    if d == 1 {
                        0.0
                    } else {
                        (1.0 - (d as f64 - 1.0) / n as f64).ln()
                    }
                })
                .sum();
            if ll > best {
                best = ll;
                best_order = o.to_vec();
            }
        });
        let p = Permutation::from_order(&best_order, Provenance::External).unwrap();
        assert!((perm_loglik(&g, &p).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn critical_value_rejects_tiny_fraction() {
        let g = FollowerGraph::from_index_pairs(10, [(0, 1)]);
        let cfg = CriticalConfig {
            frac: 0.05,
            ..Default::default()
        };
        assert!(critical_value(&g, &Permutation::identity(10), &cfg).is_err());
    }

    #[test]
    fn thousand_random_slants_match_sort() {
        let mut r = rng::keyed(8, 8);
        let ids: Vec<AccountId> = (0..1000u64).map(|i| i * 3 + 7).collect();
        let g = FollowerGraph::from_edges(ids.iter().copied(), []);
        let rows: Vec<_> = ids
            .iter()
            .map(|&id| {
                // coarse grid forces plenty of ties
                let x = (rand::Rng::random_range(&mut r, -40..=40) as f64) / 10.0;
                summary(id, x, 0.0)
            })
            .collect();
        let p = slant_permutation(&g, &rows, SlantKey::InMean).unwrap();
        let mut want: Vec<(f64, AccountId)> = rows
            .iter()
            .map(|s| (s.in_mean.unwrap(), s.account_id))
            .collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<AccountId> = p.order().into_iter().map(|v| g.id(v)).collect();
        assert_eq!(got, want.into_iter().map(|w| w.1).collect::<Vec<_>>());
    }

    #[test]
    fn figure_points() {
        let g = FollowerGraph::from_index_pairs(3, [(0, 1), (1, 2)]);
        let p = Permutation::from_order(&[2, 1, 0], Provenance::External).unwrap();
        assert_eq!(permuted_matrix_figure(&g, &p), vec![(3, 2), (2, 1)]);
    }
}
