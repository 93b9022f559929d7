//! Compressed sparse follower graph and the structural statistics computed on
//! it: degrees, local clustering, weak components, quantile-defined cores and
//! the moderate-users subgraph.
//!
//! Orientation: an edge `u -> v` means `v` follows `u`, so information flows
//! along edges. Out-neighbors are followers; in-neighbors are followees.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::AccountId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FollowerGraph {
    ids: Vec<AccountId>,
    index: HashMap<AccountId, usize>,
    out_offsets: Vec<usize>,
    out_targets: Vec<usize>,
    in_offsets: Vec<usize>,
    in_sources: Vec<usize>,
}

fn csr(n: usize, pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; n + 1];
    for &(a, _) in pairs {
        offsets[a + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut targets = vec![0usize; pairs.len()];
    for &(a, b) in pairs {
        targets[fill[a]] = b;
        fill[a] += 1;
    }
    for i in 0..n {
        targets[offsets[i]..offsets[i + 1]].sort_unstable();
    }
    (offsets, targets)
}

impl FollowerGraph {
    /// Build from account ids and `(followee, follower)` pairs. Node indices
    /// follow ascending account id. Duplicates and self-loops are dropped.
    pub fn from_edges(
        ids: impl IntoIterator<Item = AccountId>,
        edges: impl IntoIterator<Item = (AccountId, AccountId)>,
    ) -> Self {
        let edges: Vec<(AccountId, AccountId)> = edges.into_iter().collect();
        let mut all: Vec<AccountId> = ids.into_iter().collect();
        all.extend(edges.iter().flat_map(|&(a, b)| [a, b]));
        all.sort_unstable();
        all.dedup();
        let index: HashMap<AccountId, usize> =
            all.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let pairs = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (index[&a], index[&b]));
        Self::from_index_edges(all, pairs)
    }

    /// Build from sorted unique ids and edges over dense indices.
    pub(crate) fn from_index_edges(
        ids: Vec<AccountId>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let n = ids.len();
        let mut pairs: Vec<(usize, usize)> = edges.into_iter().filter(|(a, b)| a != b).collect();
        pairs.sort_unstable();
        pairs.dedup();
        let (out_offsets, out_targets) = csr(n, &pairs);
        let rev: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let (in_offsets, in_sources) = csr(n, &rev);
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self {
            ids,
            index,
            out_offsets,
            out_targets,
            in_offsets,
            in_sources,
        }
    }

    /// Graph over accounts `0..n` (ids equal indices).
    pub fn from_index_pairs(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self::from_index_edges((0..n as AccountId).collect(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_targets.len()
    }

    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn id(&self, v: usize) -> AccountId {
        self.ids[v]
    }

    pub fn index_of(&self, id: AccountId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Followers of `v`.
    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out_targets[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    /// Accounts `v` follows.
    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.in_sources[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    /// Number of followers.
    pub fn outdegree(&self, v: usize) -> usize {
        self.out_offsets[v + 1] - self.out_offsets[v]
    }

    /// Number of followees.
    pub fn indegree(&self, v: usize) -> usize {
        self.in_offsets[v + 1] - self.in_offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.out_neighbors(u).binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| self.out_neighbors(u).iter().map(move |&v| (u, v)))
    }

    /// Sorted union of in- and out-neighbors.
    pub fn undirected_neighbors(&self, v: usize) -> Vec<usize> {
        let (a, b) = (self.out_neighbors(v), self.in_neighbors(v));
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let next = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    x
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    x
                }
                (Some(_), Some(&y)) => {
                    j += 1;
                    y
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (None, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            out.push(next);
        }
        out
    }

    /// Subgraph induced by `members` (indices into `self`). Account ids are
    /// carried over; the result has its own dense indexing.
    pub fn induced_subgraph(&self, members: &[usize]) -> FollowerGraph {
        let mut sorted: Vec<usize> = members.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut local = vec![usize::MAX; self.node_count()];
        for (i, &v) in sorted.iter().enumerate() {
            local[v] = i;
        }
        let ids = sorted.iter().map(|&v| self.ids[v]).collect();
        let edges: Vec<(usize, usize)> = sorted
            .iter()
            .flat_map(|&u| {
                let local = &local;
                self.out_neighbors(u)
                    .iter()
                    .filter(move |&&v| local[v] != usize::MAX)
                    .map(move |&v| (local[u], local[v]))
            })
            .collect();
        Self::from_index_edges(ids, edges)
    }

    /// Local clustering coefficient: directed edges among the undirected
    /// neighborhood over ordered pairs, divided by `g (g - 1)`. Zero when the
    /// node has fewer than two neighbors.
    pub fn clustering_coefficient(&self, v: usize) -> Result<f64> {
        if v >= self.node_count() {
            return Err(Error::NodeOutOfRange(v));
        }
        Ok(self.clustering_unchecked(v))
    }

    pub fn clustering_of(&self, id: AccountId) -> Result<f64> {
        let v = self.index_of(id).ok_or(Error::UnknownAccount(id))?;
        Ok(self.clustering_unchecked(v))
    }

    fn clustering_unchecked(&self, v: usize) -> f64 {
        let nei = self.undirected_neighbors(v);
        let g = nei.len();
        if g < 2 {
            return 0.0;
        }
        let mut links = 0usize;
        for &j in &nei {
            links += sorted_intersection_len(self.out_neighbors(j), &nei);
        }
        links as f64 / (g as f64 * (g - 1) as f64)
    }

    pub fn all_clustering(&self) -> Vec<f64> {
        (0..self.node_count())
            .into_par_iter()
            .map(|v| self.clustering_unchecked(v))
            .collect()
    }

    pub fn degrees(&self) -> Vec<Degrees> {
        (0..self.node_count())
            .map(|v| Degrees {
                outdegree: self.outdegree(v),
                indegree: self.indegree(v),
            })
            .collect()
    }

    /// Weakly connected components, largest first (ties: smallest member
    /// first). Each component is sorted.
    pub fn weak_components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        let mut queue = VecDeque::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            queue.push_back(s);
            let mut comp = vec![];
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &w in self.out_neighbors(u).iter().chain(self.in_neighbors(u)) {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    pub fn giant_component(&self) -> Vec<usize> {
        self.weak_components()
            .into_iter()
            .next()
            .unwrap_or_default()
    }

    pub fn is_weakly_connected(&self) -> bool {
        self.weak_components().len() <= 1
    }

    /// Write the text graph cache: a header with node and edge counts,
    /// then one account id per line, then `u<TAB>v` index pairs.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "diversigraph-graph 1")?;
        writeln!(w, "nodes {}", self.node_count())?;
        writeln!(w, "edges {}", self.edge_count())?;
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        for (u, v) in self.edges() {
            writeln!(w, "{u}\t{v}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::GraphCache(m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(Error::from)
        };
        if next()? != "diversigraph-graph 1" {
            return Err(bad("missing header"));
        }
        let count = |line: String, key: &str| -> Result<usize> {
            line.strip_prefix(key)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected `{key} <count>`")))
        };
        let n = count(next()?, "nodes")?;
        let m = count(next()?, "edges")?;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(
                next()?
                    .trim()
                    .parse::<AccountId>()
                    .map_err(|_| bad("bad id"))?,
            );
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("ids not strictly ascending"));
        }
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = next()?;
            let (a, b) = line.split_once('\t').ok_or_else(|| bad("bad edge line"))?;
            let a: usize = a.parse().map_err(|_| bad("bad edge index"))?;
            let b: usize = b.parse().map_err(|_| bad("bad edge index"))?;
            if a >= n || b >= n {
                return Err(bad("edge index out of range"));
            }
            edges.push((a, b));
        }
        let g = Self::from_index_edges(ids, edges);
        if g.edge_count() != m {
            return Err(bad("duplicate or self-loop edges"));
        }
        Ok(g)
    }
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Degrees {
    /// Followers.
    pub outdegree: usize,
    /// Followees.
    pub indegree: usize,
}

/// Inverse-CDF (type 1) quantile: the smallest data value whose empirical
/// CDF reaches `p`. Always an attained value.
pub fn quantile_type1(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // guard against n*p landing a hair above an integer
    let k = (n as f64 * p - 1e-9).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} = {x} is outside [0, 1]"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreSpec {
    pub s: f64,
    pub t: f64,
    pub outdegree_threshold: f64,
    pub news_threshold: f64,
    /// Member indices in the parent graph, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Core {
    pub spec: CoreSpec,
    pub subgraph: FollowerGraph,
}

impl Core {
    pub fn is_empty(&self) -> bool {
        self.spec.members.is_empty()
    }
}

/// Membership mask for the quantile core without building the subgraph.
pub fn core_members(g: &FollowerGraph, newscounts: &[u64], s: f64, t: f64) -> Result<CoreSpec> {
    check_unit("s", s)?;
    check_unit("t", t)?;
    if newscounts.len() != g.node_count() {
        return Err(Error::InvalidParameter(format!(
            "{} news counts for {} nodes",
            newscounts.len(),
            g.node_count()
        )));
    }
    if g.node_count() == 0 {
        return Ok(CoreSpec {
            s,
            t,
            outdegree_threshold: 0.0,
            news_threshold: 0.0,
            members: vec![],
        });
    }
    let od: Vec<f64> = (0..g.node_count()).map(|v| g.outdegree(v) as f64).collect();
    let nc: Vec<f64> = newscounts.iter().map(|&c| c as f64).collect();
    let od_q = quantile_type1(&od, s);
    let nc_q = quantile_type1(&nc, t);
    let members = (0..g.node_count())
        .filter(|&v| od[v] >= od_q && nc[v] >= nc_q)
        .collect();
    Ok(CoreSpec {
        s,
        t,
        outdegree_threshold: od_q,
        news_threshold: nc_q,
        members,
    })
}

/// Accounts at or above the `s` quantile of outdegree and the `t` quantile of
/// news-post count, with the subgraph they induce.
pub fn induce_core(g: &FollowerGraph, newscounts: &[u64], s: f64, t: f64) -> Result<Core> {
    let spec = core_members(g, newscounts, s, t)?;
    let subgraph = g.induced_subgraph(&spec.members);
    Ok(Core { spec, subgraph })
}

#[derive(Debug, Clone)]
pub struct ModerateSubgraph {
    /// Indices in the parent graph, ascending.
    pub members: Vec<usize>,
    pub subgraph: FollowerGraph,
}

/// Giant weak component of accounts with outdegree in `[Q.25, Q.75]` and news
/// count strictly below `Q.75`.
pub fn moderate_subgraph(g: &FollowerGraph, newscounts: &[u64]) -> Result<ModerateSubgraph> {
    if newscounts.len() != g.node_count() {
        return Err(Error::InvalidParameter(
            "news counts do not match graph".into(),
        ));
    }
    if g.node_count() == 0 {
        return Ok(ModerateSubgraph {
            members: vec![],
            subgraph: FollowerGraph::default(),
        });
    }
    let od: Vec<f64> = (0..g.node_count()).map(|v| g.outdegree(v) as f64).collect();
    let nc: Vec<f64> = newscounts.iter().map(|&c| c as f64).collect();
    let (lo, hi) = (quantile_type1(&od, 0.25), quantile_type1(&od, 0.75));
    let news_hi = quantile_type1(&nc, 0.75);
    let qualifying: Vec<usize> = (0..g.node_count())
        .filter(|&v| od[v] >= lo && od[v] <= hi && nc[v] < news_hi)
        .collect();
    let sub = g.induced_subgraph(&qualifying);
    let giant = sub.giant_component();
    let members: Vec<usize> = giant.iter().map(|&i| qualifying[i]).collect();
    let subgraph = sub.induced_subgraph(&giant);
    Ok(ModerateSubgraph { members, subgraph })
}

/// Block shares of connectivity, indexed `[source block][target block]` with
/// block 0 = core and 1 = periphery. Information flows source -> target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareReport {
    pub edge_counts: [[u64; 2]; 2],
    pub edge_shares: [[f64; 2]; 2],
    /// Upper bound on tweets received: tweets sent times news-active followers.
    pub tweet_volume: [[f64; 2]; 2],
    pub tweet_shares: [[f64; 2]; 2],
}

pub fn connectivity_shares(
    g: &FollowerGraph,
    core: &[usize],
    tweets_sent: &[u64],
) -> Result<ShareReport> {
    if tweets_sent.len() != g.node_count() {
        return Err(Error::InvalidParameter(
            "tweet counts do not match graph".into(),
        ));
    }
    let mut block = vec![1usize; g.node_count()];
    for &v in core {
        if v >= g.node_count() {
            return Err(Error::NodeOutOfRange(v));
        }
        block[v] = 0;
    }
    let mut edge_counts = [[0u64; 2]; 2];
    let mut tweet_volume = [[0f64; 2]; 2];
    for (u, v) in g.edges() {
        edge_counts[block[u]][block[v]] += 1;
        if tweets_sent[v] > 0 {
            tweet_volume[block[u]][block[v]] += tweets_sent[u] as f64;
        }
    }
    let total_e: u64 = edge_counts.iter().flatten().sum();
    let total_t: f64 = tweet_volume.iter().flatten().sum();
    let norm = |x: f64, tot: f64| if tot > 0.0 { x / tot } else { 0.0 };
    let mut edge_shares = [[0f64; 2]; 2];
    let mut tweet_shares = [[0f64; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            edge_shares[a][b] = norm(edge_counts[a][b] as f64, total_e as f64);
            tweet_shares[a][b] = norm(tweet_volume[a][b], total_t);
        }
    }
    Ok(ShareReport {
        edge_counts,
        edge_shares,
        tweet_volume,
        tweet_shares,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, e: &[(usize, usize)]) -> FollowerGraph {
        FollowerGraph::from_index_pairs(n, e.iter().copied())
    }

    #[test]
    fn orientation_and_degrees() {
        // 1 follows 0, 2 follows 0
        let gr = g(3, &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(gr.out_neighbors(0), &[1, 2]);
        assert_eq!(gr.in_neighbors(2), &[0, 1]);
        assert_eq!(gr.outdegree(0), 2);
        assert_eq!(gr.indegree(2), 2);
        assert!(gr.has_edge(1, 2) && !gr.has_edge(2, 1));
    }

    #[test]
    fn clustering_examples() {
        let full = g(3, &[(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]);
        for v in 0..3 {
            assert_eq!(full.clustering_coefficient(v).unwrap(), 1.0);
        }
        let cycle = g(3, &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(cycle.clustering_coefficient(0).unwrap(), 0.5);
        let star = g(4, &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(star.clustering_coefficient(0).unwrap(), 0.0);
        assert_eq!(star.clustering_coefficient(1).unwrap(), 0.0);
        assert!(matches!(
            star.clustering_coefficient(9),
            Err(Error::NodeOutOfRange(9))
        ));
        assert!(matches!(
            star.clustering_of(77),
            Err(Error::UnknownAccount(77))
        ));
    }

    #[test]
    fn quantile_rule() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type1(&v, 0.0), 1.0);
        assert_eq!(quantile_type1(&v, 0.25), 1.0);
        assert_eq!(quantile_type1(&v, 0.26), 2.0);
        assert_eq!(quantile_type1(&v, 0.75), 3.0);
        assert_eq!(quantile_type1(&v, 1.0), 4.0);
    }

    #[test]
    fn core_with_ties_keeps_everyone() {
        let gr = g(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let c = induce_core(&gr, &[2, 2, 2, 2], 0.9, 0.9).unwrap();
        assert_eq!(c.spec.members, vec![0, 1, 2, 3]);
        assert_eq!(c.subgraph.edge_count(), 4);
        assert!(induce_core(&gr, &[2, 2, 2, 2], 1.1, 0.9).is_err());
    }

    #[test]
    fn empty_core_is_not_an_error() {
        // top outdegree node and top news node differ, so the 1.0/1.0 core is empty
        let gr = g(3, &[(0, 1), (0, 2)]);
        let c = induce_core(&gr, &[0, 5, 1], 1.0, 1.0).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.subgraph.node_count(), 0);
    }

    #[test]
    fn components() {
        let gr = g(7, &[(0, 1), (1, 2), (3, 4), (4, 5), (5, 3), (4, 6)]);
        let comps = gr.weak_components();
        assert_eq!(comps[0], vec![3, 4, 5, 6]);
        assert_eq!(comps[1], vec![0, 1, 2]);
        let path = g(4, &[(0, 1), (2, 1), (2, 3)]);
        assert_eq!(path.giant_component(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn shares_all_core() {
        let gr = g(3, &[(0, 1), (1, 2)]);
        let r = connectivity_shares(&gr, &[0, 1, 2], &[1, 1, 1]).unwrap();
        assert_eq!(r.edge_shares[0][0], 1.0);
        assert_eq!(r.tweet_shares[0][0], 1.0);
    }

    #[test]
    fn shares_hand_enumeration() {
        // core = {0}; 0 -> 1, 0 -> 2, 1 -> 2, 2 -> 0
        let gr = g(3, &[(0, 1), (0, 2), (1, 2), (2, 0)]);
        let sent = [4, 0, 2];
        let r = connectivity_shares(&gr, &[0], &sent).unwrap();
        assert_eq!(r.edge_counts, [[0, 2], [1, 1]]);
        // volume: 0->1 follower inactive; 0->2: 4; 1->2: 0; 2->0: 2
        assert_eq!(r.tweet_volume, [[0.0, 4.0], [2.0, 0.0]]);
        assert!((r.tweet_shares[0][1] - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cache_round_trip() {
        let gr = FollowerGraph::from_edges([42], [(10, 20), (20, 30), (30, 10)]);
        let mut buf = Vec::new();
        gr.write_cache(&mut buf).unwrap();
        let back = FollowerGraph::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back, gr);
        assert!(FollowerGraph::read_cache("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn induced_subgraph_keeps_ids() {
        let gr = FollowerGraph::from_edges([], [(5, 6), (6, 7), (7, 5)]);
        let sub = gr.induced_subgraph(&[0, 2]);
        assert_eq!(sub.ids(), &[5, 7]);
        assert_eq!(sub.edges().collect::<Vec<_>>(), vec![(1, 0)]);
    }
}
