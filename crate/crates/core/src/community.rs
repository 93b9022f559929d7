//! Structure-only node orderings: spectral orderings from the smallest
//! nonzero Laplacian eigenvectors, and greedy-modularity (CNM) dendrogram
//! leaf order. Both work on the symmetrized graph: an undirected edge exists
//! when either direction is present.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ordered_float::OrderedFloat;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::FollowerGraph;
use crate::permscore::{
    critical_value, perm_loglik, worse_than, CriticalConfig, Permutation, Provenance,
};
use crate::rng;

/// Undirected adjacency restricted to `nodes`, in local indexing.
fn symmetric_adjacency(g: &FollowerGraph, nodes: &[usize]) -> Vec<Vec<usize>> {
    let mut local = vec![usize::MAX; g.node_count()];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    nodes
        .iter()
        .map(|&v| {
            g.undirected_neighbors(v)
                .into_iter()
                .filter(|&w| w != v && local[w] != usize::MAX)
                .map(|w| local[w])
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub k: usize,
    pub tol: f64,
    /// Matrix-vector product budget; `None` means `10 * n`.
    pub max_matvecs: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            k: 5,
            tol: 1e-8,
            max_matvecs: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    /// Smallest nonzero eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors over `nodes`, one per eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Graph indices of the component the spectrum belongs to.
    pub nodes: Vec<usize>,
    /// Index of the eigenvector chosen by `best_spectral_permutation`.
    pub chosen: Option<usize>,
    /// The leading nonzero eigenvalue is repeated, so its eigenvector (and
    /// hence the ordering) is not unique.
    pub degenerate: bool,
    pub matvecs: usize,
    pub warning: Option<String>,
}

fn laplacian_apply(adj: &[Vec<usize>], x: &[f64], out: &mut [f64]) {
    let row = |i: usize| adj[i].len() as f64 * x[i] - adj[i].iter().map(|&j| x[j]).sum::<f64>();
    if adj.len() >= 4096 {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = row(i));
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = row(i);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Remove the constant direction and the span of `basis`, twice.
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    let n = v.len() as f64;
    for _ in 0..2 {
        let mean = v.iter().sum::<f64>() / n;
        v.iter_mut().for_each(|x| *x -= mean);
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn random_vector(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// Smallest nonzero eigenpairs of the Laplacian of a connected graph.
///
/// Thick-restart Krylov iteration with full reorthogonalization on
/// `B = c I - L` with the all-ones vector deflated, so the wanted pairs are
/// the largest of `B`. Returns `(values ascending, vectors, residuals,
/// matvecs)`.
#[allow(clippy::type_complexity)]
pub fn laplacian_eigenpairs(
    adj: &[Vec<usize>],
    opts: &EigenOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>, usize)> {
    let n = adj.len();
    let dim = n.saturating_sub(1);
    let k = opts.k.min(dim);
    if k == 0 {
        return Ok((vec![], vec![], vec![], 0));
    }
    let dmax = adj.iter().map(Vec::len).max().unwrap_or(0) as f64;
    let c = 2.0 * dmax + 1.0;
    let max_mv = opts.max_matvecs.unwrap_or(10 * n).max(1);
    let m = dim.min((3 * k + 40).max(60));
    let keep = (k + (m - k) / 2).min(m - 1).max(k);
    let mut rng = rng::keyed2(opts.seed, 0x4c41_4e43, n as u64);

    let apply_b = |x: &[f64], out: &mut [f64]| {
        laplacian_apply(adj, x, out);
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = c * xi - *o);
    };

    let mut v_basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut w_basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut next = random_vector(n, &mut rng);
    let mut matvecs = 0usize;

    loop {
        while v_basis.len() < m {
            let before = norm(&next).max(1e-300);
            orthogonalize(&mut next, &v_basis);
            let mut nn = norm(&next);
            // Krylov space went invariant: continue from a fresh direction
            let mut tries = 0;
            while nn <= 1e-10 * before && tries < 5 {
                next = random_vector(n, &mut rng);
                orthogonalize(&mut next, &v_basis);
                nn = norm(&next);
                tries += 1;
            }
            if nn <= 1e-300 {
                break;
            }
            next.iter_mut().for_each(|x| *x /= nn);
            let mut w = vec![0.0; n];
            apply_b(&next, &mut w);
            matvecs += 1;
            v_basis.push(std::mem::take(&mut next));
            next = w.clone();
            w_basis.push(w);
        }

        let p = v_basis.len();
        let mut h = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let val = 0.5 * (dot(&v_basis[i], &w_basis[j]) + dot(&v_basis[j], &w_basis[i]));
                h[(i, j)] = val;
                h[(j, i)] = val;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });

        let combine = |basis: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (i, b) in basis.iter().enumerate() {
                let s = eig.eigenvectors[(i, col)];
                out.iter_mut().zip(b).for_each(|(o, x)| *o += s * x);
            }
            out
        };

        let take = k.min(p);
        let mut vals = Vec::with_capacity(take);
        let mut vecs = Vec::with_capacity(take);
        let mut res = Vec::with_capacity(take);
        for &col in &idx[..take] {
            let theta = eig.eigenvalues[col];
            let y = combine(&v_basis, col);
            let by = combine(&w_basis, col);
            let r: f64 = by
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - theta * b).powi(2))
                .sum::<f64>()
                .sqrt();
            vals.push(c - theta);
            vecs.push(y);
            res.push(r);
        }
        let exhausted = p >= dim;
        if take == k && (res.iter().all(|&r| r <= opts.tol) || exhausted) {
            return Ok((vals, vecs, res, matvecs));
        }
        if matvecs >= max_mv || exhausted {
            return Err(Error::EigenNonConvergence { residuals: res });
        }

        let keep = keep.min(p - 1);
        let new_v: Vec<Vec<f64>> = idx[..keep]
            .iter()
            .map(|&col| combine(&v_basis, col))
            .collect();
        let new_w: Vec<Vec<f64>> = idx[..keep]
            .iter()
            .map(|&col| combine(&w_basis, col))
            .collect();
        next = new_w[keep - 1].clone();
        v_basis = new_v;
        w_basis = new_w;
    }
}

/// Nodes outside `primary`, component by component (largest first).
fn remaining_nodes(g: &FollowerGraph, primary: &[usize]) -> Vec<usize> {
    g.weak_components()
        .into_iter()
        .filter(|c| c.first() != primary.first())
        .flatten()
        .collect()
}

/// Orderings of `g` by ascending component of each of the `k` smallest
/// nonzero Laplacian eigenvectors, ties by account id. A disconnected graph
/// is ordered on its giant component; the other components follow in
/// size order.
pub fn spectral_orderings(
    g: &FollowerGraph,
    opts: &EigenOptions,
) -> Result<(Vec<Permutation>, SpectralResult)> {
    let comps = g.weak_components();
    let nodes = comps.first().cloned().unwrap_or_default();
    let warning = (comps.len() > 1).then(|| {
        format!(
            "graph has {} weak components; spectrum computed on the giant component ({} of {} nodes)",
            comps.len(),
            nodes.len(),
            g.node_count()
        )
    });
    let adj = symmetric_adjacency(g, &nodes);
    let (vals, mut vecs, res, matvecs) = laplacian_eigenpairs(&adj, opts)?;

    for v in vecs.iter_mut() {
        // largest-magnitude component positive, earliest index on ties
        let mut best = 0;
        for i in 1..v.len() {
            if v[i].abs() > v[best].abs() + 1e-12 {
                best = i;
            }
        }
        if v[best] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let degenerate = match vals.as_slice() {
        [] => true,
        [_] => false,
        [a, b, ..] => (b - a).abs() <= 1e-6 * a.abs().max(1.0),
    };
    let rest = remaining_nodes(g, &nodes);
    let perms = vecs
        .iter()
        .map(|vec| {
            let mut local: Vec<usize> = (0..nodes.len()).collect();
            local.sort_by(|&a, &b| {
                vec[a]
                    .total_cmp(&vec[b])
                    .then(g.id(nodes[a]).cmp(&g.id(nodes[b])))
            });
            let order: Vec<usize> = local
                .iter()
                .map(|&i| nodes[i])
                .chain(rest.iter().copied())
                .collect();
            Permutation::from_order(&order, Provenance::Spectral)
        })
        .collect::<Result<Vec<_>>>()?;
    let result = SpectralResult {
        eigenvalues: vals,
        eigenvectors: vecs,
        residuals: res,
        nodes,
        chosen: None,
        degenerate,
        matvecs,
        warning,
    };
    Ok((perms, result))
}

/// Candidate with the highest log-likelihood; the earliest wins ties.
pub fn best_spectral_permutation(
    g: &FollowerGraph,
    orderings: &[Permutation],
) -> Result<(usize, Permutation)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in orderings.iter().enumerate() {
        let ll = perm_loglik(g, p)?;
        if best.map_or(true, |(_, b)| ll > b) {
            best = Some((i, ll));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::InvalidParameter("no candidate orderings".into()))?;
    Ok((i, orderings[i].clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// New community id; leaves are `0..n`, merges count up from `n`.
    pub merged: usize,
    pub delta_q: f64,
    pub q_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram {
    pub n: usize,
    pub initial_q: f64,
    pub merges: Vec<Merge>,
    pub leaf_order: Vec<usize>,
    pub best_q: f64,
    /// Number of merges applied at the best modularity.
    pub best_step: usize,
    /// No partition reaches positive modularity.
    pub degenerate: bool,
}

impl Dendrogram {
    /// Community label per node after the first `steps` merges, relabeled
    /// densely in order of first appearance.
    pub fn partition_at(&self, steps: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n + self.merges.len()).collect();
        for m in &self.merges[..steps.min(self.merges.len())] {
            parent[m.a] = m.merged;
            parent[m.b] = m.merged;
        }
        let find = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut dense = BTreeMap::new();
        (0..self.n)
            .map(|v| {
                let r = find(v);
                let next = dense.len();
                *dense.entry(r).or_insert(next)
            })
            .collect()
    }

    pub fn best_partition(&self) -> Vec<usize> {
        self.partition_at(self.best_step)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::Stream(e);
        writeln!(w, "step,a,b,merged,delta_q,q_after").map_err(io)?;
        for (i, m) in self.merges.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{:.12},{:.12}",
                i + 1,
                m.a,
                m.b,
                m.merged,
                m.delta_q,
                m.q_after
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

struct Community {
    a: f64,
    /// Neighboring communities and the modularity gain of joining them,
    /// sorted by community id.
    nbrs: Vec<(usize, f64)>,
    /// Largest gain in `nbrs` under [`pair_key`].
    best: Option<PairKey>,
    min_node: usize,
    size: usize,
    alive: bool,
    children: Option<(usize, usize)>,
}

/// Larger is better: gain first, then the lexicographically smaller pair.
type PairKey = (OrderedFloat<f64>, Reverse<usize>, Reverse<usize>);

fn pair_key(dq: f64, a: usize, b: usize) -> PairKey {
    (OrderedFloat(dq), Reverse(a.min(b)), Reverse(a.max(b)))
}

fn row_best(r: usize, nbrs: &[(usize, f64)]) -> Option<PairKey> {
    nbrs.iter().map(|&(p, dq)| pair_key(dq, r, p)).max()
}

fn gain(nbrs: &[(usize, f64)], k: usize) -> Option<f64> {
    nbrs.binary_search_by_key(&k, |e| e.0)
        .ok()
        .map(|i| nbrs[i].1)
}

/// Greedy modularity agglomeration (Clauset, Newman and Moore) run to one
/// community per component; the permutation is the dendrogram leaf order.
///
/// Each community keeps a sorted row of gains and its best pair; a global
/// max-heap holds row maxima with lazy invalidation. Ties go to the
/// lexicographically smaller pair. Within a merge the child holding the
/// smaller node comes first; top-level trees are ordered by size, largest
/// first.
pub fn cnm_ordering(g: &FollowerGraph) -> Result<(Permutation, Dendrogram)> {
    let n = g.node_count();
    let all: Vec<usize> = (0..n).collect();
    let adj = symmetric_adjacency(g, &all);
    let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();

    let a: Vec<f64> = (0..n)
        .map(|v| {
            if two_m > 0.0 {
                adj[v].len() as f64 / two_m
            } else {
                0.0
            }
        })
        .collect();
    let mut comms: Vec<Community> = (0..n)
        .map(|v| {
            let mut nbrs: Vec<(usize, f64)> = adj[v]
                .iter()
                .map(|&u| (u, 2.0 * (1.0 / two_m - a[v] * a[u])))
                .collect();
            nbrs.sort_unstable_by_key(|e| e.0);
            Community {
                a: a[v],
                best: row_best(v, &nbrs),
                nbrs,
                min_node: v,
                size: 1,
                alive: true,
                children: None,
            }
        })
        .collect();
    let mut heap: BinaryHeap<PairKey> = comms.iter().filter_map(|c| c.best).collect();

    let initial_q: f64 = -comms.iter().map(|c| c.a * c.a).sum::<f64>();
    let mut q = initial_q;
    let (mut best_q, mut best_step) = (initial_q, 0);
    let mut merges = Vec::new();

    while let Some(key) = heap.pop() {
        let (OrderedFloat(dq), Reverse(i), Reverse(j)) = key;
        if !comms[i].alive || !comms[j].alive || gain(&comms[i].nbrs, j) != Some(dq) {
            continue;
        }
        let new_id = comms.len();
        let ni = std::mem::take(&mut comms[i].nbrs);
        let nj = std::mem::take(&mut comms[j].nbrs);
        let (ai, aj) = (comms[i].a, comms[j].a);
        let mut merged = Vec::with_capacity(ni.len() + nj.len());
        let (mut x, mut y) = (0, 0);
        while x < ni.len() || y < nj.len() {
            let kx = ni.get(x).map_or(usize::MAX, |e| e.0);
            let ky = nj.get(y).map_or(usize::MAX, |e| e.0);
            let (k, val) = match kx.cmp(&ky) {
                std::cmp::Ordering::Equal => {
                    x += 1;
                    y += 1;
                    (kx, ni[x - 1].1 + nj[y - 1].1)
                }
                std::cmp::Ordering::Less => {
                    x += 1;
                    (kx, ni[x - 1].1 - 2.0 * aj * comms[kx].a)
                }
                std::cmp::Ordering::Greater => {
                    y += 1;
                    (ky, nj[y - 1].1 - 2.0 * ai * comms[ky].a)
                }
            };
            if k != i && k != j {
                merged.push((k, val));
            }
        }
        for &(k, val) in &merged {
            let c = &mut comms[k];
            c.nbrs.retain(|e| e.0 != i && e.0 != j);
            // new ids are the largest so far, so the row stays sorted
            c.nbrs.push((new_id, val));
            let lost_best = c.best.is_some_and(|(_, Reverse(lo), Reverse(hi))| {
                [i, j].contains(&lo) || [i, j].contains(&hi)
            });
            let fresh = pair_key(val, k, new_id);
            let best = if lost_best {
                row_best(k, &c.nbrs)
            } else {
                c.best.max(Some(fresh))
            };
            if best != c.best {
                c.best = best;
                heap.extend(best);
            }
        }
        comms[i].alive = false;
        comms[j].alive = false;
        let (first, second) = if comms[i].min_node <= comms[j].min_node {
            (i, j)
        } else {
            (j, i)
        };
        let best = row_best(new_id, &merged);
        heap.extend(best);
        comms.push(Community {
            a: ai + aj,
            nbrs: merged,
            best,
            min_node: comms[i].min_node.min(comms[j].min_node),
            size: comms[i].size + comms[j].size,
            alive: true,
            children: Some((first, second)),
        });
        q += dq;
        merges.push(Merge {
            a: i,
            b: j,
            merged: new_id,
            delta_q: dq,
            q_after: q,
        });
        if q > best_q + 1e-15 {
            best_q = q;
            best_step = merges.len();
        }
    }

    let mut roots: Vec<usize> = (0..comms.len()).filter(|&c| comms[c].alive).collect();
    roots.sort_by(|&a, &b| {
        comms[b]
            .size
            .cmp(&comms[a].size)
            .then(comms[a].min_node.cmp(&comms[b].min_node))
    });
    let mut leaf_order = Vec::with_capacity(n);
    let mut stack = Vec::new();
    for r in roots {
        stack.push(r);
        while let Some(c) = stack.pop() {
            match comms[c].children {
                Some((x, y)) => {
                    stack.push(y);
                    stack.push(x);
                }
                None => leaf_order.push(c),
            }
        }
    }
    let perm = Permutation::from_order(&leaf_order, Provenance::Cnm)?;
    let dendro = Dendrogram {
        n,
        initial_q: if two_m > 0.0 { initial_q } else { 0.0 },
        merges,
        leaf_order,
        best_q: if two_m > 0.0 { best_q } else { 0.0 },
        best_step,
        degenerate: best_q <= 1e-12,
    };
    Ok((perm, dendro))
}

/// Modularity of a partition on the symmetrized graph.
pub fn modularity(g: &FollowerGraph, labels: &[usize]) -> f64 {
    let n = g.node_count();
    let all: Vec<usize> = (0..n).collect();
    let adj = symmetric_adjacency(g, &all);
    let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; k];
    let mut total = vec![0.0; k];
    for u in 0..n {
        total[labels[u]] += adj[u].len() as f64;
        for &v in &adj[u] {
            if labels[u] == labels[v] {
                inside[labels[u]] += 1.0;
            }
        }
    }
    (0..k)
        .map(|c| inside[c] / two_m - (total[c] / two_m).powi(2))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub perm: String,
    pub loglik: f64,
    pub critical_value: Option<f64>,
    /// Orderings whose critical value this row falls below.
    pub worse_than: Vec<String>,
}

/// Rows sorted by log-likelihood, best first (input order on ties). With a
/// bootstrap config each row gets its critical value and the list of rows it
/// is worse than.
pub fn compare_orderings(
    g: &FollowerGraph,
    perms: &[Permutation],
    critical: Option<&CriticalConfig>,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = perms
        .iter()
        .map(|p| {
            Ok(ComparisonRow {
                perm: p.provenance.to_string(),
                loglik: perm_loglik(g, p)?,
                critical_value: match critical {
                    Some(cfg) => Some(critical_value(g, p, cfg)?.critical_value),
                    None => None,
                },
                worse_than: vec![],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let snapshot: Vec<(String, Option<f64>)> = rows
        .iter()
        .map(|r| (r.perm.clone(), r.critical_value))
        .collect();
    for (bi, row) in rows.iter_mut().enumerate() {
        row.worse_than = snapshot
            .iter()
            .enumerate()
            .filter(|&(ai, (_, cv))| ai != bi && cv.is_some_and(|c| worse_than(row.loglik, c)))
            .map(|(_, (name, _))| name.clone())
            .collect();
    }
    rows.sort_by(|a, b| b.loglik.total_cmp(&a.loglik));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undirected(n: usize, edges: &[(usize, usize)]) -> FollowerGraph {
        FollowerGraph::from_index_pairs(n, edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]))
    }

    fn dense_laplacian(adj: &[Vec<usize>]) -> DMatrix<f64> {
        let n = adj.len();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = adj[i].len() as f64;
            for &j in &adj[i] {
                l[(i, j)] -= 1.0;
            }
        }
        l
    }

    fn check_residuals(adj: &[Vec<usize>], res: &SpectralResult) {
        let l = dense_laplacian(adj);
        for (lam, v) in res.eigenvalues.iter().zip(&res.eigenvectors) {
            let x = nalgebra::DVector::from_column_slice(v);
            let r = (&l * &x - &x * *lam).norm();
            assert!(r <= 1e-6 * x.norm(), "residual {r}");
        }
    }

    #[test]
    fn path_fiedler_is_monotone() {
        for n in [5, 30, 120] {
            let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
            let g = undirected(n, &edges);
            let (perms, res) = spectral_orderings(&g, &EigenOptions::default()).unwrap();
            let order = perms[0].order();
            let fwd: Vec<usize> = (0..n).collect();
            let rev: Vec<usize> = (0..n).rev().collect();
            assert!(order == fwd || order == rev, "n={n}");
            let all: Vec<usize> = (0..n).collect();
            check_residuals(&symmetric_adjacency(&g, &all), &res);
            // known path spectrum 2 - 2 cos(pi k / n)
            for (k, lam) in res.eigenvalues.iter().enumerate() {
                let want = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / n as f64).cos();
                assert!((lam - want).abs() < 1e-8, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn two_cliques_are_contiguous() {
        let mut edges = vec![];
        for a in 0..20 {
            for b in a + 1..20 {
                edges.push((a, b));
                edges.push((a + 20, b + 20));
            }
        }
        edges.push((19, 20));
        let g = undirected(40, &edges);
        let (perms, res) = spectral_orderings(&g, &EigenOptions::default()).unwrap();
        let order = perms[0].order();
        let first: Vec<bool> = order.iter().map(|&v| v < 20).collect();
        assert_eq!(first.windows(2).filter(|w| w[0] != w[1]).count(), 1);
        assert!(!res.degenerate);
    }

    #[test]
    fn complete_graph_is_degenerate() {
        let n = 12;
        let edges: Vec<_> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        let g = undirected(n, &edges);
        let (perms, res) = spectral_orderings(&g, &EigenOptions::default()).unwrap();
        assert!(res.degenerate);
        assert_eq!(perms.len(), 5);
        for lam in &res.eigenvalues {
            assert!((lam - n as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn disconnected_graph_orders_giant_component_first() {
        let g = undirected(7, &[(0, 1), (1, 2), (2, 3), (5, 6)]);
        let (perms, res) = spectral_orderings(&g, &EigenOptions::default()).unwrap();
        assert!(res.warning.is_some());
        let order = perms[0].order();
        let mut head = order[..4].to_vec();
        head.sort_unstable();
        assert_eq!(head, vec![0, 1, 2, 3]);
        assert_eq!(&order[4..], &[5, 6, 4]);
    }

    #[test]
    fn best_spectral_is_argmax() {
        let g = undirected(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]);
        let (perms, _) = spectral_orderings(&g, &EigenOptions::default()).unwrap();
        let (i, best) = best_spectral_permutation(&g, &perms).unwrap();
        let lb = perm_loglik(&g, &best).unwrap();
        for p in &perms {
            assert!(lb >= perm_loglik(&g, p).unwrap());
        }
        let first = perms
            .iter()
            .position(|p| perm_loglik(&g, p).unwrap() == lb)
            .unwrap();
        assert_eq!(i, first);
        let (j, _) = best_spectral_permutation(&g, &perms[..1]).unwrap();
        assert_eq!(j, 0);
    }

    #[test]
    fn cnm_two_triangles_with_bridge() {
        let g = undirected(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]);
        let (perm, d) = cnm_ordering(&g).unwrap();
        assert_eq!(d.merges.len(), 5);
        let order = perm.order();
        let left: Vec<bool> = order.iter().map(|&v| v < 3).collect();
        assert_eq!(left.windows(2).filter(|w| w[0] != w[1]).count(), 1);
        let part = d.best_partition();
        assert_eq!(part, vec![0, 0, 0, 1, 1, 1]);
        // modularity of the two triangles: 2 * (3/7 - (7/14)^2)
        let want = 2.0 * (6.0 / 14.0 - 0.25);
        assert!((d.best_q - want).abs() < 1e-12);
        assert!((modularity(&g, &part) - want).abs() < 1e-12);
    }

    #[test]
    fn cnm_q_trace_matches_recomputation() {
        let g = undirected(
            9,
            &[
                (0, 1),
                (1, 2),
                (2, 0),
                (2, 3),
                (3, 4),
                (4, 5),
                (5, 3),
                (5, 6),
                (6, 7),
                (7, 8),
                (8, 6),
            ],
        );
        let (_, d) = cnm_ordering(&g).unwrap();
        for step in 0..=d.merges.len() {
            let q = if step == 0 {
                d.initial_q
            } else {
                d.merges[step - 1].q_after
            };
            assert!(
                (q - modularity(&g, &d.partition_at(step))).abs() < 1e-12,
                "step {step}"
            );
        }
    }

    #[test]
    fn cnm_star_is_degenerate() {
        let edges: Vec<_> = (1..8).map(|i| (0, i)).collect();
        let g = undirected(8, &edges);
        let (perm, d) = cnm_ordering(&g).unwrap();
        assert!(d.degenerate);
        assert_eq!(perm.len(), 8);
    }

    #[test]
    fn cnm_components_by_size() {
        let g = undirected(6, &[(4, 5), (0, 1), (1, 2)]);
        let (perm, d) = cnm_ordering(&g).unwrap();
        assert_eq!(d.merges.len(), 3);
        let order = perm.order();
        let mut head = order[..3].to_vec();
        head.sort_unstable();
        assert_eq!(head, vec![0, 1, 2]);
        assert_eq!(
            &order[3..5]
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>(),
            &[4, 5].into()
        );
        assert_eq!(order[5], 3);
    }

    #[test]
    fn comparison_sorted_with_flags() {
        let n = 40;
        let g =
            FollowerGraph::from_index_pairs(n, (0..n - 1).flat_map(|i| [(i, i + 1), (i + 1, i)]));
        let perms = vec![
            crate::permscore::random_permutation(n, 1),
            Permutation::identity(n),
        ];
        let cfg = CriticalConfig {
            reps: 100,
            seed: 2,
            ..Default::default()
        };
        let rows = compare_orderings(&g, &perms, Some(&cfg)).unwrap();
        assert_eq!(rows[0].perm, "external");
        assert_eq!(rows[0].loglik, 0.0);
        assert_eq!(rows[1].worse_than, vec!["external".to_string()]);
        assert!(rows[0].worse_than.is_empty());
    }

    struct RefCommunity {
        a: f64,
        nbrs: BTreeMap<usize, f64>,
        min_node: usize,
        size: usize,
        alive: bool,
    }

    type RefEntry = (OrderedFloat<f64>, Reverse<usize>, Reverse<usize>);

    /// Straightforward map-based agglomeration, kept to check the fast one.
    fn cnm_reference(g: &FollowerGraph) -> Vec<Merge> {
        let n = g.node_count();
        let all: Vec<usize> = (0..n).collect();
        let adj = symmetric_adjacency(g, &all);
        let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();

        let mut comms: Vec<RefCommunity> = (0..n)
            .map(|v| RefCommunity {
                a: if two_m > 0.0 {
                    adj[v].len() as f64 / two_m
                } else {
                    0.0
                },
                nbrs: BTreeMap::new(),
                min_node: v,
                size: 1,
                alive: true,
            })
            .collect();
        let mut heap: BinaryHeap<RefEntry> = BinaryHeap::new();
        for u in 0..n {
            for &v in &adj[u] {
                let dq = 2.0 * (1.0 / two_m - comms[u].a * comms[v].a);
                comms[u].nbrs.insert(v, dq);
                if u < v {
                    heap.push((OrderedFloat(dq), Reverse(u), Reverse(v)));
                }
            }
        }

        let initial_q: f64 = -comms.iter().map(|c| c.a * c.a).sum::<f64>();
        let mut q = initial_q;
        let (mut best_q, mut best_step) = (initial_q, 0);
        let mut merges = Vec::new();

        while let Some((OrderedFloat(dq), Reverse(i), Reverse(j))) = heap.pop() {
            if !comms[i].alive || !comms[j].alive || comms[i].nbrs.get(&j) != Some(&dq) {
                continue;
            }
            let new_id = comms.len();
            let ni = std::mem::take(&mut comms[i].nbrs);
            let nj = std::mem::take(&mut comms[j].nbrs);
            let (ai, aj) = (comms[i].a, comms[j].a);
            let mut merged = BTreeMap::new();
            for (&k, &dik) in &ni {
                if k == j {
                    continue;
                }
                let val = match nj.get(&k) {
                    Some(&djk) => dik + djk,
                    None => dik - 2.0 * aj * comms[k].a,
                };
                merged.insert(k, val);
            }
            for (&k, &djk) in &nj {
                if k != i && !ni.contains_key(&k) {
                    merged.insert(k, djk - 2.0 * ai * comms[k].a);
                }
            }
            for (&k, &val) in &merged {
                let nb = &mut comms[k].nbrs;
                nb.remove(&i);
                nb.remove(&j);
                nb.insert(new_id, val);
                heap.push((OrderedFloat(val), Reverse(k), Reverse(new_id)));
            }
            comms[i].alive = false;
            comms[j].alive = false;
            comms.push(RefCommunity {
                a: ai + aj,
                nbrs: merged,
                min_node: comms[i].min_node.min(comms[j].min_node),
                size: comms[i].size + comms[j].size,
                alive: true,
            });
            q += dq;
            merges.push(Merge {
                a: i,
                b: j,
                merged: new_id,
                delta_q: dq,
                q_after: q,
            });
            if q > best_q + 1e-15 {
                best_q = q;
                best_step = merges.len();
            }
        }
        let _ = (best_q, best_step);
        merges
    }

    #[test]
    fn cnm_matches_reference_merges() {
        use rand::{Rng, SeedableRng};
        for seed in 0..40u64 {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let n = rng.random_range(2..60);
            let p = rng.random_range(0.02..0.3);
            let mut edges = vec![];
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random_bool(p) {
                        edges.push((a, b));
                    }
                }
            }
            let g = FollowerGraph::from_index_pairs(n, edges);
            let (_, d) = cnm_ordering(&g).unwrap();
            let r = cnm_reference(&g);
            assert_eq!(d.merges.len(), r.len(), "seed {seed}");
            for (x, y) in d.merges.iter().zip(&r) {
                assert_eq!((x.a, x.b, x.merged), (y.a, y.b, y.merged), "seed {seed}");
                assert_eq!(x.delta_q, y.delta_q);
            }
        }
    }
}
