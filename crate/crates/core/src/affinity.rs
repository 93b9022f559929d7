//! Outlet slant from co-following: affinity between follower sets, size
//! scaling, pruning, spin-glass clustering, anchor labeling and the slant
//! score.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::AccountId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FollowerSets {
    pub outlets: Vec<String>,
    /// Sorted, deduplicated follower ids per outlet.
    pub sets: Vec<Vec<AccountId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub min_followers: usize,
    /// Keep followers whose score column is below this value.
    pub bot_threshold: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_followers: 10_000,
            bot_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    /// Outlets dropped for having too few followers, with their counts.
    pub excluded: Vec<(String, usize)>,
    pub bot_filtered: usize,
    pub malformed_lines: usize,
}

impl FollowerSets {
    /// Outlets are sorted by name.
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<AccountId>)>) -> Self {
        let mut entries: Vec<_> = entries
            .into_iter()
            .map(|(name, mut ids)| {
                ids.sort_unstable();
                ids.dedup();
                (name, ids)
            })
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let (outlets, sets) = entries.into_iter().unzip();
        Self { outlets, sets }
    }

    pub fn len(&self) -> usize {
        self.outlets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outlets.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Drop outlets with fewer than `min` followers.
    pub fn retain_min(self, min: usize) -> (Self, Vec<(String, usize)>) {
        let mut excluded = vec![];
        let mut kept = vec![];
        for (name, set) in self.outlets.into_iter().zip(self.sets) {
            if set.len() < min {
                excluded.push((name, set.len()));
            } else {
                kept.push((name, set));
            }
        }
        (Self::new(kept), excluded)
    }

    /// One outlet per file: `followers/<outlet>.txt` (any extension; the
    /// file stem names the outlet). Each line is a follower id, optionally
    /// followed by a comma or tab and a bot score. Blank lines and `#`
    /// comments are skipped.
    pub fn from_dir(dir: &Path, opts: &LoadOptions) -> Result<(Self, LoadReport)> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut report = LoadReport::default();
        let mut entries = vec![];
        for p in paths {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("bad outlet file name {}", p.display()))
                })?
                .to_string();
            let file = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
            let (ids, bots, bad) = read_follower_list(BufReader::new(file), opts.bot_threshold)?;
            report.bot_filtered += bots;
            report.malformed_lines += bad;
            entries.push((name, ids));
        }
        let (sets, excluded) = Self::new(entries).retain_min(opts.min_followers);
        report.excluded = excluded;
        Ok((sets, report))
    }
}

/// Returns `(ids, bot-filtered count, malformed count)`.
pub fn read_follower_list<R: BufRead>(
    r: R,
    bot_threshold: Option<f64>,
) -> Result<(Vec<AccountId>, usize, usize)> {
    let (mut ids, mut bots, mut bad) = (vec![], 0, 0);
    for line in r.lines() {
        let line = line.map_err(Error::Stream)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split([',', '\t']).map(str::trim);
        let Some(Ok(id)) = parts.next().map(str::parse::<AccountId>) else {
            bad += 1;
            continue;
        };
        match (parts.next(), bot_threshold) {
            (Some(score), Some(th)) => match score.parse::<f64>() {
                Ok(s) if s < th => ids.push(id),
                Ok(_) => bots += 1,
                Err(_) => bad += 1,
            },
            _ => ids.push(id),
        }
    }
    Ok((ids, bots, bad))
}

/// Dense symmetric outlet-by-outlet matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffinityMatrix {
    pub outlets: Vec<String>,
    pub counts: Vec<usize>,
    data: Vec<f64>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.outlets.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.data[i * n..(i + 1) * n]
    }

    /// Build from a row-major square matrix, symmetrizing nothing: the
    /// input must already be symmetric with a zero diagonal.
    pub fn from_dense(outlets: Vec<String>, counts: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = outlets.len();
        if data.len() != n * n || counts.len() != n {
            return Err(Error::InvalidParameter(
                "affinity matrix shape mismatch".into(),
            ));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "nonzero diagonal at {}",
                    outlets[i]
                )));
            }
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(Error::InvalidParameter(
                        "affinity matrix is not symmetric".into(),
                    ));
                }
            }
        }
        Ok(Self {
            outlets,
            counts,
            data,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["outlet".to_string()];
        header.extend(self.outlets.iter().cloned());
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.outlets[i].clone()];
            rec.extend(self.row(i).iter().map(|x| format!("{x:.6}")));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(Error::Stream)?;
        Ok(())
    }
}

/// Size of the intersection of two sorted slices.
fn intersection_size(a: &[AccountId], b: &[AccountId]) -> usize {
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

/// Overlap over the smaller audience.
pub fn affinity_from_counts(intersection: usize, fi: usize, fj: usize) -> f64 {
    intersection as f64 / fi.min(fj) as f64
}

pub fn affinity_matrix(sets: &FollowerSets) -> Result<AffinityMatrix> {
    if let Some(i) = sets.sets.iter().position(Vec::is_empty) {
        return Err(Error::EmptyFollowerSet(sets.outlets[i].clone()));
    }
    let n = sets.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let (a, b) = (&sets.sets[i], &sets.sets[j]);
                    affinity_from_counts(intersection_size(a, b), a.len(), b.len())
                })
                .collect()
        })
        .collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &x) in row.iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = x;
            data[j * n + i] = x;
        }
    }
    Ok(AffinityMatrix {
        outlets: sets.outlets.clone(),
        counts: sets.counts(),
        data,
    })
}

/// Penalize overlap with much larger outlets: `A_ij * ln(min) / ln(max)`
/// over the two follower counts.
pub fn scale_affinity(a: &AffinityMatrix) -> Result<AffinityMatrix> {
    if let Some(i) = a.counts.iter().position(|&c| c < 2) {
        return Err(Error::InvalidParameter(format!(
            "outlet {} has {} followers; scaling needs at least 2",
            a.outlets[i], a.counts[i]
        )));
    }
    let n = a.n();
    let mut data = a.data.clone();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = scale_entry(data[i * n + j], a.counts[i] as f64, a.counts[j] as f64);
        }
    }
    Ok(AffinityMatrix {
        outlets: a.outlets.clone(),
        counts: a.counts.clone(),
        data,
    })
}

/// One scaled entry; follower counts as reals.
pub fn scale_entry(a: f64, fi: f64, fj: f64) -> f64 {
    a * fi.min(fj).ln() / fi.max(fj).ln()
}

/// Weighted undirected graph over the outlets that survived pruning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrunedGraph {
    /// Outlet indices of the kept nodes; node `k` is outlet `kept[k]`.
    pub kept: Vec<usize>,
    pub pruned: Vec<usize>,
    /// Neighbor lists `(local index, weight)`, sorted by neighbor.
    pub adj: Vec<Vec<(usize, f64)>>,
}

impl PrunedGraph {
    pub fn node_count(&self) -> usize {
        self.kept.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Drop edges lighter than `w_min`, then nodes with fewer than `deg_min`
/// remaining edges. With `iterate` the node step repeats until stable;
/// otherwise it runs once and degrees are not recounted.
pub fn prune(scaled: &AffinityMatrix, w_min: f64, deg_min: usize, iterate: bool) -> PrunedGraph {
    let n = scaled.n();
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        let degree: Vec<usize> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && alive[j] && scaled.get(i, j) >= w_min)
                    .count()
            })
            .collect();
        for i in 0..n {
            if alive[i] && degree[i] < deg_min {
                alive[i] = false;
                changed = true;
            }
        }
        if !iterate || !changed {
            break;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    let pruned: Vec<usize> = (0..n).filter(|&i| !alive[i]).collect();
    let adj = kept
        .iter()
        .map(|&i| {
            kept.iter()
                .enumerate()
                .filter(|&(_, &j)| j != i && scaled.get(i, j) >= w_min)
                .map(|(k, &j)| (k, scaled.get(i, j)))
                .collect()
        })
        .collect();
    PrunedGraph { kept, pruned, adj }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinGlassOptions {
    pub gamma: f64,
    pub max_spins: usize,
    /// Sweeps per node; the schedule runs `sweeps_per_node * n` sweeps.
    pub sweeps_per_node: usize,
    pub start_acceptance: f64,
    pub final_temp_ratio: f64,
}

impl Default for SpinGlassOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            max_spins: 25,
            sweeps_per_node: 50,
            start_acceptance: 0.8,
            final_temp_ratio: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    /// Community per pruned-graph node, numbered by first appearance.
    pub labels: Vec<usize>,
    pub communities: usize,
    pub energy: f64,
    pub seed: u64,
    /// Everything landed in one community.
    pub trivial: bool,
}

struct SpinState<'a> {
    adj: &'a [Vec<(usize, f64)>],
    k: Vec<f64>,
    two_m: f64,
    gamma: f64,
    spin: Vec<usize>,
    strength: Vec<f64>,
    members: Vec<usize>,
    scratch: Vec<f64>,
}

impl<'a> SpinState<'a> {
    fn new(adj: &'a [Vec<(usize, f64)>], gamma: f64, spin: Vec<usize>, q: usize) -> Self {
        let k: Vec<f64> = adj.iter().map(|a| a.iter().map(|e| e.1).sum()).collect();
        let two_m = k.iter().sum::<f64>();
        let mut strength = vec![0.0; q];
        let mut members = vec![0; q];
        for (i, &s) in spin.iter().enumerate() {
            strength[s] += k[i];
            members[s] += 1;
        }
        Self {
            adj,
            k,
            two_m,
            gamma,
            spin,
            strength,
            members,
            scratch: vec![0.0; q],
        }
    }

    /// Candidate spins for node `i` with their gains
    /// `w(i, s) - gamma k_i K_s / 2m`, where `K_s` excludes `i` itself.
    fn gains(&mut self, i: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let cur = self.spin[i];
        for &(j, w) in &self.adj[i] {
            self.scratch[self.spin[j]] += w;
        }
        let ki = self.k[i];
        let gain = |s: usize, w: f64| {
            let ks = self.strength[s] - if s == cur { ki } else { 0.0 };
            w - self.gamma * ki * ks / self.two_m
        };
        out.push((cur, gain(cur, self.scratch[cur])));
        for &(j, _) in &self.adj[i] {
            let s = self.spin[j];
            if s != cur && !out.iter().any(|&(t, _)| t == s) {
                out.push((s, gain(s, self.scratch[s])));
            }
        }
        // one empty spin, if any remains
        if self.members[cur] > 1 {
            if let Some(e) = self.members.iter().position(|&m| m == 0) {
                out.push((e, 0.0));
            }
        }
        for &(j, _) in &self.adj[i] {
            self.scratch[self.spin[j]] = 0.0;
        }
    }

    fn set(&mut self, i: usize, s: usize) {
        let cur = self.spin[i];
        if cur != s {
            self.strength[cur] -= self.k[i];
            self.members[cur] -= 1;
            self.strength[s] += self.k[i];
            self.members[s] += 1;
            self.spin[i] = s;
        }
    }

    fn energy(&self) -> f64 {
        spin_glass_energy(self.adj, &self.spin, self.gamma)
    }
}

/// Hamiltonian with the configuration null model:
/// `-sum_{i<j} (A_ij - gamma k_i k_j / 2m) delta(s_i, s_j)`.
pub fn spin_glass_energy(adj: &[Vec<(usize, f64)>], spin: &[usize], gamma: f64) -> f64 {
    let k: Vec<f64> = adj.iter().map(|a| a.iter().map(|e| e.1).sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut inside = 0.0;
    for (i, row) in adj.iter().enumerate() {
        for &(j, w) in row {
            if i < j && spin[i] == spin[j] {
                inside += w;
            }
        }
    }
    let q = spin.iter().copied().max().map_or(0, |m| m + 1);
    let mut tot = vec![0.0; q];
    let mut sq = vec![0.0; q];
    for (i, &s) in spin.iter().enumerate() {
        tot[s] += k[i];
        sq[s] += k[i] * k[i];
    }
    let null: f64 = (0..q).map(|s| (tot[s] * tot[s] - sq[s]) / 2.0).sum();
    -(inside - gamma * null / two_m)
}

fn canonical(spin: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let labels = spin
        .iter()
        .map(|&s| {
            let next = map.len();
            *map.entry(s).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

/// Reichardt-Bornholdt spin-glass communities by simulated annealing.
///
/// Heat-bath updates over the spins present among a node's neighbors plus
/// one empty spin. The start temperature makes a typical uphill move pass
/// with probability `start_acceptance`; cooling is geometric and a greedy
/// pass at zero temperature finishes the run.
pub fn detect_clusters(g: &PrunedGraph, opts: &SpinGlassOptions, seed: u64) -> Result<Clustering> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::InvalidParameter("pruned graph is empty".into()));
    }
    let q = opts.max_spins.clamp(1, n);
    let mut r = rng::keyed2(seed, 0x5350_494e, n as u64);
    let init: Vec<usize> = (0..n).map(|_| r.random_range(0..q)).collect();
    let mut st = SpinState::new(&g.adj, opts.gamma, init, q);
    if st.two_m == 0.0 {
        let spin: Vec<usize> = (0..n).collect();
        let (labels, communities) = canonical(&spin);
        return Ok(Clustering {
            labels,
            communities,
            energy: 0.0,
            seed,
            trivial: communities == 1,
        });
    }

    let mut cand = Vec::with_capacity(q + 1);
    // typical uphill move size at the starting configuration
    let mut ups = vec![];
    for i in 0..n {
        st.gains(i, &mut cand);
        let cur = cand[0].1;
        ups.extend(cand[1..].iter().map(|c| cur - c.1).filter(|&d| d > 0.0));
    }
    let mean_up = if ups.is_empty() {
        st.k.iter().sum::<f64>() / n as f64 * 0.1
    } else {
        ups.iter().sum::<f64>() / ups.len() as f64
    };
    let t0 = mean_up / -opts.start_acceptance.clamp(1e-6, 1.0 - 1e-6).ln();
    let sweeps = (opts.sweeps_per_node * n).max(1);
    let alpha = opts.final_temp_ratio.powf(1.0 / sweeps as f64);

    let mut temp = t0;
    let mut probs = Vec::with_capacity(q + 1);
    for _ in 0..sweeps {
        for i in 0..n {
            st.gains(i, &mut cand);
            let top = cand.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            probs.clear();
            probs.extend(cand.iter().map(|c| ((c.1 - top) / temp).exp()));
            let total: f64 = probs.iter().sum();
            let mut u = r.random::<f64>() * total;
            let mut pick = cand.len() - 1;
            for (idx, p) in probs.iter().enumerate() {
                if u < *p {
                    pick = idx;
                    break;
                }
                u -= p;
            }
            st.set(i, cand[pick].0);
        }
        temp *= alpha;
    }
    loop {
        let mut moved = false;
        for i in 0..n {
            st.gains(i, &mut cand);
            let cur = cand[0].1;
            let best = cand
                .iter()
                .skip(1)
                .fold(None::<(usize, f64)>, |b, &c| match b {
                    Some(bb) if bb.1 >= c.1 => Some(bb),
                    _ => Some(c),
                });
            if let Some((s, gain)) = best {
                if gain > cur + 1e-12 {
                    st.set(i, s);
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let energy = st.energy();
    let (labels, communities) = canonical(&st.spin);
    Ok(Clustering {
        labels,
        communities,
        energy,
        seed,
        trivial: communities == 1,
    })
}

/// Independent runs over `seeds` in parallel; the lowest energy wins, the
/// earliest seed on ties.
pub fn detect_clusters_multi(
    g: &PrunedGraph,
    opts: &SpinGlassOptions,
    seeds: &[u64],
) -> Result<Clustering> {
    let runs = seeds
        .par_iter()
        .map(|&s| detect_clusters(g, opts, s))
        .collect::<Result<Vec<_>>>()?;
    runs.into_iter()
        .reduce(|best, c| {
            if c.energy < best.energy - 1e-12 {
                c
            } else {
                best
            }
        })
        .ok_or_else(|| Error::InvalidParameter("no seeds given".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutletLabel {
    Liberal,
    Conservative,
    Mainstream,
    Pruned,
}

impl fmt::Display for OutletLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutletLabel::Liberal => "liberal",
            OutletLabel::Conservative => "conservative",
            OutletLabel::Mainstream => "mainstream",
            OutletLabel::Pruned => "pruned",
        })
    }
}

impl FromStr for OutletLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "liberal" => Ok(OutletLabel::Liberal),
            "conservative" => Ok(OutletLabel::Conservative),
            "mainstream" => Ok(OutletLabel::Mainstream),
            other => Err(Error::InvalidParameter(format!(
                "unknown anchor label {other:?}"
            ))),
        }
    }
}

/// `(label, outlet)` rows from a headerless or `label,outlet` CSV.
pub fn read_anchors<R: Read>(r: R) -> Result<Vec<(OutletLabel, String)>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = vec![];
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() < 2
            || (rec[0].eq_ignore_ascii_case("label") && rec[1].eq_ignore_ascii_case("outlet"))
        {
            continue;
        }
        out.push((rec[0].parse()?, rec[1].to_string()));
    }
    Ok(out)
}

/// Label each community by the majority of the anchors it contains: more
/// liberal than conservative anchors makes it liberal and vice versa, no
/// anchors makes it mainstream, and a nonzero tie is an error. Pruned
/// outlets are labeled `Pruned`; anchors among them are ignored.
pub fn label_clusters(
    outlets: &[String],
    pruned: &PrunedGraph,
    clustering: &Clustering,
    anchors: &[(OutletLabel, String)],
) -> Result<Vec<OutletLabel>> {
    if !anchors.iter().any(|a| a.0 == OutletLabel::Liberal) {
        return Err(Error::MissingAnchors("liberal"));
    }
    if !anchors.iter().any(|a| a.0 == OutletLabel::Conservative) {
        return Err(Error::MissingAnchors("conservative"));
    }
    let index: HashMap<&str, usize> = outlets
        .iter()
        .enumerate()
        .map(|(i, o)| (o.as_str(), i))
        .collect();
    let mut local = vec![usize::MAX; outlets.len()];
    for (k, &i) in pruned.kept.iter().enumerate() {
        local[i] = k;
    }
    let mut votes = vec![(0usize, 0usize); clustering.communities];
    for (label, name) in anchors {
        let i = *index.get(name.as_str()).ok_or_else(|| {
            Error::InvalidParameter(format!("anchor {name} is not a known outlet"))
        })?;
        if local[i] == usize::MAX {
            continue;
        }
        let c = clustering.labels[local[i]];
        match label {
            OutletLabel::Liberal => votes[c].0 += 1,
            OutletLabel::Conservative => votes[c].1 += 1,
            _ => {}
        }
    }
    let mut comm_label = Vec::with_capacity(votes.len());
    for (c, &(lib, cons)) in votes.iter().enumerate() {
        comm_label.push(match lib.cmp(&cons) {
            std::cmp::Ordering::Greater => OutletLabel::Liberal,
            std::cmp::Ordering::Less => OutletLabel::Conservative,
            std::cmp::Ordering::Equal if lib == 0 => OutletLabel::Mainstream,
            std::cmp::Ordering::Equal => {
                return Err(Error::AnchorTie {
                    community: c,
                    labels: format!("{lib} liberal vs {cons} conservative"),
                })
            }
        });
    }
    Ok((0..outlets.len())
        .map(|i| match local[i] {
            usize::MAX => OutletLabel::Pruned,
            k => comm_label[clustering.labels[k]],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlantScore {
    pub outlet: String,
    /// `None` when the outlet has zero affinity with every other outlet.
    pub score: Option<f64>,
    pub cluster: OutletLabel,
    pub followers: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Conservative co-following minus liberal co-following, each relative to
/// the outlet's mean co-following with all others. Computed on the raw
/// (unscaled) matrix; every mean excludes the outlet itself. Pruned
/// outlets are scored but do not count as cluster members.
pub fn slant_scores(raw: &AffinityMatrix, labels: &[OutletLabel]) -> Result<Vec<SlantScore>> {
    let n = raw.n();
    if labels.len() != n {
        return Err(Error::InvalidParameter(
            "one label per outlet required".into(),
        ));
    }
    for (need, name) in [
        (OutletLabel::Liberal, "liberal"),
        (OutletLabel::Conservative, "conservative"),
    ] {
        if !labels.contains(&need) {
            return Err(Error::MissingAnchors(name));
        }
    }
    Ok((0..n)
        .map(|i| {
            let row = raw.row(i);
            let others = || (0..n).filter(move |&j| j != i);
            let overall = mean(others().map(|j| row[j]));
            let lib = mean(
                others()
                    .filter(|&j| labels[j] == OutletLabel::Liberal)
                    .map(|j| row[j]),
            );
            let cons = mean(
                others()
                    .filter(|&j| labels[j] == OutletLabel::Conservative)
                    .map(|j| row[j]),
            );
            let score = match (overall, lib, cons) {
                (Some(o), Some(l), Some(c)) if o > 0.0 => Some(-l / o + c / o),
                _ => None,
            };
            SlantScore {
                outlet: raw.outlets[i].clone(),
                score,
                cluster: labels[i],
                followers: raw.counts[i],
            }
        })
        .collect())
}

/// `outlet,score,cluster`; undefined scores are left blank.
pub fn write_slants_csv<W: Write>(scores: &[SlantScore], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["outlet", "score", "cluster"])?;
    for s in scores {
        let score = s.score.map(|x| format!("{x:.6}")).unwrap_or_default();
        wr.write_record([
            s.outlet.as_str(),
            score.as_str(),
            s.cluster.to_string().as_str(),
        ])?;
    }
    wr.flush().map_err(Error::Stream)?;
    Ok(())
}

/// Scatter points `(ln followers, score)` for scored outlets.
pub fn slant_figure(scores: &[SlantScore]) -> Vec<(f64, f64, OutletLabel)> {
    scores
        .iter()
        .filter_map(|s| s.score.map(|x| ((s.followers as f64).ln(), x, s.cluster)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(v: Vec<(&str, Vec<u64>)>) -> FollowerSets {
        FollowerSets::new(v.into_iter().map(|(n, s)| (n.to_string(), s)))
    }

    #[test]
    fn worked_example_counts() {
        let a = affinity_from_counts(165_700, 33_000_000, 616_000);
        assert_eq!((a * 1000.0).round() / 1000.0, 0.269);
    }

    #[test]
    fn disjoint_and_nested() {
        let s = sets(vec![
            ("a", vec![1, 2, 3]),
            ("b", vec![4, 5]),
            ("c", vec![1, 2, 3, 4, 5, 6]),
        ]);
        let a = affinity_matrix(&s).unwrap();
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(0, 2), 1.0);
        assert_eq!(a.get(2, 1), 1.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn empty_set_is_named() {
        let s = sets(vec![("a", vec![1]), ("zz", vec![])]);
        match affinity_matrix(&s) {
            Err(Error::EmptyFollowerSet(name)) => assert_eq!(name, "zz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn brute_force_intersections() {
        let mut r = rng::keyed(5, 5);
        for _ in 0..20 {
            let k = r.random_range(2..=30);
            let raw: Vec<(String, Vec<u64>)> = (0..k)
                .map(|i| {
                    let ids: Vec<u64> = (0..200).filter(|_| r.random::<f64>() < 0.3).collect();
                    (
                        format!("o{i:02}"),
                        if ids.is_empty() { vec![0] } else { ids },
                    )
                })
                .collect();
            let s = FollowerSets::new(raw.clone());
            let a = affinity_matrix(&s).unwrap();
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    let (x, y) = (&raw[i].1, &raw[j].1);
                    let inter = x.iter().filter(|v| y.contains(v)).count();
                    let want = inter as f64 / x.len().min(y.len()) as f64;
                    assert_eq!(a.get(i, j), want);
                }
            }
        }
    }

    fn matrix(counts: Vec<usize>, data: Vec<f64>) -> AffinityMatrix {
        let names = (0..counts.len()).map(|i| format!("o{i}")).collect();
        AffinityMatrix::from_dense(names, counts, data).unwrap()
    }

    #[test]
    fn scaling_examples() {
        let e2 = std::f64::consts::E.powi(2);
        let e4 = std::f64::consts::E.powi(4);
        assert!((scale_entry(0.8, e2, e4) - 0.4).abs() < 1e-15);
        assert_eq!(scale_entry(0.8, e4, e2), scale_entry(0.8, e2, e4));
        let (c2, c4) = (e2.round() as usize, e4.round() as usize);
        let a = matrix(
            vec![c2, c4, c4],
            vec![0.0, 0.8, 0.5, 0.8, 0.0, 0.6, 0.5, 0.6, 0.0],
        );
        let s = scale_affinity(&a).unwrap();
        let want = 0.8 * (c2 as f64).ln() / (c4 as f64).ln();
        assert!((s.get(0, 1) - want).abs() < 1e-15);
        assert_eq!(s.get(1, 2), 0.6);
        for i in 0..3 {
            for j in 0..3 {
                assert!(s.get(i, j) <= a.get(i, j));
            }
        }
        assert!(scale_affinity(&matrix(vec![1, 5], vec![0.0, 0.1, 0.1, 0.0])).is_err());
    }

    fn uniform(n: usize, w: f64) -> AffinityMatrix {
        let data = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { w })
            .collect();
        matrix(vec![100; n], data)
    }

    #[test]
    fn prune_thresholds() {
        let p = prune(&uniform(8, 0.29), 0.3, 5, false);
        assert_eq!(p.node_count(), 0);
        // exactly five surviving edges per node
        let p = prune(&uniform(6, 0.5), 0.3, 5, false);
        assert_eq!(p.node_count(), 6);
        assert_eq!(p.edge_count(), 15);
    }

    #[test]
    fn single_pass_versus_iterated() {
        // nodes 0..5 form a 6-clique except edge (0, 5); 6 hangs on 0..=4
        // with degree 5, 7 hangs on 0 only.
        let n = 8;
        let mut d = vec![0.0; n * n];
        let mut link = |a: usize, b: usize| {
            d[a * n + b] = 0.5;
            d[b * n + a] = 0.5;
        };
        for a in 0..6 {
            for b in a + 1..6 {
                if (a, b) != (0, 5) {
                    link(a, b);
                }
            }
        }
        for a in 0..5 {
            link(a, 6);
        }
        link(5, 7);
        let m = matrix(vec![100; n], d);
        // degrees: 0..4 -> 5 or 6, node 5 -> 5 (1..4 and 7), 6 -> 5, 7 -> 1
        let single = prune(&m, 0.3, 5, false);
        assert_eq!(single.pruned, vec![7]);
        assert!(single.kept.contains(&5));
        // dropping 7 leaves node 5 with 4 edges, which only iteration removes
        let iter = prune(&m, 0.3, 5, true);
        assert_eq!(iter.pruned, vec![5, 7]);
    }

    fn weighted_blocks(sizes: &[usize], w_in: f64, w_out: f64) -> PrunedGraph {
        let n: usize = sizes.iter().sum();
        let block: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        let adj = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .filter_map(|j| {
                        let w = if block[i] == block[j] { w_in } else { w_out };
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        PrunedGraph {
            kept: (0..n).collect(),
            pruned: vec![],
            adj,
        }
    }

    #[test]
    fn disjoint_cliques_give_two_communities() {
        let g = weighted_blocks(&[7, 9], 0.8, 0.0);
        let c = detect_clusters(&g, &SpinGlassOptions::default(), 1).unwrap();
        assert_eq!(c.communities, 2);
        assert!(c.labels[..7].iter().all(|&l| l == 0));
        assert!(c.labels[7..].iter().all(|&l| l == 1));
        assert!(!c.trivial);
    }

    #[test]
    fn planted_three_blocks_and_determinism() {
        let g = weighted_blocks(&[10, 12, 8], 0.6, 0.05);
        let opts = SpinGlassOptions::default();
        let a = detect_clusters(&g, &opts, 9).unwrap();
        let b = detect_clusters(&g, &opts, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.communities, 3);
        let want: Vec<usize> = [0; 10].into_iter().chain([1; 12]).chain([2; 8]).collect();
        assert_eq!(a.labels, want);
        let direct = spin_glass_energy(&g.adj, &a.labels, 1.0);
        assert!((a.energy - direct).abs() < 1e-9);
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("o{i}")).collect()
    }

    #[test]
    fn labeling_rules() {
        let outlets = names(4);
        let pruned = PrunedGraph {
            kept: vec![0, 1, 2],
            pruned: vec![3],
            adj: vec![vec![]; 3],
        };
        let cl = Clustering {
            labels: vec![0, 1, 2],
            communities: 3,
            energy: 0.0,
            seed: 0,
            trivial: false,
        };
        let anchors = vec![
            (OutletLabel::Liberal, "o0".to_string()),
            (OutletLabel::Conservative, "o2".to_string()),
        ];
        let l = label_clusters(&outlets, &pruned, &cl, &anchors).unwrap();
        assert_eq!(
            l,
            vec![
                OutletLabel::Liberal,
                OutletLabel::Mainstream,
                OutletLabel::Conservative,
                OutletLabel::Pruned
            ]
        );
        let tie = Clustering {
            labels: vec![0, 0, 1],
            communities: 2,
            ..cl.clone()
        };
        let anchors = vec![
            (OutletLabel::Liberal, "o0".to_string()),
            (OutletLabel::Conservative, "o1".to_string()),
        ];
        assert!(matches!(
            label_clusters(&outlets, &pruned, &tie, &anchors),
            Err(Error::AnchorTie { .. })
        ));
        assert!(matches!(
            label_clusters(&outlets, &pruned, &cl, &anchors[..1]),
            Err(Error::MissingAnchors("conservative"))
        ));
    }

    #[test]
    fn score_examples() {
        use OutletLabel::*;
        // outlet 0 is equally co-followed with liberal 1, conservative 2
        // and mainstream 3
        let d = vec![
            0.0, 0.4, 0.4, 0.4, //
            0.4, 0.0, 0.1, 0.3, //
            0.4, 0.1, 0.0, 0.2, //
            0.4, 0.3, 0.2, 0.0,
        ];
        let m = matrix(vec![10; 4], d.clone());
        let labels = [Mainstream, Liberal, Conservative, Mainstream];
        let s = slant_scores(&m, &labels).unwrap();
        assert!(s[0].score.unwrap().abs() < 1e-15);

        // zero liberal affinity, conservative mean equal to overall mean
        let d = vec![
            0.0, 0.0, 0.3, 0.3, 0.3, //
            0.0, 0.0, 0.1, 0.1, 0.1, //
            0.3, 0.1, 0.0, 0.1, 0.1, //
            0.3, 0.1, 0.1, 0.0, 0.1, //
            0.3, 0.1, 0.1, 0.1, 0.0,
        ];
        let labels = [
            Mainstream,
            Liberal,
            Conservative,
            Conservative,
            Conservative,
        ];
        let s = slant_scores(&matrix(vec![10; 5], d.clone()), &labels).unwrap();
        let want = 0.3 / (0.9 / 4.0);
        assert!((s[0].score.unwrap() - want).abs() < 1e-12);

        // rescaling the raw matrix changes nothing
        let scaled: Vec<f64> = d.iter().map(|x| x * 7.5).collect();
        let t = slant_scores(&matrix(vec![10; 5], scaled), &labels).unwrap();
        for (a, b) in s.iter().zip(&t) {
            match (a.score, b.score) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                (x, y) => assert_eq!(x, y),
            }
        }
        // outlet 1 is the only liberal, so its own cluster mean is empty
        assert_eq!(s[1].score, None);
    }

    #[test]
    fn plus_one_when_conservative_mean_equals_overall() {
        use OutletLabel::*;
        // outlet 0: liberal 0, conservative 0.2, mainstream 0.4 -> overall 0.2
        let d = vec![
            0.0, 0.0, 0.2, 0.4, //
            0.0, 0.0, 0.1, 0.1, //
            0.2, 0.1, 0.0, 0.1, //
            0.4, 0.1, 0.1, 0.0,
        ];
        let s = slant_scores(
            &matrix(vec![10; 4], d),
            &[Mainstream, Liberal, Conservative, Mainstream],
        )
        .unwrap();
        assert!((s[0].score.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neutral_outlet_leans_liberal_via_mainstream_overlap() {
        use OutletLabel::*;
        // 0 neutral; 1-2 liberal; 3-4 mainstream; 5-6 conservative.
        // Liberal audiences overlap mainstream ones; the neutral outlet
        // overlaps mainstream more than conservative.
        let n = 7;
        let mut d = vec![0.0; n * n];
        let mut set = |a: usize, b: usize, w: f64| {
            d[a * n + b] = w;
            d[b * n + a] = w;
        };
        set(1, 2, 0.6);
        set(3, 4, 0.6);
        set(5, 6, 0.6);
        for l in [1, 2] {
            for m in [3, 4] {
                set(l, m, 0.35);
            }
            for c in [5, 6] {
                set(l, c, 0.05);
            }
        }
        for m in [3, 4] {
            for c in [5, 6] {
                set(m, c, 0.1);
            }
        }
        for m in [3, 4] {
            set(0, m, 0.3);
        }
        for c in [5, 6] {
            set(0, c, 0.1);
        }
        for l in [1, 2] {
            set(0, l, 0.15);
        }
        let labels = [
            Mainstream,
            Liberal,
            Liberal,
            Mainstream,
            Mainstream,
            Conservative,
            Conservative,
        ];
        let s = slant_scores(&matrix(vec![10; n], d), &labels).unwrap();
        assert!(s[0].score.unwrap() < 0.0);
    }

    #[test]
    fn isolated_outlet_is_unscored() {
        use OutletLabel::*;
        let n = 5;
        let mut d = vec![0.5; n * n];
        for i in 0..n {
            d[i * n + i] = 0.0;
            d[i] = 0.0;
            d[i * n] = 0.0;
        }
        let labels = [Mainstream, Liberal, Liberal, Conservative, Conservative];
        let s = slant_scores(&matrix(vec![10; n], d), &labels).unwrap();
        assert_eq!(s[0].score, None);
        assert!(s[1..].iter().all(|x| x.score.is_some()));
    }

    #[test]
    fn follower_list_parsing() {
        let text = "# header\n1\n2,0.1\n3\t0.9\nxx\n\n4, 0.39\n";
        let (ids, bots, bad) = read_follower_list(text.as_bytes(), Some(0.4)).unwrap();
        assert_eq!(ids, vec![1, 2, 4]);
        assert_eq!((bots, bad), (1, 1));
        let (ids, _, _) = read_follower_list(text.as_bytes(), None).unwrap();
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }

    #[test]
    fn anchors_csv() {
        let a = read_anchors(
            "label,outlet\nliberal,dailykos.com\nconservative, breitbart.com\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(
            a[1],
            (OutletLabel::Conservative, "breitbart.com".to_string())
        );
        assert!(read_anchors("centrist,x\n".as_bytes()).is_err());
    }

    #[test]
    fn directory_loading_excludes_small_outlets() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("big.txt"), "1\n2\n3\n").unwrap();
        fs::write(dir.path().join("small.txt"), "1\n").unwrap();
        let (s, rep) = FollowerSets::from_dir(
            dir.path(),
            &LoadOptions {
                min_followers: 2,
                bot_threshold: None,
            },
        )
        .unwrap();
        assert_eq!(s.outlets, vec!["big"]);
        assert_eq!(rep.excluded, vec![("small".to_string(), 1)]);
    }
}
