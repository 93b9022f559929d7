//! Per-account incoming/outgoing slant summaries, the incoming-by-outgoing
//! cross-tabulation, and the two-group conditional-logit estimator that
//! produces site slant (`gamma`) and quality (`alpha`) scores from visit data.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FollowerGraph;
use crate::ingest::NewsTweet;
use crate::AccountId;

/// Running count, mean and sum of squared deviations of slant, plus the mean
/// quality, mergeable in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SlantMoments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub quality_mean: f64,
}

impl SlantMoments {
    pub fn push(&mut self, slant: f64, quality: f64) {
        self.count += 1;
        let n = self.count as f64;
        let d = slant - self.mean;
        self.mean += d / n;
        self.m2 += d * (slant - self.mean);
        self.quality_mean += (quality - self.quality_mean) / n;
    }

    pub fn merge(&mut self, o: &SlantMoments) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.count as f64, o.count as f64);
        let n = na + nb;
        let d = o.mean - self.mean;
        self.mean += d * nb / n;
        self.m2 += o.m2 + d * d * na * nb / n;
        self.quality_mean += (o.quality_mean - self.quality_mean) * nb / n;
        self.count += o.count;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then_some(self.mean)
    }

    /// Population standard deviation; zero below two observations.
    pub fn sd(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2.max(0.0) / self.count as f64).sqrt()
        }
    }

    pub fn quality(&self) -> Option<f64> {
        (self.count > 0).then_some(self.quality_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountSummary {
    pub account_id: AccountId,
    pub out_mean: Option<f64>,
    pub out_sd: f64,
    pub out_count: u64,
    pub out_quality_mean: Option<f64>,
    pub in_mean: Option<f64>,
    pub in_sd: f64,
    pub in_count: u64,
    pub in_quality_mean: Option<f64>,
    /// Followers.
    pub outdegree: usize,
    /// Followees.
    pub indegree: usize,
    pub clustering_coefficient: f64,
    pub retweet_count: u64,
}

impl AccountSummary {
    /// Sent and received at least one news link; the regression population.
    pub fn has_both(&self) -> bool {
        self.out_count > 0 && self.in_count > 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outgoing {
    pub moments: Vec<SlantMoments>,
    pub retweets: Vec<u64>,
    /// News tweets whose author is not a node of the graph.
    pub unknown_authors: usize,
}

impl Outgoing {
    pub fn newscounts(&self) -> Vec<u64> {
        self.moments.iter().map(|m| m.count).collect()
    }
}

/// Outgoing slant distribution of every account, in tweet order.
pub fn outgoing_moments(g: &FollowerGraph, tweets: &[NewsTweet]) -> Outgoing {
    let n = g.node_count();
    let mut out = Outgoing {
        moments: vec![SlantMoments::default(); n],
        retweets: vec![0; n],
        unknown_authors: 0,
    };
    for t in tweets {
        match g.index_of(t.author_id) {
            Some(v) => {
                out.moments[v].push(t.slant, t.quality);
                out.retweets[v] += u64::from(t.retweet);
            }
            None => out.unknown_authors += 1,
        }
    }
    out
}

/// Incoming distribution of each node: the union of its followees' outgoing
/// distributions. With `within`, only followees inside the mask count.
pub fn incoming_moments(
    g: &FollowerGraph,
    outgoing: &[SlantMoments],
    within: Option<&[bool]>,
) -> Vec<SlantMoments> {
    (0..g.node_count())
        .into_par_iter()
        .map(|v| {
            let mut m = SlantMoments::default();
            for &u in g.in_neighbors(v) {
                if within.map_or(true, |mask| mask[u]) {
                    m.merge(&outgoing[u]);
                }
            }
            m
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SummaryTable {
    /// One row per graph node, in node-index order.
    pub rows: Vec<AccountSummary>,
    pub unknown_authors: usize,
}

impl SummaryTable {
    pub fn with_both(&self) -> impl Iterator<Item = &AccountSummary> {
        self.rows.iter().filter(|r| r.has_both())
    }
}

pub fn account_summaries(g: &FollowerGraph, tweets: &[NewsTweet]) -> SummaryTable {
    let out = outgoing_moments(g, tweets);
    let inc = incoming_moments(g, &out.moments, None);
    let clustering = g.all_clustering();
    let rows = (0..g.node_count())
        .map(|v| {
            let (o, i) = (&out.moments[v], &inc[v]);
            AccountSummary {
                account_id: g.id(v),
                out_mean: o.mean(),
                out_sd: o.sd(),
                out_count: o.count,
                out_quality_mean: o.quality(),
                in_mean: i.mean(),
                in_sd: i.sd(),
                in_count: i.count,
                in_quality_mean: i.quality(),
                outdegree: g.outdegree(v),
                indegree: g.indegree(v),
                clustering_coefficient: clustering[v],
                retweet_count: out.retweets[v],
            }
        })
        .collect();
    SummaryTable {
        rows,
        unknown_authors: out.unknown_authors,
    }
}

pub fn write_summaries_csv<W: Write>(rows: &[AccountSummary], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_summaries_csv<R: Read>(r: R) -> Result<Vec<AccountSummary>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Account counts by (outgoing, incoming) mean slant over half-open
/// `(lo, hi]` bins. Values beyond the range land in the outermost bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crosstab {
    pub edges: Vec<f64>,
    /// `counts[out_bin][in_bin]`.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    pub clamped: u64,
}

impl Crosstab {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn bin_label(&self, k: usize) -> String {
        format!("({},{}]", self.edges[k], self.edges[k + 1])
    }
}

pub fn crosstab(rows: &[AccountSummary], bin_width: f64, lo: f64, hi: f64) -> Result<Crosstab> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no accounts to tabulate".into()));
    }
    if !(bin_width > 0.0) || !(hi > lo) {
        return Err(Error::InvalidParameter("bad crosstab range".into()));
    }
    let nb = ((hi - lo) / bin_width).round() as usize;
    let edges: Vec<f64> = (0..=nb).map(|k| lo + k as f64 * bin_width).collect();
    let mut counts = vec![vec![0u64; nb]; nb];
    let mut total = 0;
    let mut clamped = 0;
    let bin = |x: f64, clamped: &mut u64| -> usize {
        let raw = ((x - lo) / bin_width).ceil() as i64 - 1;
        if raw < 0 || raw >= nb as i64 {
            *clamped += 1;
        }
        raw.clamp(0, nb as i64 - 1) as usize
    };
    for r in rows {
        if let (Some(o), Some(i)) = (r.out_mean, r.in_mean) {
            let mut c = 0;
            let ob = bin(o, &mut c);
            let ib = bin(i, &mut c);
            clamped += u64::from(c > 0);
            counts[ob][ib] += 1;
            total += 1;
        }
    }
    Ok(Crosstab {
        edges,
        counts,
        total,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub user_id: AccountId,
    pub site_id: usize,
    pub conservative: bool,
}

pub fn read_visits_csv<R: Read>(r: R) -> Result<Vec<VisitRecord>> {
    #[derive(Deserialize)]
    struct Row {
        user_id: AccountId,
        site_id: usize,
        conservative: u8,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row?;
        if row.conservative > 1 {
            return Err(Error::Parse {
                line: i + 2,
                reason: "conservative must be 0 or 1".into(),
            });
        }
        out.push(VisitRecord {
            user_id: row.user_id,
            site_id: row.site_id,
            conservative: row.conservative == 1,
        });
    }
    Ok(out)
}

pub fn read_visits_path(path: &Path) -> Result<Vec<VisitRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_visits_csv(f)
}

/// Multinomial logit over sites with utility `alpha_j + (2c - 1) gamma_j`,
/// site 0 fixed at zero. Parameters are packed as
/// `[alpha_1..alpha_{J-1}, gamma_1..gamma_{J-1}]`.
#[derive(Debug, Clone)]
pub struct LogitProblem {
    /// `counts[g][j]`, g = 0 liberal, 1 conservative.
    counts: [Vec<f64>; 2],
    totals: [f64; 2],
    pub ridge: f64,
}

const GROUP_SIGN: [f64; 2] = [-1.0, 1.0];

impl LogitProblem {
    pub fn new(visits: &[VisitRecord], n_sites: usize, ridge: f64) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::InvalidParameter("need at least two sites".into()));
        }
        if ridge < 0.0 {
            return Err(Error::InvalidParameter("ridge must be non-negative".into()));
        }
        let mut counts = [vec![0.0; n_sites], vec![0.0; n_sites]];
        for v in visits {
            if v.site_id >= n_sites {
                return Err(Error::InvalidParameter(format!(
                    "site_id {} out of range (n_sites = {n_sites})",
                    v.site_id
                )));
            }
            counts[usize::from(v.conservative)][v.site_id] += 1.0;
        }
        let totals = [counts[0].iter().sum(), counts[1].iter().sum()];
        Ok(Self {
            counts,
            totals,
            ridge,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.counts[0].len()
    }

    pub fn n_params(&self) -> usize {
        2 * (self.n_sites() - 1)
    }

    fn unpack(&self, theta: &[f64], g: usize) -> Vec<f64> {
        let k = self.n_sites() - 1;
        let mut eta = vec![0.0; k + 1];
        for j in 1..=k {
            eta[j] = theta[j - 1] + GROUP_SIGN[g] * theta[k + j - 1];
        }
        eta
    }

    fn probs(eta: &[f64]) -> (Vec<f64>, f64) {
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = eta.iter().map(|e| (e - m).exp()).sum();
        let lse = m + z.ln();
        (eta.iter().map(|e| (e - lse).exp()).collect(), lse)
    }

    /// Penalized log-likelihood.
    pub fn loglik(&self, theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for g in 0..2 {
            let eta = self.unpack(theta, g);
            let (_, lse) = Self::probs(&eta);
            ll += self.counts[g]
                .iter()
                .zip(&eta)
                .map(|(n, e)| n * e)
                .sum::<f64>()
                - self.totals[g] * lse;
        }
        ll - 0.5 * self.ridge * theta.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.n_sites() - 1;
        let mut grad: Vec<f64> = theta.iter().map(|x| -self.ridge * x).collect();
        for g in 0..2 {
            let (p, _) = Self::probs(&self.unpack(theta, g));
            for j in 1..=k {
                let r = self.counts[g][j] - self.totals[g] * p[j];
                grad[j - 1] += r;
                grad[k + j - 1] += GROUP_SIGN[g] * r;
            }
        }
        grad
    }

    /// Negative Hessian (the observed information), positive semi-definite.
    pub fn information(&self, theta: &[f64]) -> DMatrix<f64> {
        let k = self.n_sites() - 1;
        let mut info = DMatrix::identity(2 * k, 2 * k) * self.ridge;
        for g in 0..2 {
            let (p, _) = Self::probs(&self.unpack(theta, g));
            let s = GROUP_SIGN[g];
            let ng = self.totals[g];
            for a in 1..=k {
                for b in 1..=k {
                    let c = ng * (if a == b { p[a] } else { 0.0 } - p[a] * p[b]);
                    info[(a - 1, b - 1)] += c;
                    info[(a - 1, k + b - 1)] += s * c;
                    info[(k + a - 1, b - 1)] += s * c;
                    info[(k + a - 1, k + b - 1)] += c;
                }
            }
        }
        info
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogitOptions {
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogitFit {
    /// Per-site quality, `alpha[0] = 0`.
    pub alpha: Vec<f64>,
    /// Per-site slant, `gamma[0] = 0`.
    pub gamma: Vec<f64>,
    pub se_alpha: Vec<f64>,
    pub se_gamma: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton ascent; a diagonal shift is added whenever the information
/// matrix fails to factor.
pub fn fit_slant_logit(
    visits: &[VisitRecord],
    n_sites: usize,
    opts: LogitOptions,
) -> Result<LogitFit> {
    let prob = LogitProblem::new(visits, n_sites, opts.ridge)?;
    if opts.ridge == 0.0 {
        for g in 0..2 {
            if let Some(j) = prob.counts[g].iter().position(|&c| c == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "site {j} has no visits from group {g}; enable ridge regularization"
                )));
            }
        }
    }
    let k = n_sites - 1;
    let mut theta = vec![0.0; 2 * k];
    let mut ll = prob.loglik(&theta);
    let mut iterations = 0;
    let mut grad = prob.gradient(&theta);
    while inf_norm(&grad) >= opts.tol {
        if iterations >= opts.max_iter {
            let (alpha, gamma) = split(&theta, k);
            return Err(Error::LogitNonConvergence {
                iterations,
                gradient_norm: inf_norm(&grad),
                alpha,
                gamma,
            });
        }
        iterations += 1;
        let info = prob.information(&theta);
        let g = DVector::from_vec(grad.clone());
        let mut shift = 0.0;
        let step = loop {
            let m = &info + DMatrix::identity(2 * k, 2 * k) * shift;
            if let Some(ch) = m.cholesky() {
                break ch.solve(&g);
            }
            shift = if shift == 0.0 {
                1e-8 * info.diagonal().max().max(1.0)
            } else {
                shift * 10.0
            };
        };
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a + t * b)
                .collect();
            let cand_ll = prob.loglik(&cand);
            if cand_ll >= ll || t < 1e-10 {
                theta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        grad = prob.gradient(&theta);
    }
    let cov = prob
        .information(&theta)
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(2 * k, 2 * k, f64::NAN));
    let se: Vec<f64> = (0..2 * k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let (alpha, gamma) = split(&theta, k);
    let (se_alpha, se_gamma) = split(&se, k);
    Ok(LogitFit {
        alpha,
        gamma,
        se_alpha,
        se_gamma,
        loglik: ll,
        iterations,
    })
}

fn split(v: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0];
    a.extend_from_slice(&v[..k]);
    let mut b = vec![0.0];
    b.extend_from_slice(&v[k..]);
    (a, b)
}
