//! Seeded generators with planted ground truth: slant populations on
//! prominence-ordered follower graphs, event logs with planted
//! outgoing-on-incoming slopes, planted-partition graphs, outlet audiences
//! and choice-model visits.
//!
//! Every random draw comes from a stream keyed by `(seed, domain, entity)`,
//! so results do not depend on generation order or thread count.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::affinity::{FollowerSets, OutletLabel};
use crate::error::{Error, Result};
use crate::graph::FollowerGraph;
use crate::ingest::{SlantEntry, TweetRecord};
use crate::rng::keyed2;
use crate::slantstats::{SlantMoments, VisitRecord};
use crate::AccountId;

const D_RANK: u64 = 1;
const D_LATENT: u64 = 2;
const D_FOLLOW: u64 = 3;
const D_EVENTS: u64 = 4;
const D_BLOCKS: u64 = 5;
const D_AUDIENCE: u64 = 6;
const D_VISITS: u64 = 7;

/// First synthetic account id; account `i` gets `ID_BASE + i`.
pub const ID_BASE: AccountId = 100_000;
/// Start of the synthetic event clock (2009-06-01T00:00:00Z).
pub const EPOCH: i64 = 1_243_814_400;
/// Events span this many seconds after `EPOCH`.
pub const EVENT_SPAN: i64 = 7 * 24 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_accounts: usize,
    /// Share of accounts, by prominence, that form the planted core.
    pub core_fraction: f64,
    /// Follow acceptance decays as `exp(-h |slant difference|)`.
    pub homophily: f64,
    pub mean_followees: f64,
    /// Relative acceptance of follows aimed at core accounts.
    pub core_boost: f64,
    /// Planted slope of outgoing on incoming slant for the most prominent
    /// core account; it falls linearly to `periphery_shrink` at the core
    /// boundary.
    pub core_amplify: f64,
    /// Planted slope for periphery accounts, on incoming from periphery
    /// followees.
    pub periphery_shrink: f64,
    pub core_tweet_rate: f64,
    /// Periphery rate is `base + growth * z^2` for prominence `z` in (0, 1].
    pub periphery_tweet_rate: f64,
    pub periphery_rate_growth: f64,
    /// Latent slant mixture: weight of the conservative component, and the
    /// component means `+-mean` with common sd.
    pub mixture_weight: f64,
    pub mixture_mean: f64,
    pub mixture_sd: f64,
    /// Per-account deviation from the planted line.
    pub account_noise: f64,
    /// Per-tweet deviation before rounding to an outlet.
    pub tweet_noise: f64,
    /// Outlet slant grid: `-outlet_range..=outlet_range` in `outlet_step`.
    pub outlet_range: f64,
    pub outlet_step: f64,
    pub shortened_fraction: f64,
    pub retweet_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_accounts: 2_000,
            core_fraction: 0.2,
            homophily: 5.0,
            mean_followees: 20.0,
            core_boost: 6.0,
            core_amplify: 1.2,
            periphery_shrink: 0.7,
            core_tweet_rate: 30.0,
            periphery_tweet_rate: 1.0,
            periphery_rate_growth: 6.0,
            mixture_weight: 0.5,
            mixture_mean: 1.0,
            mixture_sd: 0.3,
            account_noise: 0.3,
            tweet_noise: 0.4,
            outlet_range: 4.0,
            outlet_step: 0.05,
            shortened_fraction: 0.2,
            retweet_fraction: 0.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("core_fraction", self.core_fraction),
            ("mixture_weight", self.mixture_weight),
            ("shortened_fraction", self.shortened_fraction),
            ("retweet_fraction", self.retweet_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        let nonneg = [
            ("homophily", self.homophily),
            ("mean_followees", self.mean_followees),
            ("core_tweet_rate", self.core_tweet_rate),
            ("periphery_tweet_rate", self.periphery_tweet_rate),
            ("periphery_rate_growth", self.periphery_rate_growth),
            ("mixture_sd", self.mixture_sd),
            ("account_noise", self.account_noise),
            ("tweet_noise", self.tweet_noise),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.core_boost > 0.0) || !(self.outlet_step > 0.0) || !(self.outlet_range > 0.0) {
            return Err(Error::InvalidParameter(
                "core_boost, outlet_step and outlet_range must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn id(&self, i: usize) -> AccountId {
        ID_BASE + i as AccountId
    }

    fn poisson(rate: f64, r: &mut impl Rng) -> u64 {
        if rate <= 0.0 {
            0
        } else {
            Poisson::new(rate).map(|p| p.sample(r) as u64).unwrap_or(0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    /// Latent slant per account.
    pub latent: Vec<f64>,
    /// 0 is the most prominent account.
    pub rank: Vec<usize>,
    /// Accounts by ascending rank.
    pub order: Vec<usize>,
    pub core: Vec<bool>,
    pub graph: FollowerGraph,
}

impl Population {
    /// Prominence in (0, 1], 1 for the top account.
    pub fn prominence(&self, v: usize) -> f64 {
        1.0 - self.rank[v] as f64 / self.rank.len() as f64
    }
}

/// Accounts, latent slants and the follow graph.
///
/// Prominence is a keyed random ranking. Each account proposes follows of
/// uniformly chosen more prominent accounts, so the graph is acyclic, and
/// accepts a proposal with probability `exp(-h |d|) * boost / max_boost`,
/// where `d` is the latent slant difference and `boost` is `core_boost` for
/// core targets and 1 otherwise.
pub fn gen_population(cfg: &SynthConfig) -> Result<Population> {
    cfg.validate()?;
    let n = cfg.n_accounts;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed2(cfg.seed, D_RANK, 0));
    let mut rank = vec![0; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let n_core = (cfg.core_fraction * n as f64).ceil() as usize;
    let core: Vec<bool> = (0..n).map(|v| rank[v] < n_core).collect();

    let comp =
        Normal::new(0.0, cfg.mixture_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let latent: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut r = keyed2(cfg.seed, D_LATENT, v as u64);
            let sign = if r.random::<f64>() < cfg.mixture_weight {
                1.0
            } else {
                -1.0
            };
            sign * cfg.mixture_mean + comp.sample(&mut r)
        })
        .collect();

    let max_boost = cfg.core_boost.max(1.0);
    let followees: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let rv = rank[v];
            if rv == 0 {
                return vec![];
            }
            let mut r = keyed2(cfg.seed, D_FOLLOW, v as u64);
            let want = (SynthConfig::poisson(cfg.mean_followees, &mut r) as usize).min(rv);
            let mut chosen = HashSet::with_capacity(want);
            let mut tries = 0;
            while chosen.len() < want && tries < 100 * want + 100 {
                tries += 1;
                let u = order[r.random_range(0..rv)];
                if chosen.contains(&u) {
                    continue;
                }
                let boost = if core[u] { cfg.core_boost } else { 1.0 };
                let p = (-cfg.homophily * (latent[u] - latent[v]).abs()).exp() * boost / max_boost;
                if r.random::<f64>() < p {
                    chosen.insert(u);
                }
            }
            let mut out: Vec<usize> = chosen.into_iter().collect();
            out.sort_unstable();
            out
        })
        .collect();

    let edges = followees
        .iter()
        .enumerate()
        .flat_map(|(v, fs)| fs.iter().map(move |&u| (cfg.id(u), cfg.id(v))));
    let graph = FollowerGraph::from_edges((0..n).map(|i| cfg.id(i)), edges);
    Ok(Population {
        latent,
        rank,
        order,
        core,
        graph,
    })
}

/// Synthetic outlets on an evenly spaced slant grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OutletGrid {
    pub slants: Vec<f64>,
}

impl OutletGrid {
    pub fn new(range: f64, step: f64) -> Self {
        let k = (range / step).round() as i64;
        Self {
            slants: (-k..=k).map(|i| i as f64 * step).collect(),
        }
    }

    pub fn nearest(&self, x: f64) -> usize {
        let step = self.slants[1] - self.slants[0];
        let i = ((x - self.slants[0]) / step).round();
        i.clamp(0.0, (self.slants.len() - 1) as f64) as usize
    }

    pub fn domain(&self, i: usize) -> String {
        format!("n{i:03}.news.example")
    }

    pub fn quality(&self, i: usize) -> f64 {
        // mild, deterministic variation; unrelated to slant sign
        0.5 * (i as f64 * 0.37).sin()
    }

    pub fn table_entries(&self) -> Vec<SlantEntry> {
        (0..self.slants.len())
            .map(|i| SlantEntry {
                pattern: self.domain(i),
                slant: self.slants[i],
                quality: self.quality(i),
                label: format!("Outlet {i:03}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthEvents {
    pub records: Vec<TweetRecord>,
    /// `(short url, final url)` pairs for shortened links.
    pub redirects: Vec<(String, String)>,
    pub grid: OutletGrid,
    /// Planted outgoing target per account.
    pub target: Vec<f64>,
    /// Realized outgoing slant moments per account.
    pub realized: Vec<SlantMoments>,
}

/// Events with planted outgoing slants.
///
/// Accounts are processed from most to least prominent, so every
/// followee's tweets exist before its followers'. A core account targets a
/// multiple of the mean slant of everything its followees posted; the
/// multiple falls linearly with prominence rank from `core_amplify` at the
/// top account to `periphery_shrink` at the core boundary, so stricter core
/// definitions select steeper slopes;
/// a periphery account targets `periphery_shrink` times the mean over its
/// periphery followees only (all followees if it follows only core
/// accounts); an account without followee tweets targets its latent slant.
/// The planted lines pass through the mean slant of all tweets generated so
/// far rather than through zero, which keeps an amplifying core from
/// drifting as a whole toward the edge of the outlet grid.
/// Account noise is added to the target and tweet noise to each tweet,
/// which is then rounded to the nearest grid outlet.
pub fn gen_events(pop: &Population, cfg: &SynthConfig) -> Result<SynthEvents> {
    cfg.validate()?;
    let n = pop.latent.len();
    let grid = OutletGrid::new(cfg.outlet_range, cfg.outlet_step);
    let acct =
        Normal::new(0.0, cfg.account_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let tw =
        Normal::new(0.0, cfg.tweet_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut realized = vec![SlantMoments::default(); n];
    let mut target = vec![0.0; n];
    let mut outlets: Vec<Vec<usize>> = vec![vec![]; n];
    let mut so_far = SlantMoments::default();
    let n_core = pop.core.iter().filter(|&&c| c).count().max(1) as f64;

    for &v in &pop.order {
        let mut full = SlantMoments::default();
        let mut per = SlantMoments::default();
        for &u in pop.graph.in_neighbors(v) {
            full.merge(&realized[u]);
            if !pop.core[u] {
                per.merge(&realized[u]);
            }
        }
        let center = so_far.mean().unwrap_or(0.0);
        let line = |k: f64, x: f64| center + k * (x - center);
        let base = if pop.core[v] {
            let k = cfg.core_amplify
                - (cfg.core_amplify - cfg.periphery_shrink) * pop.rank[v] as f64 / n_core;
            full.mean().map(|m| line(k, m))
        } else {
            per.mean()
                .or(full.mean())
                .map(|m| line(cfg.periphery_shrink, m))
        };
        let mut r = keyed2(cfg.seed, D_EVENTS, v as u64);
        let t = base.unwrap_or(pop.latent[v]) + acct.sample(&mut r);
        target[v] = t;
        let z = pop.prominence(v);
        let rate = if pop.core[v] {
            cfg.core_tweet_rate
        } else {
            cfg.periphery_tweet_rate + cfg.periphery_rate_growth * z * z
        };
        let k = SynthConfig::poisson(rate, &mut r);
        for _ in 0..k {
            let o = grid.nearest(t + tw.sample(&mut r));
            realized[v].push(grid.slants[o], grid.quality(o));
            outlets[v].push(o);
        }
        so_far.merge(&realized[v]);
    }

    // Render records in account order; identifiers and decorations come
    // from a second keyed stream per account.
    let mut records = vec![];
    let mut redirects = vec![];
    for v in 0..n {
        let mut r = keyed2(cfg.seed, D_EVENTS, (n + v) as u64);
        for (k, &o) in outlets[v].iter().enumerate() {
            let tweet_id = format!("{}{:05}", cfg.id(v), k);
            let host = grid.domain(o);
            let final_url = format!("https://www.{host}/story/{tweet_id}?src=tw");
            let url = if r.random::<f64>() < cfg.shortened_fraction {
                let short = format!("http://t.co/{tweet_id}");
                redirects.push((short.clone(), final_url));
                short
            } else {
                final_url
            };
            records.push(TweetRecord {
                tweet_id,
                author_id: cfg.id(v),
                timestamp: EPOCH + r.random_range(0..EVENT_SPAN),
                raw_urls: vec![url],
                retweet: r.random::<f64>() < cfg.retweet_fraction,
            });
        }
    }
    Ok(SynthEvents {
        records,
        redirects,
        grid,
        target,
        realized,
    })
}

/// Undirected planted partition as a reciprocal directed graph. Nodes are
/// assigned to `k` equal-as-possible blocks by a keyed shuffle; returns the
/// graph and each node's block.
pub fn gen_blocks(
    n: usize,
    k: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(FollowerGraph, Vec<usize>)> {
    if k == 0 || k > n.max(1) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k <= n, got k={k} n={n}"
        )));
    }
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "probability {p} outside [0, 1]"
            )));
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut keyed2(seed, D_BLOCKS, u64::MAX));
    let mut block = vec![0; n];
    for (pos, &v) in perm.iter().enumerate() {
        block[v] = pos % k;
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut r = keyed2(seed, D_BLOCKS, u as u64);
            let block = &block;
            (u + 1..n)
                .filter(move |&v| {
                    let p = if block[u] == block[v] { p_in } else { p_out };
                    r.random::<f64>() < p
                })
                .map(move |v| (u, v))
                .collect::<Vec<_>>()
        })
        .collect();
    let g = FollowerGraph::from_index_pairs(n, pairs.iter().flat_map(|&(u, v)| [(u, v), (v, u)]));
    Ok((g, block))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AudienceConfig {
    /// Outlets per cluster: liberal, mainstream, conservative.
    pub outlets: [usize; 3],
    /// User pool sizes: liberal, mainstream, conservative.
    pub pool: [usize; 3],
    /// `follow[pool][cluster]`: probability that a pool user follows an
    /// outlet of the cluster, before the outlet's size factor.
    pub follow: [[f64; 3]; 3],
    /// Outlet size factors are uniform on this interval.
    pub size_range: (f64, f64),
    pub seed: u64,
}

impl Default for AudienceConfig {
    fn default() -> Self {
        Self {
            outlets: [33, 34, 33],
            pool: [3_000; 3],
            // liberal readers also follow mainstream outlets
            follow: [[0.7, 0.2, 0.02], [0.1, 0.7, 0.1], [0.02, 0.1, 0.7]],
            size_range: (0.75, 1.0),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Audiences {
    pub sets: FollowerSets,
    /// Planted cluster per outlet (in `sets` order).
    pub cluster: Vec<OutletLabel>,
    /// Expected conservative minus liberal follower share per outlet.
    pub lean: Vec<f64>,
}

/// Planted follower sets for three outlet clusters drawn from three user
/// pools.
pub fn gen_audiences(cfg: &AudienceConfig) -> Result<Audiences> {
    for row in &cfg.follow {
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter(
                "follow probabilities must lie in [0, 1]".into(),
            ));
        }
    }
    let (lo, hi) = cfg.size_range;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidParameter(
            "size_range must satisfy 0 < lo <= hi <= 1".into(),
        ));
    }
    const LABELS: [OutletLabel; 3] = [
        OutletLabel::Liberal,
        OutletLabel::Mainstream,
        OutletLabel::Conservative,
    ];
    const PREFIX: [&str; 3] = ["lib", "main", "cons"];
    let mut outlets = vec![];
    for c in 0..3 {
        for i in 0..cfg.outlets[c] {
            outlets.push((format!("{}{:03}", PREFIX[c], i), c));
        }
    }
    let offsets = [0, cfg.pool[0], cfg.pool[0] + cfg.pool[1]];
    let entries: Vec<(String, Vec<AccountId>)> = outlets
        .par_iter()
        .enumerate()
        .map(|(o, (name, c))| {
            let mut r = keyed2(cfg.seed, D_AUDIENCE, o as u64);
            let size = lo + (hi - lo) * r.random::<f64>();
            let mut ids = vec![];
            for pool in 0..3 {
                let p = cfg.follow[pool][*c] * size;
                for u in 0..cfg.pool[pool] {
                    if r.random::<f64>() < p {
                        ids.push(ID_BASE + (offsets[pool] + u) as AccountId);
                    }
                }
            }
            (name.clone(), ids)
        })
        .collect();
    let sets = FollowerSets::new(entries);
    let by_name: std::collections::HashMap<&str, usize> = outlets
        .iter()
        .map(|(name, c)| (name.as_str(), *c))
        .collect();
    let cluster_of: Vec<usize> = sets.outlets.iter().map(|o| by_name[o.as_str()]).collect();
    let lean = cluster_of
        .iter()
        .map(|&c| {
            let share: Vec<f64> = (0..3)
                .map(|p| cfg.pool[p] as f64 * cfg.follow[p][c])
                .collect();
            let total: f64 = share.iter().sum();
            (share[2] - share[0]) / total
        })
        .collect();
    Ok(Audiences {
        cluster: cluster_of.iter().map(|&c| LABELS[c]).collect(),
        sets,
        lean,
    })
}

/// Visits from the two-group logit: a user of sign `g` (-1 liberal, +1
/// conservative) picks site `j` with probability proportional to
/// `exp(alpha_j + g gamma_j)`. Site 0 is the reference with zero
/// parameters, so `alpha` and `gamma` cover sites `1..`.
pub fn gen_visits(
    alpha: &[f64],
    gamma: &[f64],
    n_visits: usize,
    seed: u64,
) -> Result<Vec<VisitRecord>> {
    if alpha.len() != gamma.len() || alpha.is_empty() {
        return Err(Error::InvalidParameter(
            "alpha and gamma must have the same nonzero length".into(),
        ));
    }
    let cdf = |g: f64| {
        let eta: Vec<f64> = std::iter::once(0.0)
            .chain(alpha.iter().zip(gamma).map(|(a, c)| a + g * c))
            .collect();
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut out: Vec<f64> = eta
            .iter()
            .map(|e| {
                acc += (e - m).exp();
                acc
            })
            .collect();
        out.iter_mut().for_each(|x| *x /= acc);
        out
    };
    let cdfs = [cdf(-1.0), cdf(1.0)];
    Ok((0..n_visits)
        .into_par_iter()
        .map(|i| {
            let mut r = keyed2(seed, D_VISITS, i as u64);
            let conservative = r.random::<bool>();
            let u = r.random::<f64>();
            let c = &cdfs[usize::from(conservative)];
            let site = c.partition_point(|&x| x < u).min(c.len() - 1);
            VisitRecord {
                user_id: i as AccountId,
                site_id: site,
                conservative,
            }
        })
        .collect())
}

/// Everything a demo corpus needs, written under `dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub accounts: usize,
    pub edges: usize,
    pub records: usize,
    pub active_accounts: usize,
    pub redirects: usize,
    pub outlets: usize,
    pub audience_outlets: usize,
    pub visits: usize,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Write the demo corpus: `events.jsonl`, `edges.tsv`, `slant_table.csv`,
/// `resolver.tsv`, `truth.csv`, `followers/`, `anchors.csv`,
/// `audience_truth.csv` and `visits.csv`.
pub fn write_corpus(
    dir: &Path,
    cfg: &SynthConfig,
    aud: &AudienceConfig,
    n_visits: usize,
) -> Result<CorpusSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pop = gen_population(cfg)?;
    let ev = gen_events(&pop, cfg)?;

    let p = dir.join("events.jsonl");
    let mut w = create(&p)?;
    for r in &ev.records {
        let obj = serde_json::json!({
            "tweet_id": r.tweet_id,
            "author_id": r.author_id,
            "timestamp": r.timestamp,
            "urls": r.raw_urls,
            "retweet": r.retweet,
        });
        writeln!(w, "{obj}").map_err(io_at(&p))?;
    }
    w.flush().map_err(io_at(&p))?;

    let p = dir.join("edges.tsv");
    let mut w = create(&p)?;
    for (u, v) in pop.graph.edges() {
        writeln!(w, "{}\t{}", pop.graph.id(u), pop.graph.id(v)).map_err(io_at(&p))?;
    }
    w.flush().map_err(io_at(&p))?;

    let p = dir.join("slant_table.csv");
    let mut wr = csv::Writer::from_writer(create(&p)?);
    wr.write_record(["pattern", "slant", "quality", "label"])?;
    for e in ev.grid.table_entries() {
        wr.write_record([
            e.pattern,
            format!("{:.2}", e.slant),
            format!("{:.6}", e.quality),
            e.label,
        ])?;
    }
    wr.flush().map_err(io_at(&p))?;

    let p = dir.join("resolver.tsv");
    let mut w = create(&p)?;
    for (s, t) in &ev.redirects {
        writeln!(w, "{s}\t{t}").map_err(io_at(&p))?;
    }
    w.flush().map_err(io_at(&p))?;

    let p = dir.join("truth.csv");
    let mut wr = csv::Writer::from_writer(create(&p)?);
    wr.write_record(["account_id", "rank", "core", "latent", "target"])?;
    for v in 0..pop.latent.len() {
        wr.write_record([
            pop.graph.id(v).to_string(),
            pop.rank[v].to_string(),
            u8::from(pop.core[v]).to_string(),
            format!("{:.6}", pop.latent[v]),
            format!("{:.6}", ev.target[v]),
        ])?;
    }
    wr.flush().map_err(io_at(&p))?;

    let audiences = gen_audiences(aud)?;
    let fdir = dir.join("followers");
    fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
    for (name, set) in audiences.sets.outlets.iter().zip(&audiences.sets.sets) {
        let p = fdir.join(format!("{name}.txt"));
        let mut w = create(&p)?;
        for id in set {
            writeln!(w, "{id}").map_err(io_at(&p))?;
        }
        w.flush().map_err(io_at(&p))?;
    }
    let p = dir.join("anchors.csv");
    let mut w = create(&p)?;
    writeln!(w, "label,outlet").map_err(io_at(&p))?;
    for (label, prefix) in [("liberal", "lib"), ("conservative", "cons")] {
        for i in 0..2 {
            writeln!(w, "{label},{prefix}{i:03}").map_err(io_at(&p))?;
        }
    }
    w.flush().map_err(io_at(&p))?;
    let p = dir.join("audience_truth.csv");
    let mut wr = csv::Writer::from_writer(create(&p)?);
    wr.write_record(["outlet", "cluster", "lean"])?;
    for i in 0..audiences.sets.len() {
        wr.write_record([
            audiences.sets.outlets[i].clone(),
            audiences.cluster[i].to_string(),
            format!("{:.6}", audiences.lean[i]),
        ])?;
    }
    wr.flush().map_err(io_at(&p))?;

    let alpha = [0.3, -0.2, 0.1, 0.5];
    let gamma = [-0.8, -0.2, 0.4, 0.9];
    let visits = gen_visits(&alpha, &gamma, n_visits, cfg.seed)?;
    let p = dir.join("visits.csv");
    let mut wr = csv::Writer::from_writer(create(&p)?);
    wr.write_record(["user_id", "site_id", "conservative"])?;
    for v in &visits {
        wr.write_record([
            v.user_id.to_string(),
            v.site_id.to_string(),
            u8::from(v.conservative).to_string(),
        ])?;
    }
    wr.flush().map_err(io_at(&p))?;

    Ok(CorpusSummary {
        accounts: pop.latent.len(),
        edges: pop.graph.edge_count(),
        records: ev.records.len(),
        active_accounts: ev.realized.iter().filter(|m| m.count > 0).count(),
        redirects: ev.redirects.len(),
        outlets: ev.grid.slants.len(),
        audience_outlets: audiences.sets.len(),
        visits: visits.len(),
    })
}
