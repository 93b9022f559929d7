//! Subcommand bodies. Each reads its settings from a resolved [`Config`],
//! writes reports under `out`, and records inputs and outputs on the [`Run`].

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use diversigraph_core::affinity::{self, FollowerSets, LoadOptions, SpinGlassOptions};
use diversigraph_core::community::{self, EigenOptions};
use diversigraph_core::graph::{self, ShareReport};
use diversigraph_core::ingest::{
    self, AgeWindow, EdgeStats, EventStats, MissPolicy, ResolverCache, UrlStats,
};
use diversigraph_core::permscore::{self, CriticalConfig, Permutation, SlantKey};
use diversigraph_core::regression::{self, ModelKind, ModelSpec, SweepMode};
use diversigraph_core::slantstats::{self, LogitOptions};
use diversigraph_core::synth::{self, AudienceConfig, SynthConfig};
use diversigraph_core::{AccountId, AccountSummary, FollowerGraph, NewsTweet, SlantTable};

use crate::config::Config;
use crate::manifest::{sha256_path, InputDigest, RunManifest};
use crate::svg;

pub struct Run<'a> {
    pub cfg: &'a Config,
    pub out: PathBuf,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    seeds: Vec<u64>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a Config) -> Result<Self> {
        let out = cfg.path("out")?;
        fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
        Ok(Self {
            cfg,
            out,
            inputs: vec![],
            outputs: vec![],
            seeds: vec![cfg.u64("seed")?],
        })
    }

    /// Resolve a required input path, fail if it is missing, and digest it.
    fn input(&mut self, key: &str) -> Result<PathBuf> {
        let p = self
            .cfg
            .path(key)
            .with_context(|| format!("missing input: set {key}"))?;
        self.digest(key, &p)?;
        Ok(p)
    }

    fn opt_input(&mut self, key: &str) -> Result<Option<PathBuf>> {
        match self.cfg.is_set(key) {
            true => self.input(key).map(Some),
            false => Ok(None),
        }
    }

    fn digest(&mut self, key: &str, p: &Path) -> Result<()> {
        if !p.exists() {
            bail!("missing input: {key} = {} does not exist", p.display());
        }
        self.inputs.push(InputDigest {
            key: key.to_string(),
            path: p.display().to_string(),
            sha256: sha256_path(p)?,
        });
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.out.join(name);
        fs::write(&p, bytes).with_context(|| format!("cannot write {}", p.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> diversigraph_core::Result<()>,
    ) -> Result<()> {
        let mut buf = vec![];
        f(&mut buf)?;
        self.write(name, buf)
    }
}

fn csv_bytes(rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

fn opt_num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Run `cmd` with resolved settings and write its manifest.
pub fn execute(cmd: &str, cfg: &Config) -> Result<RunManifest> {
    let start = Instant::now();
    let mut run = Run::new(cfg)?;
    match cmd {
        "ingest" => ingest_cmd(&mut run),
        "resolve" => resolve_cmd(&mut run),
        "summarize" => summarize_cmd(&mut run),
        "crosstab" => crosstab_cmd(&mut run),
        "regress" => regress_cmd(&mut run),
        "sweep" => sweep_cmd(&mut run),
        "permscore" => permscore_cmd(&mut run),
        "order" => order_cmd(&mut run),
        "compare" => compare_cmd(&mut run),
        "affinity" => affinity_cmd(&mut run),
        "logit" => logit_cmd(&mut run),
        "plot" => plot_cmd(&mut run),
        "synth" => synth_cmd(&mut run),
        other => bail!("unknown subcommand {other:?}"),
    }
    .with_context(|| format!("{cmd} failed"))?;
    let manifest = RunManifest {
        subcommand: cmd.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.restricted(cmd),
        inputs: run.inputs,
        seeds: run.seeds,
        outputs: run.outputs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write(&run.out.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Serialize)]
struct IngestReport {
    events: EventStats,
    warnings: Vec<(usize, String)>,
    window: Option<(i64, i64)>,
    resolver_entries: usize,
    resolver_skipped: usize,
    urls: UrlStats,
    news_tweets: usize,
    edges: Option<EdgeStats>,
    graph_from_cache: bool,
    nodes: usize,
    graph_edges: usize,
    unknown_authors: usize,
}

struct Corpus {
    graph: FollowerGraph,
    tweets: Vec<NewsTweet>,
    /// Accounts with at least one parsed event.
    authors: BTreeSet<AccountId>,
    report: IngestReport,
}

fn load_resolver(run: &mut Run) -> Result<(ResolverCache, usize)> {
    let policy: MissPolicy = run.cfg.parse("miss_policy")?;
    Ok(match run.opt_input("resolver")? {
        Some(p) => ResolverCache::from_path(&p, policy)?,
        None => (ResolverCache::new(policy), 0),
    })
}

fn load_corpus(run: &mut Run) -> Result<Corpus> {
    let events = run.input("events")?;
    let parsed = ingest::parse_events_path(&events)?;
    for (line, reason) in &parsed.warnings {
        eprintln!("warning: {}:{line}: {reason}", events.display());
    }
    let table = SlantTable::from_path(&run.input("slant_table")?)?;
    let (resolver, resolver_skipped) = load_resolver(run)?;
    let window = match run.cfg.opt::<i64>("max_age_days")? {
        Some(days) => parsed
            .records
            .iter()
            .map(|r| r.timestamp)
            .max()
            .map(|reference| AgeWindow {
                reference,
                window_secs: days * 86_400,
            }),
        None => None,
    };
    let (tweets, urls) = ingest::process_urls(&parsed.records, &resolver, &table, window)?;
    let authors: BTreeSet<AccountId> = parsed.records.iter().map(|r| r.author_id).collect();

    let cache = run.cfg.opt_path("graph_cache");
    let (graph, edges, from_cache) = match cache {
        Some(p) if p.exists() => {
            run.digest("graph_cache", &p)?;
            let f = fs::File::open(&p).with_context(|| format!("cannot read {}", p.display()))?;
            (FollowerGraph::read_cache(BufReader::new(f))?, None, true)
        }
        _ => {
            let path = run.input("edges")?;
            let (g, stats) = ingest::load_edges_path(&path, authors.iter().copied())?;
            if let Some(p) = cache {
                let f = fs::File::create(&p)
                    .with_context(|| format!("cannot write {}", p.display()))?;
                g.write_cache(std::io::BufWriter::new(f))?;
            }
            (g, Some(stats), false)
        }
    };
    let unknown_authors = tweets
        .iter()
        .filter(|t| graph.index_of(t.author_id).is_none())
        .count();
    if unknown_authors > 0 {
        eprintln!("warning: {unknown_authors} news tweets by accounts missing from the graph");
    }
    let report = IngestReport {
        events: parsed.stats,
        warnings: parsed.warnings,
        window: window.map(|w| (w.reference, w.window_secs)),
        resolver_entries: resolver.len(),
        resolver_skipped,
        urls,
        news_tweets: tweets.len(),
        edges,
        graph_from_cache: from_cache,
        nodes: graph.node_count(),
        graph_edges: graph.edge_count(),
        unknown_authors,
    };
    Ok(Corpus {
        graph,
        tweets,
        authors,
        report,
    })
}

fn ingest_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    run.write_with("news_tweets.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for t in &corpus.tweets {
            w.serialize(t)?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.write_json("ingest.json", &corpus.report)
}

/// Redirect lookups through the system `curl`, one hop per call.
struct CurlClient {
    timeout: u64,
}

impl ingest::RedirectClient for CurlClient {
    fn next_hop(&self, url: &str) -> std::result::Result<Option<String>, String> {
        let out = Command::new("curl")
            .args(["-s", "-o", "/dev/null", "--max-time"])
            .arg(self.timeout.to_string())
            .args(["-w", "%{http_code} %{redirect_url}", url])
            .output()
            .map_err(|e| format!("cannot run curl: {e}"))?;
        if !out.status.success() {
            return Err(format!("curl exited with {}", out.status));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let (code, target) = text.trim().split_once(' ').unwrap_or((text.trim(), ""));
        match code.parse::<u16>() {
            Ok(300..=399) if !target.is_empty() => Ok(Some(target.to_string())),
            Ok(_) => Ok(None),
            Err(_) => Err(format!("unexpected curl output {text:?}")),
        }
    }
}

fn resolve_cmd(run: &mut Run) -> Result<()> {
    let parsed = ingest::parse_events_path(&run.input("events")?)?;
    let mut cache = match run.opt_input("resolver")? {
        Some(p) => ResolverCache::from_path(&p, MissPolicy::Passthrough)?.0,
        None => ResolverCache::new(MissPolicy::Passthrough),
    };
    let client = CurlClient {
        timeout: run.cfg.u64("http_timeout")?,
    };
    let stats = ingest::populate_cache(
        &mut cache,
        &parsed.records,
        &client,
        run.cfg.usize("max_hops")?,
    );
    let mut text = String::new();
    for (s, t) in cache.entries() {
        text.push_str(&format!("{s}\t{t}\n"));
    }
    run.write("resolver.tsv", text)?;
    run.write_json("resolve.json", &stats)
}

const SUMMARY_VARS: [&str; 12] = [
    "out_mean",
    "out_sd",
    "out_count",
    "out_quality_mean",
    "in_mean",
    "in_sd",
    "in_count",
    "in_quality_mean",
    "outdegree",
    "indegree",
    "clustering_coefficient",
    "retweet_count",
];

fn summary_var(r: &AccountSummary, name: &str) -> Option<f64> {
    match name {
        "out_mean" => r.out_mean,
        "out_sd" => Some(r.out_sd),
        "out_count" => Some(r.out_count as f64),
        "out_quality_mean" => r.out_quality_mean,
        "in_mean" => r.in_mean,
        "in_sd" => Some(r.in_sd),
        "in_count" => Some(r.in_count as f64),
        "in_quality_mean" => r.in_quality_mean,
        "outdegree" => Some(r.outdegree as f64),
        "indegree" => Some(r.indegree as f64),
        "clustering_coefficient" => Some(r.clustering_coefficient),
        "retweet_count" => Some(r.retweet_count as f64),
        _ => None,
    }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Serialize)]
struct Connectivity {
    s: f64,
    t: f64,
    outdegree_threshold: f64,
    news_threshold: f64,
    core_accounts: usize,
    periphery_accounts: usize,
    shares: ShareReport,
}

fn summarize_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let g = &corpus.graph;
    let table = slantstats::account_summaries(g, &corpus.tweets);
    let rows: Vec<AccountSummary> = table
        .rows
        .iter()
        .filter(|r| corpus.authors.contains(&r.account_id))
        .cloned()
        .collect();
    run.write_with("summaries.csv", |b| {
        slantstats::write_summaries_csv(&rows, b)
    })?;

    let both: Vec<&AccountSummary> = table.with_both().collect();
    let mut desc = vec![vec!["variable", "n", "mean", "sd", "min", "max"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()];
    for var in SUMMARY_VARS {
        let xs: Vec<f64> = both.iter().filter_map(|r| summary_var(r, var)).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        desc.push(match xs.is_empty() {
            true => vec![
                var.to_string(),
                "0".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ],
            false => vec![
                var.to_string(),
                xs.len().to_string(),
                mean.to_string(),
                sd.to_string(),
                min.to_string(),
                max.to_string(),
            ],
        });
    }
    run.write("descriptives.csv", csv_bytes(desc)?)?;

    let mut corr = vec![std::iter::once("variable".to_string())
        .chain(SUMMARY_VARS.iter().map(|s| s.to_string()))
        .collect::<Vec<_>>()];
    for a in SUMMARY_VARS {
        let mut row = vec![a.to_string()];
        for b in SUMMARY_VARS {
            let pairs: Vec<(f64, f64)> = both
                .iter()
                .filter_map(|r| summary_var(r, a).zip(summary_var(r, b)))
                .collect();
            row.push(opt_num(pearson(&pairs)));
        }
        corr.push(row);
    }
    run.write("correlations.csv", csv_bytes(corr)?)?;

    let newscounts: Vec<u64> = table.rows.iter().map(|r| r.out_count).collect();
    let spec = graph::core_members(
        g,
        &newscounts,
        run.cfg.f64("core_s")?,
        run.cfg.f64("core_t")?,
    )?;
    let shares = graph::connectivity_shares(g, &spec.members, &newscounts)?;
    run.write_json(
        "connectivity.json",
        &Connectivity {
            s: spec.s,
            t: spec.t,
            outdegree_threshold: spec.outdegree_threshold,
            news_threshold: spec.news_threshold,
            core_accounts: spec.members.len(),
            periphery_accounts: g.node_count() - spec.members.len(),
            shares,
        },
    )
}

fn crosstab_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let table = slantstats::account_summaries(&corpus.graph, &corpus.tweets);
    let ct = slantstats::crosstab(
        &table.rows,
        run.cfg.f64("bin_width")?,
        run.cfg.f64("bin_lo")?,
        run.cfg.f64("bin_hi")?,
    )?;
    let mut rows = vec![std::iter::once("out\\in".to_string())
        .chain((0..ct.bins()).map(|k| ct.bin_label(k)))
        .collect::<Vec<_>>()];
    for o in 0..ct.bins() {
        rows.push(
            std::iter::once(ct.bin_label(o))
                .chain(ct.counts[o].iter().map(|c| c.to_string()))
                .collect(),
        );
    }
    run.write("crosstab.csv", csv_bytes(rows)?)?;
    run.write_json("crosstab.json", &ct)
}

fn regress_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let table = slantstats::account_summaries(&corpus.graph, &corpus.tweets);
    let kind: ModelKind = run.cfg.parse("model")?;
    let fit = regression::fit_model(&table.rows, &ModelSpec::of(kind))?;
    let mut rows = vec![vec![
        "term".to_string(),
        "coef".into(),
        "se".into(),
        "t".into(),
    ]];
    for ((c, b), se) in fit.columns.iter().zip(&fit.coef).zip(&fit.se) {
        rows.push(vec![
            c.clone(),
            b.to_string(),
            se.to_string(),
            (b / se).to_string(),
        ]);
    }
    run.write("regress.csv", csv_bytes(rows)?)?;
    run.write_json("regress.json", &fit)
}

fn sweep_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let out = slantstats::outgoing_moments(&corpus.graph, &corpus.tweets);
    let s_grid: Vec<f64> = run.cfg.list("s_grid")?;
    let t_grid: Vec<f64> = run.cfg.list("t_grid")?;
    let mode: SweepMode = run.cfg.parse("mode")?;
    let grid = regression::core_sweep(&corpus.graph, &out.moments, &s_grid, &t_grid, mode)?;
    let header = || {
        std::iter::once("s\\t".to_string())
            .chain(t_grid.iter().map(|t| format!("{t:.2}")))
            .collect::<Vec<_>>()
    };
    let mut slopes = vec![header()];
    let mut counts = vec![header()];
    for (si, s) in s_grid.iter().enumerate() {
        let mut srow = vec![format!("{s:.2}")];
        let mut crow = vec![format!("{s:.2}")];
        for ti in 0..t_grid.len() {
            let c = grid.cell(si, ti);
            srow.push(match c.slope {
                Some(b) if !c.insufficient => {
                    format!("{b:.3}{}", if c.excludes_one { "*" } else { "" })
                }
                _ => "NA".into(),
            });
            crow.push(c.members.to_string());
        }
        slopes.push(srow);
        counts.push(crow);
    }
    run.write("sweep.csv", csv_bytes(slopes)?)?;
    run.write("sweep_counts.csv", csv_bytes(counts)?)?;
    let mut long = vec![[
        "s",
        "t",
        "members",
        "n",
        "slope",
        "se",
        "ci_lo",
        "ci_hi",
        "excludes_one",
        "insufficient",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for c in &grid.cells {
        long.push(vec![
            c.s.to_string(),
            c.t.to_string(),
            c.members.to_string(),
            c.n.to_string(),
            opt_num(c.slope),
            opt_num(c.se),
            opt_num(c.ci_lo),
            opt_num(c.ci_hi),
            c.excludes_one.to_string(),
            c.insufficient.to_string(),
        ]);
    }
    run.write("sweep_cells.csv", csv_bytes(long)?)
}

/// Accounts to order, restricted to those with both an outgoing and an
/// incoming mean so every ordering covers the same nodes.
fn select_subgraph(
    run: &Run,
    corpus: &Corpus,
    rows: &[AccountSummary],
) -> Result<(FollowerGraph, String)> {
    let g = &corpus.graph;
    let newscounts: Vec<u64> = rows.iter().map(|r| r.out_count).collect();
    let which = run.cfg.str("subgraph")?;
    let members: Vec<usize> = match which {
        "core" => {
            graph::core_members(
                g,
                &newscounts,
                run.cfg.f64("core_s")?,
                run.cfg.f64("core_t")?,
            )?
            .members
        }
        "moderate" => graph::moderate_subgraph(g, &newscounts)?.members,
        "all" => (0..g.node_count()).collect(),
        other => bail!("subgraph must be core, moderate or all, got {other:?}"),
    };
    let kept: Vec<usize> = members
        .into_iter()
        .filter(|&v| rows[v].has_both())
        .collect();
    if kept.len() < 2 {
        bail!(
            "{which} subgraph has {} accounts with both slant means; nothing to order",
            kept.len()
        );
    }
    Ok((g.induced_subgraph(&kept), which.to_string()))
}

fn eigen_options(run: &Run) -> Result<EigenOptions> {
    Ok(EigenOptions {
        k: run.cfg.usize("eigen_k")?,
        tol: run.cfg.f64("eigen_tol")?,
        seed: run.cfg.u64("seed")?,
        ..EigenOptions::default()
    })
}

enum Built {
    Plain(Permutation),
    Spectral(Permutation, community::SpectralResult),
    Cnm(Permutation, community::Dendrogram),
}

impl Built {
    fn perm(&self) -> &Permutation {
        match self {
            Built::Plain(p) | Built::Spectral(p, _) | Built::Cnm(p, _) => p,
        }
    }
}

fn build_perm(
    run: &Run,
    name: &str,
    sub: &FollowerGraph,
    rows: &[AccountSummary],
) -> Result<Built> {
    Ok(match name {
        "out" | "in" => Built::Plain(permscore::slant_permutation(
            sub,
            rows,
            name.parse::<SlantKey>()?,
        )?),
        "spectral" => {
            let (perms, mut res) = community::spectral_orderings(sub, &eigen_options(run)?)?;
            if let Some(w) = &res.warning {
                eprintln!("warning: {w}");
            }
            let (i, p) = community::best_spectral_permutation(sub, &perms)?;
            res.chosen = Some(i);
            Built::Spectral(p, res)
        }
        "cnm" => {
            let (p, d) = community::cnm_ordering(sub)?;
            Built::Cnm(p, d)
        }
        "random" => Built::Plain(permscore::random_permutation(
            sub.node_count(),
            run.cfg.u64("seed")?,
        )),
        other => bail!("unknown ordering {other:?}; expected out, in, spectral, cnm or random"),
    })
}

fn critical_config(run: &Run) -> Result<Option<CriticalConfig>> {
    if !run.cfg.bool("critical")? {
        return Ok(None);
    }
    Ok(Some(CriticalConfig {
        frac: run.cfg.f64("critical_frac")?,
        reps: run.cfg.usize("critical_reps")?,
        q: run.cfg.f64("critical_q")?,
        seed: run.cfg.u64("seed")?,
    }))
}

fn permscore_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let rows = slantstats::account_summaries(&corpus.graph, &corpus.tweets).rows;
    let (sub, _) = select_subgraph(run, &corpus, &rows)?;
    let built = build_perm(run, run.cfg.str("perm")?, &sub, &rows)?;
    let crit = critical_config(run)?;
    let score = permscore::score(&sub, built.perm(), crit.as_ref())?;
    run.write_json("permscore.json", &score)
}

fn order_csv(sub: &FollowerGraph, perm: &Permutation) -> Result<Vec<u8>> {
    let order = perm.order();
    let rows = std::iter::once(vec!["rank".to_string(), "account_id".to_string()]).chain(
        order
            .iter()
            .enumerate()
            .map(|(k, &v)| vec![(k + 1).to_string(), sub.id(v).to_string()]),
    );
    csv_bytes(rows)
}

fn order_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let rows = slantstats::account_summaries(&corpus.graph, &corpus.tweets).rows;
    let (sub, _) = select_subgraph(run, &corpus, &rows)?;
    let method = run.cfg.str("method")?;
    if !matches!(method, "spectral" | "cnm") {
        bail!("method must be spectral or cnm, got {method:?}");
    }
    let built = build_perm(run, method, &sub, &rows)?;
    run.write("order.csv", order_csv(&sub, built.perm())?)?;
    match built {
        Built::Spectral(_, res) => run.write_json("spectral.json", &res),
        Built::Cnm(_, d) => {
            run.write_with("dendrogram.csv", |b| d.write_csv(b))?;
            run.write_json(
                "cnm.json",
                &serde_json::json!({
                    "n": d.n,
                    "initial_q": d.initial_q,
                    "best_q": d.best_q,
                    "best_step": d.best_step,
                    "merges": d.merges.len(),
                    "degenerate": d.degenerate,
                }),
            )
        }
        Built::Plain(_) => unreachable!("method checked above"),
    }
}

fn compare_cmd(run: &mut Run) -> Result<()> {
    let corpus = load_corpus(run)?;
    let rows = slantstats::account_summaries(&corpus.graph, &corpus.tweets).rows;
    let (sub, which) = select_subgraph(run, &corpus, &rows)?;
    let names: Vec<String> = run.cfg.list("perms")?;
    let perms = names
        .iter()
        .map(|n| build_perm(run, n, &sub, &rows).map(|b| b.perm().clone()))
        .collect::<Result<Vec<_>>>()?;
    let crit = critical_config(run)?;
    let table = community::compare_orderings(&sub, &perms, crit.as_ref())?;
    let mut out = vec![["perm", "loglik", "critical_value", "worse_than"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for r in &table {
        out.push(vec![
            r.perm.clone(),
            r.loglik.to_string(),
            opt_num(r.critical_value),
            r.worse_than.join(";"),
        ]);
    }
    run.write("compare.csv", csv_bytes(out)?)?;
    run.write_json(
        "compare.json",
        &serde_json::json!({
            "subgraph": which,
            "n": sub.node_count(),
            "edges": sub.edge_count(),
            "rows": table,
        }),
    )
}

struct AffinityRun {
    raw: affinity::AffinityMatrix,
    pruned: affinity::PrunedGraph,
    clustering: affinity::Clustering,
    scores: Vec<affinity::SlantScore>,
    load: affinity::LoadReport,
}

fn affinity_pipeline(run: &mut Run) -> Result<AffinityRun> {
    let dir = run.input("followers_dir")?;
    let opts = LoadOptions {
        min_followers: run.cfg.usize("min_followers")?,
        bot_threshold: run.cfg.opt("bot_threshold")?,
    };
    let (sets, load): (FollowerSets, _) = FollowerSets::from_dir(&dir, &opts)?;
    if sets.is_empty() {
        bail!(
            "no outlet in {} has at least {} followers",
            dir.display(),
            opts.min_followers
        );
    }
    let anchors = affinity::read_anchors(fs::File::open(run.input("anchors")?)?)?;
    let raw = affinity::affinity_matrix(&sets)?;
    let scaled = affinity::scale_affinity(&raw)?;
    let pruned = affinity::prune(
        &scaled,
        run.cfg.f64("w_min")?,
        run.cfg.usize("deg_min")?,
        run.cfg.bool("iterate_prune")?,
    );
    let spin = SpinGlassOptions {
        gamma: run.cfg.f64("gamma")?,
        max_spins: run.cfg.usize("max_spins")?,
        sweeps_per_node: run.cfg.usize("sweeps_per_node")?,
        ..SpinGlassOptions::default()
    };
    let seeds: Vec<u64> = run.cfg.list("spin_seeds")?;
    run.seeds.extend(&seeds);
    let clustering = affinity::detect_clusters_multi(&pruned, &spin, &seeds)?;
    let labels = affinity::label_clusters(&sets.outlets, &pruned, &clustering, &anchors)?;
    let scores = affinity::slant_scores(&raw, &labels)?;
    Ok(AffinityRun {
        raw,
        pruned,
        clustering,
        scores,
        load,
    })
}

fn affinity_cmd(run: &mut Run) -> Result<()> {
    let a = affinity_pipeline(run)?;
    run.write_with("affinity.csv", |b| a.raw.write_csv(b))?;
    run.write_with("slants.csv", |b| affinity::write_slants_csv(&a.scores, b))?;
    let mut community = vec![String::new(); a.raw.n()];
    for (k, &i) in a.pruned.kept.iter().enumerate() {
        community[i] = a.clustering.labels[k].to_string();
    }
    let rows = std::iter::once(vec![
        "outlet".to_string(),
        "followers".into(),
        "community".into(),
        "label".into(),
    ])
    .chain(a.scores.iter().enumerate().map(|(i, s)| {
        vec![
            s.outlet.clone(),
            s.followers.to_string(),
            community[i].clone(),
            s.cluster.to_string(),
        ]
    }));
    run.write("clusters.csv", csv_bytes(rows)?)?;
    let pruned: Vec<&str> = a
        .pruned
        .pruned
        .iter()
        .map(|&i| a.raw.outlets[i].as_str())
        .collect();
    run.write_json(
        "affinity.json",
        &serde_json::json!({
            "outlets": a.raw.n(),
            "excluded": a.load.excluded,
            "bot_filtered": a.load.bot_filtered,
            "malformed_lines": a.load.malformed_lines,
            "pruned": pruned,
            "graph_edges": a.pruned.edge_count(),
            "communities": a.clustering.communities,
            "energy": a.clustering.energy,
            "seed": a.clustering.seed,
            "trivial": a.clustering.trivial,
        }),
    )
}

fn logit_cmd(run: &mut Run) -> Result<()> {
    let visits = slantstats::read_visits_path(&run.input("visits")?)?;
    let n_sites = match run.cfg.opt::<usize>("n_sites")? {
        Some(n) => n,
        None => visits.iter().map(|v| v.site_id + 1).max().unwrap_or(0),
    };
    let fit = slantstats::fit_slant_logit(
        &visits,
        n_sites,
        LogitOptions {
            ridge: run.cfg.f64("ridge")?,
            max_iter: run.cfg.usize("max_iter")?,
            ..LogitOptions::default()
        },
    )?;
    let rows = std::iter::once(
        ["site", "alpha", "se_alpha", "gamma", "se_gamma"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
    )
    .chain((0..n_sites).map(|j| {
        vec![
            j.to_string(),
            fit.alpha[j].to_string(),
            fit.se_alpha[j].to_string(),
            fit.gamma[j].to_string(),
            fit.se_gamma[j].to_string(),
        ]
    }));
    run.write("logit.csv", csv_bytes(rows)?)?;
    run.write_json("logit.json", &fit)
}

fn plot_cmd(run: &mut Run) -> Result<()> {
    match run.cfg.str("kind")? {
        "perm" => {
            let corpus = load_corpus(run)?;
            let rows = slantstats::account_summaries(&corpus.graph, &corpus.tweets).rows;
            let (sub, which) = select_subgraph(run, &corpus, &rows)?;
            let built = build_perm(run, run.cfg.str("perm")?, &sub, &rows)?;
            let perm = built.perm();
            let pts = permscore::permuted_matrix_figure(&sub, perm);
            let title = format!("{which} adjacency permuted by {}", perm.provenance);
            run.write("plot.svg", svg::matrix(&title, sub.node_count(), &pts))?;
            run.write("plot_order.csv", order_csv(&sub, perm)?)
        }
        "slant" => {
            let a = affinity_pipeline(run)?;
            let pts: Vec<svg::Point> = affinity::slant_figure(&a.scores)
                .into_iter()
                .map(|(x, y, c)| svg::Point {
                    x,
                    y,
                    class: match c {
                        affinity::OutletLabel::Liberal => "liberal",
                        affinity::OutletLabel::Conservative => "conservative",
                        affinity::OutletLabel::Mainstream => "mainstream",
                        affinity::OutletLabel::Pruned => "pruned",
                    },
                })
                .collect();
            run.write(
                "plot.svg",
                svg::scatter("outlet slant", "ln followers", "slant score", &pts),
            )?;
            run.write_with("slants.csv", |b| affinity::write_slants_csv(&a.scores, b))
        }
        other => bail!("kind must be perm or slant, got {other:?}"),
    }
}

fn triple(run: &Run, key: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = run.cfg.list(key)?;
    v.try_into()
        .map_err(|v: Vec<usize>| anyhow!("{key} needs 3 values, got {}", v.len()))
}

fn synth_cmd(run: &mut Run) -> Result<()> {
    let c = run.cfg;
    let seed = c.u64("seed")?;
    let cfg = SynthConfig {
        n_accounts: c.usize("n_accounts")?,
        core_fraction: c.f64("core_fraction")?,
        homophily: c.f64("homophily")?,
        mean_followees: c.f64("mean_followees")?,
        core_boost: c.f64("core_boost")?,
        core_amplify: c.f64("core_amplify")?,
        periphery_shrink: c.f64("periphery_shrink")?,
        core_tweet_rate: c.f64("core_tweet_rate")?,
        periphery_tweet_rate: c.f64("periphery_tweet_rate")?,
        shortened_fraction: c.f64("shortened_fraction")?,
        retweet_fraction: c.f64("retweet_fraction")?,
        seed,
        ..SynthConfig::default()
    };
    let aud = AudienceConfig {
        outlets: triple(run, "audience_outlets")?,
        pool: triple(run, "audience_pool")?,
        seed,
        ..AudienceConfig::default()
    };
    let summary = synth::write_corpus(&run.out, &cfg, &aud, c.usize("n_visits")?)?;
    for f in [
        "events.jsonl",
        "edges.tsv",
        "slant_table.csv",
        "resolver.tsv",
        "truth.csv",
        "anchors.csv",
        "audience_truth.csv",
        "visits.csv",
        "followers/",
    ] {
        run.outputs.push(f.to_string());
    }
    run.write_json("synth.json", &summary)
}
