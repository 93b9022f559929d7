//! Command-line front end: argument parsing, configuration resolution and a
//! bounded thread pool around the subcommands in [`commands`].

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::Config;
use manifest::RunManifest;

pub const SUBCOMMANDS: &[&str] = &[
    "ingest",
    "resolve",
    "summarize",
    "crosstab",
    "regress",
    "sweep",
    "permscore",
    "order",
    "compare",
    "affinity",
    "logit",
    "plot",
    "synth",
];

#[derive(Parser, Debug)]
#[command(
    name = "diversigraph",
    version,
    about = "Slant and structure of follower networks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// key = value settings file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<String>,
    #[arg(long = "graph-cache", global = true, value_name = "FILE")]
    graph_cache: Option<String>,
    /// Set any config key, e.g. --set critical_reps=200. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

type Pairs = Vec<(&'static str, Option<String>)>;

macro_rules! pairs {
    ($s:expr; $($field:ident => $key:literal),* $(,)?) => {
        vec![$(($key, $s.$field.clone())),*]
    };
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    #[arg(long)]
    events: Option<String>,
    #[arg(long)]
    edges: Option<String>,
    #[arg(long = "slant-table")]
    slant_table: Option<String>,
    #[arg(long)]
    resolver: Option<String>,
    /// fail | drop | passthrough
    #[arg(long = "miss-policy")]
    miss_policy: Option<String>,
    #[arg(long = "max-age-days")]
    max_age_days: Option<String>,
}

impl Inputs {
    fn pairs(&self) -> Pairs {
        pairs!(self; events => "events", edges => "edges", slant_table => "slant_table",
            resolver => "resolver", miss_policy => "miss_policy", max_age_days => "max_age_days")
    }
}

#[derive(Args, Debug, Clone)]
struct Sub {
    /// core | moderate | all
    #[arg(long)]
    subgraph: Option<String>,
    #[arg(long = "core-s")]
    core_s: Option<String>,
    #[arg(long = "core-t")]
    core_t: Option<String>,
    #[arg(long = "eigen-k")]
    eigen_k: Option<String>,
}

impl Sub {
    fn pairs(&self) -> Pairs {
        pairs!(self; subgraph => "subgraph", core_s => "core_s", core_t => "core_t", eigen_k => "eigen_k")
    }
}

#[derive(Args, Debug, Clone)]
struct Critical {
    /// Bootstrap settings, e.g. --critical reps=1000 frac=0.05 q=0.95
    #[arg(long, num_args = 1.., value_name = "K=V")]
    critical: Vec<String>,
    /// Skip the bootstrap critical value.
    #[arg(long = "no-critical")]
    no_critical: bool,
}

impl Critical {
    fn pairs(&self) -> Result<Pairs> {
        let mut out: Pairs = vec![];
        if self.no_critical {
            out.push(("critical", Some("false".into())));
        }
        for kv in &self.critical {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--critical expects k=v, got {kv:?}"))?;
            let key = match k.trim() {
                "reps" => "critical_reps",
                "frac" => "critical_frac",
                "q" => "critical_q",
                other => bail!("--critical takes reps, frac or q, got {other:?}"),
            };
            out.push((key, Some(v.trim().to_string())));
        }
        Ok(out)
    }
}

#[derive(Args, Debug, Clone)]
struct Aff {
    #[arg(long = "followers-dir")]
    followers_dir: Option<String>,
    #[arg(long)]
    anchors: Option<String>,
    #[arg(long = "min-followers")]
    min_followers: Option<String>,
    #[arg(long = "bot-threshold")]
    bot_threshold: Option<String>,
    #[arg(long = "w-min")]
    w_min: Option<String>,
    #[arg(long = "deg-min")]
    deg_min: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "spin-seeds")]
    spin_seeds: Option<String>,
}

impl Aff {
    fn pairs(&self) -> Pairs {
        pairs!(self; followers_dir => "followers_dir", anchors => "anchors",
            min_followers => "min_followers", bot_threshold => "bot_threshold", w_min => "w_min",
            deg_min => "deg_min", gamma => "gamma", spin_seeds => "spin_seeds")
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Match event URLs to the slant table; write news tweets and counters.
    Ingest {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Fill the redirect cache for uncached shortener URLs (needs curl).
    Resolve {
        #[arg(long)]
        events: Option<String>,
        #[arg(long)]
        resolver: Option<String>,
        #[arg(long = "max-hops")]
        max_hops: Option<String>,
    },
    /// Per-account slant summaries, descriptives, correlations and shares.
    Summarize {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long = "core-s")]
        core_s: Option<String>,
        #[arg(long = "core-t")]
        core_t: Option<String>,
    },
    /// Accounts by binned outgoing and incoming mean slant.
    Crosstab {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long = "bin-width")]
        bin_width: Option<String>,
        #[arg(long = "bin-lo", allow_hyphen_values = true)]
        bin_lo: Option<String>,
        #[arg(long = "bin-hi", allow_hyphen_values = true)]
        bin_hi: Option<String>,
    },
    /// Outgoing on incoming slant, models I to IV and A1.
    Regress {
        #[command(flatten)]
        inputs: Inputs,
        /// I | II | III | IV | A1
        #[arg(long)]
        model: Option<String>,
    },
    /// Slope of outgoing on incoming slant over a grid of core definitions.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        /// Outdegree quantiles, comma separated.
        #[arg(long = "s")]
        s_grid: Option<String>,
        /// News-count quantiles, comma separated.
        #[arg(long = "t")]
        t_grid: Option<String>,
        /// within | all | periphery
        #[arg(long)]
        mode: Option<String>,
    },
    /// Log-likelihood and critical value of one ordering.
    Permscore {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        sub: Sub,
        /// out | in | spectral | cnm | random
        #[arg(long)]
        perm: Option<String>,
        #[command(flatten)]
        critical: Critical,
    },
    /// Structural ordering of a subgraph.
    Order {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        sub: Sub,
        /// spectral | cnm
        #[arg(long)]
        method: Option<String>,
    },
    /// Score several orderings against each other's critical values.
    Compare {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        sub: Sub,
        /// Comma-separated orderings.
        #[arg(long)]
        perms: Option<String>,
        #[command(flatten)]
        critical: Critical,
    },
    /// Outlet slant from co-following.
    Affinity {
        #[command(flatten)]
        aff: Aff,
    },
    /// Fit the visit logit for outlet quality and slant.
    Logit {
        #[arg(long)]
        visits: Option<String>,
        #[arg(long = "n-sites")]
        n_sites: Option<String>,
        #[arg(long)]
        ridge: Option<String>,
    },
    /// SVG figures: permuted adjacency or outlet slant scatter.
    Plot {
        /// perm | slant
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        sub: Sub,
        #[arg(long)]
        perm: Option<String>,
        #[command(flatten)]
        aff: Aff,
    },
    /// Write a seeded synthetic corpus with planted ground truth.
    Synth {
        #[arg(long = "n-accounts")]
        n_accounts: Option<String>,
        #[arg(long = "core-amplify")]
        core_amplify: Option<String>,
        #[arg(long = "periphery-shrink")]
        periphery_shrink: Option<String>,
        #[arg(long = "n-visits")]
        n_visits: Option<String>,
    },
    /// Rerun the subcommand recorded in a manifest with the same settings.
    Replay { manifest: PathBuf },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Ingest { .. } => "ingest",
            Cmd::Resolve { .. } => "resolve",
            Cmd::Summarize { .. } => "summarize",
            Cmd::Crosstab { .. } => "crosstab",
            Cmd::Regress { .. } => "regress",
            Cmd::Sweep { .. } => "sweep",
            Cmd::Permscore { .. } => "permscore",
            Cmd::Order { .. } => "order",
            Cmd::Compare { .. } => "compare",
            Cmd::Affinity { .. } => "affinity",
            Cmd::Logit { .. } => "logit",
            Cmd::Plot { .. } => "plot",
            Cmd::Synth { .. } => "synth",
            Cmd::Replay { .. } => "replay",
        }
    }

    fn pairs(&self) -> Result<Pairs> {
        Ok(match self {
            Cmd::Ingest { inputs } => inputs.pairs(),
            Cmd::Resolve {
                events,
                resolver,
                max_hops,
            } => vec![
                ("events", events.clone()),
                ("resolver", resolver.clone()),
                ("max_hops", max_hops.clone()),
            ],
            Cmd::Summarize {
                inputs,
                core_s,
                core_t,
            } => {
                let mut p = inputs.pairs();
                p.extend([("core_s", core_s.clone()), ("core_t", core_t.clone())]);
                p
            }
            Cmd::Crosstab {
                inputs,
                bin_width,
                bin_lo,
                bin_hi,
            } => {
                let mut p = inputs.pairs();
                p.extend([
                    ("bin_width", bin_width.clone()),
                    ("bin_lo", bin_lo.clone()),
                    ("bin_hi", bin_hi.clone()),
                ]);
                p
            }
            Cmd::Regress { inputs, model } => {
                let mut p = inputs.pairs();
                p.push(("model", model.clone()));
                p
            }
            Cmd::Sweep {
                inputs,
                s_grid,
                t_grid,
                mode,
            } => {
                let mut p = inputs.pairs();
                p.extend([
                    ("s_grid", s_grid.clone()),
                    ("t_grid", t_grid.clone()),
                    ("mode", mode.clone()),
                ]);
                p
            }
            Cmd::Permscore {
                inputs,
                sub,
                perm,
                critical,
            } => {
                let mut p = inputs.pairs();
                p.extend(sub.pairs());
                p.push(("perm", perm.clone()));
                p.extend(critical.pairs()?);
                p
            }
            Cmd::Order {
                inputs,
                sub,
                method,
            } => {
                let mut p = inputs.pairs();
                p.extend(sub.pairs());
                p.push(("method", method.clone()));
                p
            }
            Cmd::Compare {
                inputs,
                sub,
                perms,
                critical,
            } => {
                let mut p = inputs.pairs();
                p.extend(sub.pairs());
                p.push(("perms", perms.clone()));
                p.extend(critical.pairs()?);
                p
            }
            Cmd::Affinity { aff } => aff.pairs(),
            Cmd::Logit {
                visits,
                n_sites,
                ridge,
            } => vec![
                ("visits", visits.clone()),
                ("n_sites", n_sites.clone()),
                ("ridge", ridge.clone()),
            ],
            Cmd::Plot {
                kind,
                inputs,
                sub,
                perm,
                aff,
            } => {
                let mut p = vec![("kind", kind.clone()), ("perm", perm.clone())];
                p.extend(inputs.pairs());
                p.extend(sub.pairs());
                p.extend(aff.pairs());
                p
            }
            Cmd::Synth {
                n_accounts,
                core_amplify,
                periphery_shrink,
                n_visits,
            } => vec![
                ("n_accounts", n_accounts.clone()),
                ("core_amplify", core_amplify.clone()),
                ("periphery_shrink", periphery_shrink.clone()),
                ("n_visits", n_visits.clone()),
            ],
            Cmd::Replay { .. } => vec![],
        })
    }
}

fn apply_global(cfg: &mut Config, g: &Global) -> Result<()> {
    for (k, v) in [
        ("out", &g.out),
        ("seed", &g.seed),
        ("threads", &g.threads),
        ("graph_cache", &g.graph_cache),
    ] {
        if let Some(v) = v {
            cfg.set(k, v)
                .with_context(|| format!("--{}", k.replace('_', "-")))?;
        }
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)
            .with_context(|| format!("--set {kv}"))?;
    }
    Ok(())
}

/// Settings for a fresh run: defaults, then `--config`, then flags.
fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::defaults();
    if let Some(path) = &cli.global.config {
        cfg.apply_file(path)?;
    }
    for (k, v) in cli.cmd.pairs()? {
        if let Some(v) = v {
            cfg.set(k, &v)
                .with_context(|| format!("--{}", k.replace('_', "-")))?;
        }
    }
    apply_global(&mut cfg, &cli.global)?;
    Ok(cfg)
}

/// Settings recorded in a manifest; only `--out`, `--threads` and `--set`
/// may change them.
fn replay_config(path: &Path, g: &Global) -> Result<(String, Config)> {
    let m = RunManifest::read(path)?;
    let changed = m.changed_inputs()?;
    if !changed.is_empty() {
        bail!(
            "inputs changed since the recorded run: {}",
            changed.join(", ")
        );
    }
    let mut cfg = Config::defaults();
    for (k, v) in &m.config {
        cfg.set(k, v).with_context(|| format!("manifest key {k}"))?;
    }
    apply_global(&mut cfg, g)?;
    Ok((m.subcommand, cfg))
}

fn in_pool(threads: usize, f: impl FnOnce() -> Result<RunManifest> + Send) -> Result<RunManifest> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    pool.install(f)
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, T>(args: I) -> Result<RunManifest>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::parse_from(args);
    let (cmd, cfg) = match &cli.cmd {
        Cmd::Replay { manifest } => replay_config(manifest, &cli.global)?,
        other => (other.name().to_string(), resolve_config(&cli)?),
    };
    let threads = cfg.usize("threads")?;
    in_pool(threads, || commands::execute(&cmd, &cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("diversigraph").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        std::fs::write(&conf, "model = II\nevents = ev.jsonl\nseed = 5\n").unwrap();
        let c = cli(&[
            "regress",
            "--config",
            conf.to_str().unwrap(),
            "--model",
            "IV",
            "--seed",
            "9",
        ]);
        let cfg = resolve_config(&c).unwrap();
        assert_eq!(cfg.str("model").unwrap(), "IV");
        assert_eq!(cfg.u64("seed").unwrap(), 9);
        assert_eq!(cfg.path("events").unwrap(), dir.path().join("ev.jsonl"));
    }

    #[test]
    fn critical_pairs() {
        let c = cli(&[
            "permscore",
            "--critical",
            "reps=10",
            "frac=0.1",
            "q=0.9",
            "--perm",
            "in",
        ]);
        let cfg = resolve_config(&c).unwrap();
        assert_eq!(cfg.usize("critical_reps").unwrap(), 10);
        assert_eq!(cfg.f64("critical_frac").unwrap(), 0.1);
        assert_eq!(cfg.f64("critical_q").unwrap(), 0.9);
        assert!(resolve_config(&cli(&["permscore", "--critical", "depth=3"])).is_err());
        let off = resolve_config(&cli(&["compare", "--no-critical"])).unwrap();
        assert!(!off.bool("critical").unwrap());
    }

    #[test]
    fn negative_bins_and_set() {
        let c = cli(&["crosstab", "--bin-lo", "-2", "--set", "bin_hi=2"]);
        let cfg = resolve_config(&c).unwrap();
        assert_eq!(cfg.f64("bin_lo").unwrap(), -2.0);
        assert_eq!(cfg.f64("bin_hi").unwrap(), 2.0);
        assert!(resolve_config(&cli(&["crosstab", "--set", "bin_top=2"])).is_err());
    }

    #[test]
    fn sweep_grid_flags() {
        let c = cli(&["sweep", "--s", "0.5,0.9", "--t", "0.75", "--mode", "all"]);
        let cfg = resolve_config(&c).unwrap();
        assert_eq!(cfg.list::<f64>("s_grid").unwrap(), vec![0.5, 0.9]);
        assert_eq!(cfg.str("mode").unwrap(), "all");
    }
}
