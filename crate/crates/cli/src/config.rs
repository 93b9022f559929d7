//! `key = value` configuration with a fixed key registry.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored, as is anything after a ` #` on a value line. Relative paths in a
//! file resolve against the file's directory. Command-line flags override the
//! file, and the file overrides the built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Path,
    Str,
    Float,
    Int,
    Bool,
    FloatList,
    IntList,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    /// Empty means unset.
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        kind,
        default,
        help,
    }
}

use Kind::*;

pub const KEYS: &[KeySpec] = &[
    key("out", Path, "out", "output directory; created if missing"),
    key("seed", Int, "0", "master seed for every randomized step"),
    key(
        "threads",
        Int,
        "0",
        "worker threads (0 = all cores); never changes results",
    ),
    key("events", Path, "", "JSON-lines event log"),
    key("edges", Path, "", "followee<TAB>follower edge list"),
    key("slant_table", Path, "", "pattern,slant,quality,label CSV"),
    key(
        "resolver",
        Path,
        "",
        "short_url<TAB>final_url redirect cache",
    ),
    key(
        "miss_policy",
        Str,
        "passthrough",
        "uncached shortener URLs: fail | drop | passthrough",
    ),
    key(
        "max_age_days",
        Int,
        "",
        "drop events older than this many days before the latest event",
    ),
    key(
        "graph_cache",
        Path,
        "",
        "graph cache file; read if present, written otherwise",
    ),
    key(
        "max_hops",
        Int,
        "10",
        "redirect hops followed per URL by resolve",
    ),
    key(
        "http_timeout",
        Int,
        "10",
        "seconds per redirect request in resolve",
    ),
    key("bin_width", Float, "0.5", "crosstab bin width"),
    key("bin_lo", Float, "-1.75", "crosstab lower edge"),
    key("bin_hi", Float, "2.25", "crosstab upper edge"),
    key(
        "model",
        Str,
        "I",
        "regression model: I | II | III | IV | A1",
    ),
    key(
        "s_grid",
        FloatList,
        "0.75,0.80,0.85,0.90,0.95",
        "sweep outdegree quantiles",
    ),
    key(
        "t_grid",
        FloatList,
        "0.75,0.80,0.85,0.90,0.95",
        "sweep news-count quantiles",
    ),
    key(
        "mode",
        Str,
        "within",
        "sweep mode: within | all | periphery",
    ),
    key(
        "subgraph",
        Str,
        "core",
        "accounts to order: core | moderate | all",
    ),
    key("core_s", Float, "0.95", "core outdegree quantile"),
    key("core_t", Float, "0.95", "core news-count quantile"),
    key(
        "perm",
        Str,
        "out",
        "ordering: out | in | spectral | cnm | random",
    ),
    key(
        "perms",
        Str,
        "out,in,cnm,spectral,random",
        "orderings compared by compare",
    ),
    key(
        "method",
        Str,
        "spectral",
        "structural ordering: spectral | cnm",
    ),
    key(
        "critical",
        Bool,
        "true",
        "compute bootstrap critical values",
    ),
    key("critical_reps", Int, "1000", "bootstrap replicates"),
    key(
        "critical_frac",
        Float,
        "0.05",
        "fraction of nodes displaced per replicate",
    ),
    key(
        "critical_q",
        Float,
        "0.95",
        "quantile of the likelihood reduction",
    ),
    key(
        "eigen_k",
        Int,
        "5",
        "Laplacian eigenvectors tried by the spectral ordering",
    ),
    key("eigen_tol", Float, "1e-8", "eigensolver residual tolerance"),
    key(
        "followers_dir",
        Path,
        "",
        "directory of per-outlet follower id files",
    ),
    key("anchors", Path, "", "label,outlet anchor CSV"),
    key(
        "min_followers",
        Int,
        "10000",
        "outlets with fewer followers are excluded",
    ),
    key(
        "bot_threshold",
        Float,
        "",
        "keep followers whose score column is below this",
    ),
    key(
        "w_min",
        Float,
        "0.3",
        "scaled affinity below this is pruned",
    ),
    key(
        "deg_min",
        Int,
        "5",
        "outlets with fewer surviving edges are pruned",
    ),
    key(
        "iterate_prune",
        Bool,
        "false",
        "repeat pruning to a fixed point",
    ),
    key("gamma", Float, "1.0", "spin-glass resolution"),
    key(
        "spin_seeds",
        IntList,
        "1,2,3,4",
        "independent spin-glass runs; lowest energy wins",
    ),
    key(
        "max_spins",
        Int,
        "25",
        "spin states available to the annealer",
    ),
    key("sweeps_per_node", Int, "50", "annealing sweeps per outlet"),
    key("visits", Path, "", "user_id,site_id,conservative visit CSV"),
    key(
        "n_sites",
        Int,
        "",
        "sites in the visit model (default: largest site id + 1)",
    ),
    key("ridge", Float, "0", "ridge penalty for the visit logit"),
    key(
        "max_iter",
        Int,
        "100",
        "Newton iterations for the visit logit",
    ),
    key("kind", Str, "perm", "plot kind: perm | slant"),
    key("n_accounts", Int, "2000", "synth: accounts"),
    key("core_fraction", Float, "0.2", "synth: planted core share"),
    key(
        "homophily",
        Float,
        "5.0",
        "synth: follow decay in slant distance",
    ),
    key(
        "mean_followees",
        Float,
        "20",
        "synth: mean followees per account",
    ),
    key(
        "core_boost",
        Float,
        "6.0",
        "synth: follow preference for core accounts",
    ),
    key(
        "core_amplify",
        Float,
        "1.2",
        "synth: planted slope of the most prominent core account",
    ),
    key(
        "periphery_shrink",
        Float,
        "0.7",
        "synth: planted periphery slope",
    ),
    key(
        "core_tweet_rate",
        Float,
        "30",
        "synth: mean news posts per core account",
    ),
    key(
        "periphery_tweet_rate",
        Float,
        "1",
        "synth: base news posts per periphery account",
    ),
    key(
        "shortened_fraction",
        Float,
        "0.2",
        "synth: share of links behind a shortener",
    ),
    key(
        "retweet_fraction",
        Float,
        "0.1",
        "synth: share of events flagged as retweets",
    ),
    key(
        "audience_outlets",
        IntList,
        "33,34,33",
        "synth: liberal, mainstream, conservative outlets",
    ),
    key(
        "audience_pool",
        IntList,
        "3000,3000,3000",
        "synth: liberal, mainstream, conservative readers",
    ),
    key("n_visits", Int, "10000", "synth: visit records"),
];

const INGEST: &[&str] = &[
    "events",
    "edges",
    "slant_table",
    "resolver",
    "miss_policy",
    "max_age_days",
    "graph_cache",
];
const CORE: &[&str] = &["subgraph", "core_s", "core_t"];
const CRITICAL: &[&str] = &["critical", "critical_reps", "critical_frac", "critical_q"];
const EIGEN: &[&str] = &["eigen_k", "eigen_tol"];
const AFFINITY: &[&str] = &[
    "followers_dir",
    "anchors",
    "min_followers",
    "bot_threshold",
    "w_min",
    "deg_min",
    "iterate_prune",
    "gamma",
    "spin_seeds",
    "max_spins",
    "sweeps_per_node",
];

/// Keys a subcommand reads, beyond `out`, `seed` and `threads`.
pub fn keys_for(cmd: &str) -> Vec<&'static str> {
    let groups: &[&[&str]] = match cmd {
        "ingest" => &[INGEST],
        "resolve" => &[&["events", "resolver", "max_hops", "http_timeout"]],
        "summarize" => &[INGEST, &["core_s", "core_t"]],
        "crosstab" => &[INGEST, &["bin_width", "bin_lo", "bin_hi"]],
        "regress" => &[INGEST, &["model"]],
        "sweep" => &[INGEST, &["s_grid", "t_grid", "mode"]],
        "permscore" => &[INGEST, CORE, &["perm"], CRITICAL, EIGEN],
        "order" => &[INGEST, CORE, &["method"], EIGEN],
        "compare" => &[INGEST, CORE, &["perms"], CRITICAL, EIGEN],
        "affinity" => &[AFFINITY],
        "logit" => &[&["visits", "n_sites", "ridge", "max_iter"]],
        "plot" => &[&["kind"], INGEST, CORE, &["perm"], EIGEN, AFFINITY],
        "synth" => &[&[
            "n_accounts",
            "core_fraction",
            "homophily",
            "mean_followees",
            "core_boost",
            "core_amplify",
            "periphery_shrink",
            "core_tweet_rate",
            "periphery_tweet_rate",
            "shortened_fraction",
            "retweet_fraction",
            "audience_outlets",
            "audience_pool",
            "n_visits",
        ]],
        _ => &[],
    };
    let mut keys = vec!["out", "seed", "threads"];
    keys.extend(groups.iter().flat_map(|g| g.iter().copied()));
    keys
}

pub fn spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

fn check_value(spec: &KeySpec, value: &str) -> Result<()> {
    if value.is_empty() {
        return Ok(());
    }
    let ok = match spec.kind {
        Path | Str => true,
        Float => value.parse::<f64>().is_ok(),
        Int => value.parse::<u64>().is_ok(),
        Bool => matches!(value, "true" | "false"),
        FloatList => value.split(',').all(|x| x.trim().parse::<f64>().is_ok()),
        IntList => value.split(',').all(|x| x.trim().parse::<u64>().is_ok()),
    };
    if ok {
        Ok(())
    } else {
        bail!("{} expects {:?}, got {value:?}", spec.name, spec.kind)
    }
}

/// Resolved settings: defaults, then file, then flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn defaults() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.name.to_string(), k.default.to_string()))
                .collect(),
        }
    }

    /// Set one key; unknown keys and ill-typed values are errors.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let spec = spec(name).ok_or_else(|| anyhow!("unknown key {name:?}"))?;
        let value = value.trim();
        check_value(spec, value)?;
        self.values.insert(name.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a config file's text. `base` anchors relative paths.
    pub fn apply_text(&mut self, text: &str, base: &Path, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find(" #") {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("{origin}:{}: {raw}", i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("expected key = value"))
                .with_context(at)?;
            let k = k.trim();
            let v = v.trim();
            let spec = spec(k)
                .ok_or_else(|| anyhow!("unknown key {k:?}"))
                .with_context(at)?;
            let v = if spec.kind == Path && !v.is_empty() && Path::new(v).is_relative() {
                base.join(v).to_string_lossy().into_owned()
            } else {
                v.to_string()
            };
            self.set(k, &v).with_context(at)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        self.apply_text(&text, &base, &path.display().to_string())
    }

    /// The subset of keys `cmd` reads, for the manifest.
    pub fn restricted(&self, cmd: &str) -> BTreeMap<String, String> {
        keys_for(cmd)
            .into_iter()
            .map(|k| (k.to_string(), self.values[k].clone()))
            .collect()
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("key {name} is not registered"))
    }

    pub fn is_set(&self, name: &str) -> bool {
        !self.raw(name).is_empty()
    }

    pub fn str(&self, name: &str) -> Result<&str> {
        match self.raw(name) {
            "" => bail!("{name} is required"),
            v => Ok(v),
        }
    }

    pub fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(name)?;
        v.parse::<T>().map_err(|e| anyhow!("{name} = {v:?}: {e}"))
    }

    pub fn opt<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.is_set(name) {
            self.parse(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        self.str(name).map(PathBuf::from)
    }

    pub fn opt_path(&self, name: &str) -> Option<PathBuf> {
        self.is_set(name).then(|| PathBuf::from(self.raw(name)))
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        self.parse(name)
    }

    pub fn usize(&self, name: &str) -> Result<usize> {
        self.parse(name)
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        self.parse(name)
    }

    pub fn bool(&self, name: &str) -> Result<bool> {
        self.parse(name)
    }

    pub fn list<T: std::str::FromStr>(&self, name: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(name)?
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<T>()
                    .map_err(|e| anyhow!("{name}: {x:?}: {e}"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_unique() {
        let mut names: Vec<_> = KEYS.iter().map(|k| k.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), KEYS.len());
    }

    #[test]
    fn every_subcommand_key_is_registered() {
        for cmd in crate::SUBCOMMANDS {
            for k in keys_for(cmd) {
                assert!(spec(k).is_some(), "{cmd}: {k}");
            }
        }
    }

    #[test]
    fn defaults_type_check() {
        for k in KEYS {
            check_value(k, k.default).unwrap();
        }
    }

    #[test]
    fn unknown_key_names_the_line() {
        let mut c = Config::defaults();
        let err = c
            .apply_text("seed = 3\n# note\nsede = 4\n", Path::new("."), "run.conf")
            .unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("run.conf:3: sede = 4"), "{msg}");
        assert!(msg.contains("unknown key"), "{msg}");
    }

    #[test]
    fn bad_value_and_missing_equals_are_fatal() {
        let mut c = Config::defaults();
        assert!(c.apply_text("seed = x\n", Path::new("."), "f").is_err());
        assert!(c.apply_text("seed\n", Path::new("."), "f").is_err());
        assert!(c
            .apply_text("critical = yes\n", Path::new("."), "f")
            .is_err());
    }

    #[test]
    fn relative_paths_anchor_to_file() {
        let mut c = Config::defaults();
        c.apply_text(
            "events = ev.jsonl  # log\nedges = /abs/e.tsv\n",
            Path::new("demo"),
            "f",
        )
        .unwrap();
        assert_eq!(
            c.path("events").unwrap(),
            Path::new("demo").join("ev.jsonl")
        );
        assert_eq!(c.path("edges").unwrap(), Path::new("/abs/e.tsv"));
    }

    #[test]
    fn flags_override_file() {
        let mut c = Config::defaults();
        c.apply_text("model = II\n", Path::new("."), "f").unwrap();
        c.set("model", "IV").unwrap();
        assert_eq!(c.str("model").unwrap(), "IV");
        assert_eq!(c.list::<f64>("s_grid").unwrap().len(), 5);
        assert_eq!(c.opt::<f64>("bot_threshold").unwrap(), None);
    }

    #[test]
    fn restricted_view_lists_only_used_keys() {
        let c = Config::defaults();
        let r = c.restricted("regress");
        assert!(r.contains_key("model"));
        assert!(!r.contains_key("perm"));
        assert_eq!(r["seed"], "0");
    }
}
