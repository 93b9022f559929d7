//! Event-log and edge-list ingestion, plus the URL pipeline that turns raw
//! shared links into slant-scored news tweets.
//!
//! URL processing runs in four steps: resolve through the redirect cache to a
//! fixed point, percent-decode, normalize (drop scheme, lower-case host, drop a
//! leading `www.`), then match against the slant table with the longest
//! host+path-prefix pattern winning.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read};
use std::path::Path;

use percent_encoding::percent_decode_str;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::FollowerGraph;
use crate::AccountId;

/// Hosts treated as link shorteners when deciding whether an uncached URL is
/// a resolver miss.
pub const DEFAULT_SHORTENERS: &[&str] = &[
    "t.co",
    "bit.ly",
    "ow.ly",
    "tinyurl.com",
    "goo.gl",
    "is.gd",
    "buff.ly",
    "dlvr.it",
    "fb.me",
    "tr.im",
    "su.pr",
    "j.mp",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub author_id: AccountId,
    pub timestamp: i64,
    pub raw_urls: Vec<String>,
    pub retweet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsTweet {
    pub tweet_id: String,
    pub author_id: AccountId,
    /// Index into the [`SlantTable`] the tweet was matched against.
    pub domain_id: usize,
    pub slant: f64,
    pub quality: f64,
    pub retweet: bool,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EventStats {
    pub lines: usize,
    pub parsed: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ParsedEvents {
    pub records: Vec<TweetRecord>,
    pub stats: EventStats,
    /// First few malformed-line diagnostics, `(line number, reason)`.
    pub warnings: Vec<(usize, String)>,
}

const MAX_WARNINGS: usize = 20;

#[derive(Deserialize)]
struct RawEvent {
    tweet_id: Value,
    author_id: Value,
    timestamp: Value,
    #[serde(default)]
    urls: Vec<String>,
    #[serde(default)]
    retweet: bool,
}

fn value_to_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn value_to_account(v: &Value) -> Option<AccountId> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn value_to_timestamp(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn parse_event_line(line: &str) -> std::result::Result<TweetRecord, String> {
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tweet_id = value_to_id(&raw.tweet_id).ok_or("tweet_id missing or not a string/number")?;
    let author_id = value_to_account(&raw.author_id).ok_or("author_id is not an integer")?;
    let timestamp = value_to_timestamp(&raw.timestamp).ok_or("timestamp is not an integer")?;
    Ok(TweetRecord {
        tweet_id,
        author_id,
        timestamp,
        raw_urls: raw.urls,
        retweet: raw.retweet,
    })
}

/// Parse a JSON-lines event log. Malformed lines are counted and skipped;
/// record order follows input order.
pub fn parse_events<R: BufRead>(reader: R) -> Result<ParsedEvents> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let parsed: Vec<Option<std::result::Result<TweetRecord, String>>> = lines
        .par_iter()
        .map(|l| {
            let l = l.trim();
            (!l.is_empty()).then(|| parse_event_line(l))
        })
        .collect();

    let mut out = ParsedEvents::default();
    let mut seen = HashSet::new();
    for (i, p) in parsed.into_iter().enumerate() {
        let Some(p) = p else { continue };
        out.stats.lines += 1;
        match p {
            Ok(rec) => {
                if !seen.insert(rec.tweet_id.clone()) {
                    out.stats.duplicate_ids += 1;
                    continue;
                }
                out.stats.parsed += 1;
                out.records.push(rec);
            }
            Err(reason) => {
                out.stats.malformed += 1;
                if out.warnings.len() < MAX_WARNINGS {
                    out.warnings.push((i + 1, reason));
                }
            }
        }
    }
    Ok(out)
}

pub fn parse_events_path(path: &Path) -> Result<ParsedEvents> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(std::io::BufReader::new(f))
}

/// A URL reduced to host plus path, with scheme, `www.`, query and fragment
/// removed. The host is lower-cased; the path keeps its case.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormalizedUrl {
    pub host: String,
    pub path: String,
}

impl fmt::Display for NormalizedUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.host, self.path)
    }
}

fn strip_scheme(s: &str) -> &str {
    match s.find("://") {
        Some(i) if !s[..i].contains('/') => &s[i + 3..],
        _ => s,
    }
}

fn split_host_path(s: &str) -> (String, String) {
    let cut = s.find(['/', '?', '#']).unwrap_or(s.len());
    let (authority, rest) = s.split_at(cut);
    let authority = authority.rsplit('@').next().unwrap_or(authority);
    let host = authority.split(':').next().unwrap_or(authority);
    let mut host = host.trim_end_matches('.').to_ascii_lowercase();
    if let Some(h) = host.strip_prefix("www.") {
        host = h.to_string();
    }
    let path_end = rest.find(['?', '#']).unwrap_or(rest.len());
    let path = rest[..path_end].trim_end_matches('/').to_string();
    (host, path)
}

/// Percent-decode and normalize a raw URL. Returns `None` when no host remains.
pub fn normalize_url(raw: &str) -> Option<NormalizedUrl> {
    let decoded = percent_decode_str(raw.trim()).decode_utf8_lossy();
    let (host, path) = split_host_path(strip_scheme(decoded.trim()));
    if host.is_empty() {
        return None;
    }
    Some(NormalizedUrl { host, path })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlantEntry {
    pub pattern: String,
    pub slant: f64,
    pub quality: f64,
    pub label: String,
}

/// Slant/quality scores keyed by normalized host[+path prefix] patterns.
#[derive(Debug, Clone, Default)]
pub struct SlantTable {
    entries: Vec<SlantEntry>,
    parsed: Vec<NormalizedUrl>,
    by_host: HashMap<String, Vec<usize>>,
}

impl SlantTable {
    pub fn new(entries: Vec<SlantEntry>) -> Result<Self> {
        let mut table = SlantTable::default();
        let mut seen = HashSet::new();
        for mut e in entries {
            let norm = normalize_url(&e.pattern)
                .ok_or_else(|| Error::InvalidParameter(format!("bad pattern {:?}", e.pattern)))?;
            if !e.slant.is_finite() || !e.quality.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite score for pattern {:?}",
                    e.pattern
                )));
            }
            e.pattern = norm.to_string();
            if !seen.insert(e.pattern.clone()) {
                return Err(Error::DuplicatePattern(e.pattern));
            }
            let idx = table.entries.len();
            table
                .by_host
                .entry(norm.host.clone())
                .or_default()
                .push(idx);
            table.parsed.push(norm);
            table.entries.push(e);
        }
        Ok(table)
    }

    pub fn entries(&self) -> &[SlantEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest matching pattern for a normalized URL. A host pattern matches
    /// the host itself and any subdomain; a path prefix matches at segment
    /// boundaries only.
    pub fn match_url(&self, url: &NormalizedUrl) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        let mut host = url.host.as_str();
        loop {
            if let Some(cands) = self.by_host.get(host) {
                for &idx in cands {
                    let pat = &self.parsed[idx];
                    let prefix_ok = pat.path.is_empty()
                        || url.path == pat.path
                        || (url.path.starts_with(&pat.path)
                            && url.path.as_bytes()[pat.path.len()] == b'/');
                    if !prefix_ok {
                        continue;
                    }
                    let len = self.entries[idx].pattern.len();
                    if best.map_or(true, |(_, l)| len > l) {
                        best = Some((idx, len));
                    }
                }
            }
            match host.find('.') {
                Some(i) => host = &host[i + 1..],
                None => break,
            }
        }
        best.map(|(idx, _)| idx)
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let pattern_col = col("pattern").ok_or(Error::Parse {
            line: 1,
            reason: "slant table needs a `pattern` column".into(),
        })?;
        let slant_col = col("slant").ok_or(Error::Parse {
            line: 1,
            reason: "slant table needs a `slant` column".into(),
        })?;
        let quality_col = col("quality");
        let label_col = col("label");

        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).unwrap_or("");
            let pattern = field(Some(pattern_col)).to_string();
            let slant: f64 = field(Some(slant_col)).parse().map_err(|_| Error::Parse {
                line,
                reason: "slant is not a number".into(),
            })?;
            let q = field(quality_col);
            let quality = if q.is_empty() {
                0.0
            } else {
                q.parse().map_err(|_| Error::Parse {
                    line,
                    reason: "quality is not a number".into(),
                })?
            };
            let label = match field(label_col) {
                "" => pattern.clone(),
                l => l.to_string(),
            };
            entries.push(SlantEntry {
                pattern,
                slant,
                quality,
                label,
            });
        }
        Self::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissPolicy {
    Fail,
    Drop,
    #[default]
    Passthrough,
}

impl std::str::FromStr for MissPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fail" => Ok(Self::Fail),
            "drop" => Ok(Self::Drop),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(Error::InvalidParameter(format!(
                "unknown miss policy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Final(NormalizedUrl),
    Cycle,
    Miss,
}

/// Offline redirect table: short URL to its next hop.
#[derive(Debug, Clone)]
pub struct ResolverCache {
    map: HashMap<NormalizedUrl, NormalizedUrl>,
    shorteners: HashSet<String>,
    pub miss_policy: MissPolicy,
}

impl Default for ResolverCache {
    fn default() -> Self {
        Self {
            map: HashMap::new(),
            shorteners: DEFAULT_SHORTENERS.iter().map(|s| s.to_string()).collect(),
            miss_policy: MissPolicy::default(),
        }
    }
}

impl ResolverCache {
    pub fn new(miss_policy: MissPolicy) -> Self {
        Self {
            miss_policy,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, short: &str, target: &str) -> bool {
        match (normalize_url(short), normalize_url(target)) {
            (Some(s), Some(t)) => {
                self.map.insert(s, t);
                true
            }
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, url: &NormalizedUrl) -> bool {
        self.map.contains_key(url)
    }

    pub fn set_shorteners<I: IntoIterator<Item = String>>(&mut self, hosts: I) {
        self.shorteners = hosts.into_iter().map(|h| h.to_ascii_lowercase()).collect();
    }

    pub fn is_shortener(&self, host: &str) -> bool {
        self.shorteners.contains(host)
    }

    /// Follow cached redirects until no further hop exists.
    pub fn resolve(&self, url: &NormalizedUrl) -> Resolution {
        let mut current = url.clone();
        let mut seen = HashSet::new();
        seen.insert(current.clone());
        loop {
            match self.map.get(&current) {
                Some(next) if *next == current => return Resolution::Final(current),
                Some(next) => {
                    if !seen.insert(next.clone()) {
                        return Resolution::Cycle;
                    }
                    current = next.clone();
                }
                None if self.is_shortener(&current.host) => return Resolution::Miss,
                None => return Resolution::Final(current),
            }
        }
    }

    pub fn from_tsv<R: BufRead>(reader: R, miss_policy: MissPolicy) -> Result<(Self, usize)> {
        let mut cache = Self::new(miss_policy);
        let mut skipped = 0;
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next()) {
                (Some(s), Some(t)) if cache.insert(s, t) => {}
                _ => skipped += 1,
            }
        }
        Ok((cache, skipped))
    }

    pub fn from_path(path: &Path, miss_policy: MissPolicy) -> Result<(Self, usize)> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(std::io::BufReader::new(f), miss_policy)
    }

    /// Entries in a stable order, for writing the cache back out.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut v: Vec<_> = self
            .map
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        v.sort();
        v
    }
}

/// Network side of cache population; the core never performs HTTP itself.
pub trait RedirectClient {
    /// Next hop for `url`, or `None` when it does not redirect.
    fn next_hop(&self, url: &str) -> std::result::Result<Option<String>, String>;
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PopulateStats {
    pub candidates: usize,
    pub added: usize,
    pub failed: usize,
}

/// Resolve every uncached shortener URL in `records` through `client`,
/// recording each hop, up to `max_hops` per URL.
pub fn populate_cache<C: RedirectClient>(
    cache: &mut ResolverCache,
    records: &[TweetRecord],
    client: &C,
    max_hops: usize,
) -> PopulateStats {
    let mut stats = PopulateStats::default();
    let todo: BTreeSet<NormalizedUrl> = records
        .iter()
        .flat_map(|r| r.raw_urls.iter())
        .filter_map(|u| normalize_url(u))
        .filter(|u| cache.is_shortener(&u.host) && !cache.contains(u))
        .collect();
    for url in todo {
        stats.candidates += 1;
        let mut current = url;
        for _ in 0..max_hops {
            if cache.contains(&current) {
                break;
            }
            match client.next_hop(&format!("https://{current}")) {
                Ok(Some(next)) => match normalize_url(&next) {
                    Some(n) => {
                        cache.map.insert(current.clone(), n.clone());
                        stats.added += 1;
                        current = n;
                    }
                    None => {
                        stats.failed += 1;
                        break;
                    }
                },
                Ok(None) => break,
                Err(_) => {
                    stats.failed += 1;
                    break;
                }
            }
        }
    }
    stats
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UrlStats {
    pub records: usize,
    pub records_without_urls: usize,
    pub attempted: usize,
    pub emitted: usize,
    pub unmatched: usize,
    pub cycles: usize,
    pub misses: usize,
    pub stale: usize,
    pub unparseable: usize,
}

impl UrlStats {
    fn merge(&mut self, o: &UrlStats) {
        self.records += o.records;
        self.records_without_urls += o.records_without_urls;
        self.attempted += o.attempted;
        self.emitted += o.emitted;
        self.unmatched += o.unmatched;
        self.cycles += o.cycles;
        self.misses += o.misses;
        self.stale += o.stale;
        self.unparseable += o.unparseable;
    }

    pub fn dropped(&self) -> usize {
        self.unmatched + self.cycles + self.misses + self.stale + self.unparseable
    }
}

/// Optional recency filter: records older than `reference - window_secs` are
/// discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeWindow {
    pub reference: i64,
    pub window_secs: i64,
}

impl AgeWindow {
    pub fn two_weeks(reference: i64) -> Self {
        Self {
            reference,
            window_secs: 14 * 24 * 3600,
        }
    }
}

/// Turn raw tweet records into news tweets, one per matched URL.
pub fn process_urls(
    records: &[TweetRecord],
    resolver: &ResolverCache,
    table: &SlantTable,
    window: Option<AgeWindow>,
) -> Result<(Vec<NewsTweet>, UrlStats)> {
    if table.is_empty() {
        return Err(Error::EmptySlantTable);
    }
    let per_record: Vec<Result<(Vec<NewsTweet>, UrlStats)>> = records
        .par_iter()
        .map(|rec| process_record(rec, resolver, table, window))
        .collect();

    let mut tweets = Vec::new();
    let mut stats = UrlStats::default();
    for r in per_record {
        let (t, s) = r?;
        tweets.extend(t);
        stats.merge(&s);
    }
    Ok((tweets, stats))
}

fn process_record(
    rec: &TweetRecord,
    resolver: &ResolverCache,
    table: &SlantTable,
    window: Option<AgeWindow>,
) -> Result<(Vec<NewsTweet>, UrlStats)> {
    let mut stats = UrlStats {
        records: 1,
        ..Default::default()
    };
    let mut out = Vec::new();
    if rec.raw_urls.is_empty() {
        stats.records_without_urls = 1;
        return Ok((out, stats));
    }
    stats.attempted = rec.raw_urls.len();
    if let Some(w) = window {
        if rec.timestamp < w.reference - w.window_secs {
            stats.stale = rec.raw_urls.len();
            return Ok((out, stats));
        }
    }
    for raw in &rec.raw_urls {
        let Some(url) = normalize_url(raw) else {
            stats.unparseable += 1;
            continue;
        };
        let target = match resolver.resolve(&url) {
            Resolution::Final(u) => u,
            Resolution::Cycle => {
                stats.cycles += 1;
                continue;
            }
            Resolution::Miss => match resolver.miss_policy {
                MissPolicy::Fail => return Err(Error::ResolverMiss(url.to_string())),
                MissPolicy::Drop => {
                    stats.misses += 1;
                    continue;
                }
                MissPolicy::Passthrough => url,
            },
        };
        // Cache targets are stored normalized but may still carry escapes.
        let target = normalize_url(&target.to_string()).unwrap_or(target);
        match table.match_url(&target) {
            Some(idx) => {
                let e = &table.entries()[idx];
                out.push(NewsTweet {
                    tweet_id: rec.tweet_id.clone(),
                    author_id: rec.author_id,
                    domain_id: idx,
                    slant: e.slant,
                    quality: e.quality,
                    retweet: rec.retweet,
                });
                stats.emitted += 1;
            }
            None => stats.unmatched += 1,
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EdgeStats {
    pub lines: usize,
    pub edges: usize,
    pub duplicates: usize,
    pub self_loops: usize,
    pub malformed: usize,
}

/// Read a `followee<TAB>follower` edge list. The node set is the union of
/// edge endpoints and `extra_ids` (typically every event author).
pub fn load_edges<R: BufRead>(
    reader: R,
    extra_ids: impl IntoIterator<Item = AccountId>,
) -> Result<(FollowerGraph, EdgeStats)> {
    let mut stats = EdgeStats::default();
    let mut edges = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        let mut parts = t
            .split(|c: char| c == '\t' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let parsed = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => {
                a.parse::<AccountId>().ok().zip(b.parse::<AccountId>().ok())
            }
            _ => None,
        };
        match parsed {
            Some((a, b)) if a == b => stats.self_loops += 1,
            Some(e) => edges.push(e),
            None => stats.malformed += 1,
        }
    }
    let raw = edges.len();
    let mut ids: Vec<AccountId> = extra_ids.into_iter().collect();
    ids.extend(edges.iter().flat_map(|&(a, b)| [a, b]));
    let graph = FollowerGraph::from_edges(ids, edges);
    stats.edges = graph.edge_count();
    stats.duplicates = raw - stats.edges;
    Ok((graph, stats))
}

pub fn load_edges_path(
    path: &Path,
    extra_ids: impl IntoIterator<Item = AccountId>,
) -> Result<(FollowerGraph, EdgeStats)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_edges(std::io::BufReader::new(f), extra_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(patterns: &[(&str, f64)]) -> SlantTable {
        SlantTable::new(
            patterns
                .iter()
                .map(|&(p, s)| SlantEntry {
                    pattern: p.into(),
                    slant: s,
                    quality: 0.0,
                    label: p.into(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn rec(id: &str, urls: &[&str]) -> TweetRecord {
        TweetRecord {
            tweet_id: id.into(),
            author_id: 1,
            timestamp: 0,
            raw_urls: urls.iter().map(|s| s.to_string()).collect(),
            retweet: false,
        }
    }

    #[test]
    fn parses_valid_lines() {
        let data = r#"{"tweet_id":"1","author_id":10,"timestamp":5,"urls":["http://a.com"]}
{"tweet_id":2,"author_id":"11","timestamp":6,"urls":[]}
{"tweet_id":"3","author_id":12,"timestamp":7,"urls":["x","y"],"retweet":true}
"#;
        let p = parse_events(data.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 3);
        assert_eq!(p.stats.malformed, 0);
        assert_eq!(p.records[1].tweet_id, "2");
        assert_eq!(p.records[1].author_id, 11);
        assert!(p.records[2].retweet);
    }

    #[test]
    fn malformed_line_is_skipped_and_counted() {
        let data = r#"{"tweet_id":"1","author_id":10,"timestamp":5,"urls":[]}
{"tweet_id":"2","author_id":
{"tweet_id":"3","author_id":12,"timestamp":7,"urls":[]}
"#;
        let p = parse_events(data.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.stats.malformed, 1);
        assert_eq!(p.warnings[0].0, 2);
        assert_eq!(p.records[1].tweet_id, "3");
    }

    #[test]
    fn empty_input() {
        let p = parse_events("".as_bytes()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.stats, EventStats::default());
    }

    #[test]
    fn unreadable_path_is_fatal() {
        assert!(matches!(
            parse_events_path(Path::new("/nonexistent/events.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn normalization() {
        let n = normalize_url("https://WWW.CNN.com:443/politics/x?utm=1#frag").unwrap();
        assert_eq!(n.host, "cnn.com");
        assert_eq!(n.path, "/politics/x");
        assert_eq!(
            normalize_url("http://nytimes.com/%41").unwrap().to_string(),
            "nytimes.com/A"
        );
        assert_eq!(normalize_url("bit.ly/x").unwrap().to_string(), "bit.ly/x");
        assert!(normalize_url("https:///nohost").is_none());
    }

    #[test]
    fn longest_pattern_wins() {
        let t = table(&[("cnn.com", 0.1), ("cnn.com/politics", -0.4)]);
        let (tw, st) = process_urls(
            &[rec("1", &["https://WWW.cnn.com/politics/x"])],
            &ResolverCache::default(),
            &t,
            None,
        )
        .unwrap();
        assert_eq!(tw.len(), 1);
        assert_eq!(t.entries()[tw[0].domain_id].pattern, "cnn.com/politics");
        assert_eq!(tw[0].slant, -0.4);
        assert_eq!(st.emitted, 1);

        // segment boundary: /politicsfoo is not under /politics
        let u = normalize_url("cnn.com/politicsfoo").unwrap();
        assert_eq!(t.entries()[t.match_url(&u).unwrap()].pattern, "cnn.com");
        // subdomain falls back to the host pattern
        let u = normalize_url("https://edition.cnn.com/world").unwrap();
        assert_eq!(t.entries()[t.match_url(&u).unwrap()].pattern, "cnn.com");
        assert!(t.match_url(&normalize_url("notcnn.com").unwrap()).is_none());
    }

    #[test]
    fn percent_decoding_then_match() {
        let t = table(&[("nytimes.com", -0.2)]);
        let (tw, _) = process_urls(
            &[rec("1", &["http://nytimes.com/%41"])],
            &ResolverCache::default(),
            &t,
            None,
        )
        .unwrap();
        assert_eq!(tw.len(), 1);
        assert_eq!(tw[0].slant, -0.2);
    }

    #[test]
    fn resolved_to_unknown_domain_is_unmatched() {
        let t = table(&[("nytimes.com", -0.2)]);
        let mut cache = ResolverCache::default();
        cache.insert("bit.ly/x", "example.org");
        let (tw, st) = process_urls(&[rec("1", &["bit.ly/x"])], &cache, &t, None).unwrap();
        assert!(tw.is_empty());
        assert_eq!(st.unmatched, 1);
    }

    #[test]
    fn resolver_follows_chains_and_detects_cycles() {
        let t = table(&[("foxnews.com", 0.6)]);
        let mut cache = ResolverCache::default();
        cache.insert("t.co/a", "bit.ly/b");
        cache.insert("bit.ly/b", "https://www.foxnews.com/story");
        cache.insert("t.co/c1", "t.co/c2");
        cache.insert("t.co/c2", "t.co/c1");
        let (tw, st) = process_urls(
            &[rec("1", &["https://t.co/a", "t.co/c1"])],
            &cache,
            &t,
            None,
        )
        .unwrap();
        assert_eq!(tw.len(), 1);
        assert_eq!(st.cycles, 1);
        // a final URL resolves to itself
        let f = normalize_url("foxnews.com/story").unwrap();
        assert_eq!(cache.resolve(&f), Resolution::Final(f.clone()));
    }

    #[test]
    fn miss_policies() {
        let t = table(&[("foxnews.com", 0.6)]);
        let recs = [rec("1", &["t.co/unknown"])];
        let mut cache = ResolverCache::new(MissPolicy::Drop);
        let (_, st) = process_urls(&recs, &cache, &t, None).unwrap();
        assert_eq!(st.misses, 1);
        cache.miss_policy = MissPolicy::Passthrough;
        let (_, st) = process_urls(&recs, &cache, &t, None).unwrap();
        assert_eq!((st.misses, st.unmatched), (0, 1));
        cache.miss_policy = MissPolicy::Fail;
        assert!(matches!(
            process_urls(&recs, &cache, &t, None),
            Err(Error::ResolverMiss(_))
        ));
    }

    #[test]
    fn two_matched_urls_yield_two_news_tweets() {
        let t = table(&[("a.com", 1.0), ("b.com", -1.0)]);
        let (tw, st) = process_urls(
            &[rec("1", &["a.com/x", "b.com/y", "c.com"])],
            &ResolverCache::default(),
            &t,
            None,
        )
        .unwrap();
        assert_eq!(tw.len(), 2);
        assert_eq!(st.attempted, st.emitted + st.dropped());
    }

    #[test]
    fn age_window() {
        let t = table(&[("a.com", 1.0)]);
        let mut old = rec("1", &["a.com"]);
        old.timestamp = 0;
        let mut fresh = rec("2", &["a.com"]);
        fresh.timestamp = 2_000_000;
        let w = AgeWindow::two_weeks(2_000_000);
        let (tw, st) = process_urls(&[old, fresh], &ResolverCache::default(), &t, Some(w)).unwrap();
        assert_eq!(tw.len(), 1);
        assert_eq!(st.stale, 1);
    }

    #[test]
    fn empty_table_rejected() {
        assert!(matches!(
            process_urls(&[], &ResolverCache::default(), &SlantTable::default(), None),
            Err(Error::EmptySlantTable)
        ));
    }

    #[test]
    fn duplicate_patterns_rejected_after_normalization() {
        let r = SlantTable::new(vec![
            SlantEntry {
                pattern: "cnn.com".into(),
                slant: 0.0,
                quality: 0.0,
                label: "a".into(),
            },
            SlantEntry {
                pattern: "https://www.CNN.com/".into(),
                slant: 0.0,
                quality: 0.0,
                label: "b".into(),
            },
        ]);
        assert!(matches!(r, Err(Error::DuplicatePattern(_))));
    }

    #[test]
    fn slant_table_csv_quality_optional() {
        let t = SlantTable::from_csv(
            "pattern,slant,quality,label\ncnn.com,-0.1,,CNN\nfoxnews.com,0.5,2.5,Fox\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(t.entries()[0].quality, 0.0);
        assert_eq!(t.entries()[1].quality, 2.5);
        let t = SlantTable::from_csv("pattern,slant\ncnn.com,-0.1\n".as_bytes()).unwrap();
        assert_eq!(t.entries()[0].label, "cnn.com");
    }

    #[test]
    fn edges_dedup_and_self_loops() {
        let (g, st) = load_edges("1\t2\n1\t2\n".as_bytes(), []).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(st.duplicates, 1);
        let (g, st) = load_edges("5\t5\n".as_bytes(), []).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(st.self_loops, 1);
        let (g, st) = load_edges("a\t2\n\t\n3\t4\n".as_bytes(), [99]).unwrap();
        assert_eq!(st.malformed, 1);
        assert_eq!(g.node_count(), 3);
        assert!(g.index_of(99).is_some());
    }

    struct MapClient(HashMap<String, String>);
    impl RedirectClient for MapClient {
        fn next_hop(&self, url: &str) -> std::result::Result<Option<String>, String> {
            Ok(self.0.get(url).cloned())
        }
    }

    #[test]
    fn populate_cache_records_each_hop() {
        let client = MapClient(
            [
                ("https://t.co/a".to_string(), "https://bit.ly/b".to_string()),
                (
                    "https://bit.ly/b".to_string(),
                    "https://www.nytimes.com/x".to_string(),
                ),
            ]
            .into_iter()
            .collect(),
        );
        let mut cache = ResolverCache::default();
        let st = populate_cache(&mut cache, &[rec("1", &["https://t.co/a"])], &client, 10);
        assert_eq!(st.added, 2);
        let r = cache.resolve(&normalize_url("t.co/a").unwrap());
        assert_eq!(
            r,
            Resolution::Final(normalize_url("nytimes.com/x").unwrap())
        );
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalization_is_idempotent(host in "[a-zA-Z]{1,8}(\\.[a-zA-Z]{2,4}){1,2}",
                                       path in "(/[a-zA-Z0-9_-]{1,6}){0,3}",
                                       scheme in prop_oneof![Just(""), Just("http://"), Just("https://www.")]) {
            let raw = format!("{scheme}{host}{path}");
            let once = normalize_url(&raw).unwrap();
            let twice = normalize_url(&once.to_string()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn counters_partition_attempts(urls in proptest::collection::vec("(https?://)?(www\\.)?[abc]\\.com(/[xy]){0,2}", 0..6)) {
            let t = SlantTable::new(vec![
                SlantEntry { pattern: "a.com".into(), slant: 1.0, quality: 0.0, label: "a".into() },
                SlantEntry { pattern: "a.com/x".into(), slant: 2.0, quality: 0.0, label: "ax".into() },
                SlantEntry { pattern: "b.com".into(), slant: -1.0, quality: 0.0, label: "b".into() },
            ]).unwrap();
            let rec = TweetRecord { tweet_id: "1".into(), author_id: 1, timestamp: 0, raw_urls: urls.clone(), retweet: false };
            let (tw, st) = process_urls(&[rec], &ResolverCache::default(), &t, None).unwrap();
            prop_assert_eq!(st.attempted, urls.len());
            prop_assert_eq!(st.attempted, tw.len() + st.dropped());
        }
    }
}
