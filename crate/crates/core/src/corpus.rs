//! Timestamped document corpora: ingestion of the JSON-lines format,
//! synthetic generation, and the client/attacker split.
//!
//! Keyword extraction is out of scope; ingested records already carry
//! their keyword lists. The keyword universe is the top-|W| keywords by
//! document frequency (ties broken by label), and documents are split
//! day-wise into a client half and an attacker half so the two sides
//! stay statistically similar.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A document as the simulator sees it: opaque id, abstract size,
/// keyword indices into the universe, and the day it enters the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    /// Abstract size in bytes, >= 1.
    pub size: u64,
    /// Sorted, deduplicated keyword indices; never empty.
    pub keywords: Vec<u32>,
    /// Day index at which the document is added.
    pub add_slot: u32,
    /// Optional pre-scheduled deletion day, strictly after `add_slot`.
    pub delete_slot: Option<u32>,
}

/// Ordered keyword labels; index = position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordUniverse {
    labels: Vec<String>,
}

impl KeywordUniverse {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::config("keyword universe needs at least 2 keywords"));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::config(format!("duplicate keyword label {l:?}")));
            }
        }
        Ok(KeywordUniverse { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, idx: u32) -> &str {
        &self.labels[idx as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Per-keyword daily search counts; all vectors share one length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendTable {
    counts: Vec<Vec<u64>>,
    days: usize,
}

impl TrendTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let days = counts.first().map_or(0, |c| c.len());
        if counts.iter().any(|c| c.len() != days) {
            return Err(Error::config("trend vectors have differing lengths"));
        }
        Ok(TrendTable { counts, days })
    }

    pub fn keywords(&self) -> usize {
        self.counts.len()
    }

    pub fn days(&self) -> usize {
        self.days
    }

    /// Search count of `keyword` on `day`. Trend vectors shorter than
    /// the simulated horizon are tiled cyclically.
    pub fn count(&self, keyword: u32, day: u32) -> u64 {
        if self.days == 0 {
            return 0;
        }
        self.counts[keyword as usize][day as usize % self.days]
    }
}

/// A corpus split into disjoint client and attacker halves drawn from
/// the same day-wise pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub client_docs: Vec<Document>,
    pub attacker_docs: Vec<Document>,
    pub universe: KeywordUniverse,
    pub trends: TrendTable,
}

impl CorpusSplit {
    /// Largest add day across both halves.
    pub fn day_span(&self) -> u32 {
        self.client_docs
            .iter()
            .chain(&self.attacker_docs)
            .map(|d| d.add_slot)
            .max()
            .map_or(0, |d| d + 1)
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    size: u64,
    day: u32,
    keywords: Vec<String>,
}

/// Ingestion parameters: universe size, split seed, optional trend CSV.
#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub universe_size: usize,
    pub seed: u64,
    /// CSV with header `keyword,day,count`; keywords without trend rows
    /// get all-zero vectors (the simulator falls back to uniform
    /// sampling on all-zero days).
    pub trends_path: Option<std::path::PathBuf>,
}

/// Reads the JSON-lines corpus at `path`, selects the top-frequency
/// keyword universe, and splits documents day-wise into halves.
pub fn ingest_corpus(path: &Path, config: &IngestConfig) -> Result<CorpusSplit> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut raw: Vec<RawRecord> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if rec.size == 0 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("document {:?} has size 0", rec.id),
            });
        }
        if rec.keywords.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("document {:?} has no keywords", rec.id),
            });
        }
        raw.push(rec);
    }

    // Document frequency over the full corpus; ties broken by label so
    // the universe is stable across runs.
    let mut df: BTreeMap<&str, u64> = BTreeMap::new();
    for rec in &raw {
        let mut seen: Vec<&str> = rec.keywords.iter().map(|s| s.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        for k in seen {
            *df.entry(k).or_insert(0) += 1;
        }
    }
    if config.universe_size > df.len() {
        return Err(Error::config(format!(
            "universe size {} exceeds the {} distinct keywords available",
            config.universe_size,
            df.len()
        )));
    }
    let mut ranked: Vec<(&str, u64)> = df.iter().map(|(k, v)| (*k, *v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(config.universe_size);
    let labels: Vec<String> = ranked.iter().map(|(k, _)| k.to_string()).collect();
    let universe = KeywordUniverse::new(labels)?;
    let index_of: HashMap<&str, u32> = universe
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();

    // Documents whose keywords all fall outside the universe can never
    // appear in a response; they are dropped here.
    let mut docs: Vec<Document> = Vec::with_capacity(raw.len());
    for rec in raw {
        let mut kws: Vec<u32> = rec
            .keywords
            .iter()
            .filter_map(|k| index_of.get(k.as_str()).copied())
            .collect();
        kws.sort_unstable();
        kws.dedup();
        if kws.is_empty() {
            continue;
        }
        docs.push(Document {
            doc_id: rec.id,
            size: rec.size,
            keywords: kws,
            add_slot: rec.day,
            delete_slot: None,
        });
    }

    let trends = match &config.trends_path {
        Some(p) => read_trends(p, &universe)?,
        None => TrendTable::new(vec![vec![1]; universe.len()])?,
    };

    let (client_docs, attacker_docs) = split_by_day(docs, config.seed);
    Ok(CorpusSplit {
        client_docs,
        attacker_docs,
        universe,
        trends,
    })
}

fn read_trends(path: &Path, universe: &KeywordUniverse) -> Result<TrendTable> {
    let index_of: HashMap<&str, u32> = universe
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i as u32))
        .collect();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut cells: Vec<(u32, u32, u64)> = Vec::new();
    let mut max_day = 0u32;
    for (lineno, row) in reader.deserialize::<(String, u32, u64)>().enumerate() {
        let (keyword, day, count) = row.map_err(|e| Error::Parse {
            line: lineno + 2,
            msg: e.to_string(),
        })?;
        if let Some(&k) = index_of.get(keyword.as_str()) {
            max_day = max_day.max(day);
            cells.push((k, day, count));
        }
    }
    let days = max_day as usize + 1;
    let mut counts = vec![vec![0u64; days]; universe.len()];
    for (k, day, c) in cells {
        counts[k as usize][day as usize] = c;
    }
    TrendTable::new(counts)
}

/// Day-wise random split: per day the documents are shuffled and the
/// client receives the first half (the larger one on odd counts).
fn split_by_day(docs: Vec<Document>, seed: u64) -> (Vec<Document>, Vec<Document>) {
    let mut by_day: BTreeMap<u32, Vec<Document>> = BTreeMap::new();
    for d in docs {
        by_day.entry(d.add_slot).or_default().push(d);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut client = Vec::new();
    let mut attacker = Vec::new();
    for (_, mut pool) in by_day {
        pool.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        pool.shuffle(&mut rng);
        let take = pool.len().div_ceil(2);
        for (i, d) in pool.into_iter().enumerate() {
            if i < take {
                client.push(d);
            } else {
                attacker.push(d);
            }
        }
    }
    (client, attacker)
}

/// Parameters of the synthetic corpus generator.
///
/// Keyword document frequencies follow a truncated Zipf curve; documents
/// belong to latent topics and keywords prefer documents of their own
/// topic, which gives the corpus a stable co-occurrence structure. Query
/// trends follow a second Zipf curve over the same ranks with a slow
/// per-keyword seasonal wobble.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub universe_size: usize,
    /// Trend horizon and add window, in days.
    pub day_span: u32,
    /// Fraction of documents placed on day 0 as the initial database.
    pub initial_fraction: f64,
    /// Zipf exponent of the keyword document-frequency curve.
    pub zipf_exponent: f64,
    /// Document frequency of the top keyword, as a fraction of `n_docs`.
    pub doc_freq_max: f64,
    /// Floor on per-keyword document counts.
    pub doc_freq_min: usize,
    /// Log-normal jitter (sigma) multiplied into the frequency curves
    /// before re-sorting; keeps ranks monotone but makes the gaps
    /// between neighboring ranks irregular, like real corpora.
    pub rank_jitter: f64,
    /// Force pairwise-distinct document frequencies (distinct response
    /// volumes on a frozen database).
    pub distinct_doc_freqs: bool,
    pub topics: usize,
    /// Spread (log scale) of the per-keyword topic affinities; larger
    /// values give keywords sharper topical fingerprints and stronger
    /// co-occurrence structure.
    pub topic_sigma: f64,
    /// Log-normal size parameters (natural log scale).
    pub size_log_mean: f64,
    pub size_log_sigma: f64,
    /// Zipf exponent of query popularity; 0 gives a uniform workload.
    pub trend_zipf_exponent: f64,
    /// Relative amplitude of the seasonal wobble, in [0, 1).
    pub trend_wobble: f64,
    /// Daily search count of the most queried keyword.
    pub trend_scale: u64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_docs: 4000,
            universe_size: 200,
            day_span: 50,
            initial_fraction: 0.9,
            zipf_exponent: 0.8,
            doc_freq_max: 0.18,
            doc_freq_min: 10,
            rank_jitter: 0.5,
            distinct_doc_freqs: false,
            topics: 12,
            topic_sigma: 2.0,
            size_log_mean: 8.0,
            size_log_sigma: 1.2,
            trend_zipf_exponent: 1.3,
            trend_wobble: 0.7,
            trend_scale: 300,
            seed: 0,
        }
    }
}

/// Generates a synthetic corpus split. Deterministic under
/// `spec.seed`; the same spec yields identical output on every run.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<CorpusSplit> {
    validate_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_docs;
    let w = spec.universe_size;

    let labels: Vec<String> = (0..w).map(|i| format!("kw{i:04}")).collect();
    let universe = KeywordUniverse::new(labels)?;

    // Document frequencies: truncated Zipf, jittered and re-sorted so
    // rank order stays monotone while neighboring ranks keep irregular
    // gaps, with optional strictly decreasing enforcement for distinct
    // response volumes.
    let mut normal = {
        let mut spare: Option<f64> = None;
        move |rng: &mut ChaCha8Rng| -> f64 {
            if let Some(z) = spare.take() {
                return z;
            }
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            spare = Some(r * theta.sin());
            r * theta.cos()
        }
    };
    let mut df_curve: Vec<f64> = (0..w)
        .map(|k| {
            let z = spec.doc_freq_max * n as f64 / ((k + 1) as f64).powf(spec.zipf_exponent);
            z * (spec.rank_jitter * normal(&mut rng)).exp()
        })
        .collect();
    df_curve.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut df: Vec<usize> = df_curve
        .iter()
        .map(|z| (z.round() as usize).clamp(spec.doc_freq_min, n))
        .collect();
    if spec.distinct_doc_freqs {
        for k in (0..w.saturating_sub(1)).rev() {
            df[k] = df[k].max(df[k + 1] + 1).min(n);
        }
    }

    // Topic model: every keyword carries a log-normal affinity to each
    // topic (its topical fingerprint); documents draw one topic
    // uniformly. Both corpus halves share the same expected structure,
    // which is what keeps co-occurrence comparable across halves and
    // across updates.
    let kw_affinity: Vec<Vec<f64>> = (0..w)
        .map(|_| {
            (0..spec.topics)
                .map(|_| (spec.topic_sigma * normal(&mut rng)).exp())
                .collect()
        })
        .collect();
    let doc_topic: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.topics)).collect();

    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let s = (spec.size_log_mean + spec.size_log_sigma * normal(&mut rng)).exp();
        sizes.push((s.round() as u64).max(1));
    }

    // Add days: an initial block on day 0, the rest uniform over the
    // remaining window.
    let initial = ((spec.initial_fraction * n as f64).round() as usize).min(n);
    let add_days: Vec<u32> = (0..n)
        .map(|i| {
            if i < initial || spec.day_span == 1 {
                0
            } else {
                rng.gen_range(1..spec.day_span)
            }
        })
        .collect();

    // Keyword membership: for each keyword draw df[k] documents without
    // replacement, weighted toward the keyword's topic
    // (Efraimidis-Spirakis weighted reservoir keys).
    let mut doc_keywords: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(n);
    for k in 0..w {
        keys.clear();
        for d in 0..n {
            let weight = kw_affinity[k][doc_topic[d]];
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            keys.push((u.powf(1.0 / weight), d));
        }
        keys.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, d) in keys.iter().take(df[k]) {
            doc_keywords[d].push(k as u32);
        }
    }

    // Documents without any keyword are invisible to keyword search and
    // are dropped.
    let mut docs: Vec<Document> = Vec::with_capacity(n);
    for d in 0..n {
        if doc_keywords[d].is_empty() {
            continue;
        }
        docs.push(Document {
            doc_id: format!("d{d:06}"),
            size: sizes[d],
            keywords: std::mem::take(&mut doc_keywords[d]),
            add_slot: add_days[d],
            delete_slot: None,
        });
    }

    // Trends: query popularity aligned with the document-frequency ranks
    // (jittered the same way) plus a per-keyword sinusoidal wobble.
    let days = spec.day_span as usize;
    let mut trend_base: Vec<f64> = (0..w)
        .map(|k| {
            let z = spec.trend_scale as f64 / ((k + 1) as f64).powf(spec.trend_zipf_exponent);
            z * (spec.rank_jitter * normal(&mut rng)).exp()
        })
        .collect();
    trend_base.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut counts = vec![vec![0u64; days]; w];
    for (k, base) in trend_base.iter().copied().enumerate() {
        let period: f64 = rng.gen_range(7.0..45.0);
        let phase: f64 = rng.gen_range(0.0..1.0);
        for (day, slot) in counts[k].iter_mut().enumerate() {
            let wave = 1.0
                + spec.trend_wobble
                    * (2.0 * std::f64::consts::PI * (day as f64 / period + phase)).sin();
            *slot = (base * wave).round().max(0.0) as u64;
        }
    }
    let trends = TrendTable::new(counts)?;

    let (client_docs, attacker_docs) = split_by_day(docs, rng.gen());
    Ok(CorpusSplit {
        client_docs,
        attacker_docs,
        universe,
        trends,
    })
}

fn validate_spec(spec: &SynthSpec) -> Result<()> {
    if spec.n_docs == 0 {
        return Err(Error::config("n_docs must be positive"));
    }
    if spec.universe_size < 2 {
        return Err(Error::config("universe_size must be at least 2"));
    }
    if spec.day_span == 0 {
        return Err(Error::config("day_span must be positive"));
    }
    if spec.topics == 0 {
        return Err(Error::config("topics must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.initial_fraction) {
        return Err(Error::config("initial_fraction must lie in [0, 1]"));
    }
    if !(0.0..1.0).contains(&spec.trend_wobble) {
        return Err(Error::config("trend_wobble must lie in [0, 1)"));
    }
    if spec.doc_freq_min == 0 || spec.doc_freq_max <= 0.0 {
        return Err(Error::config("document frequencies must be positive"));
    }
    if spec.rank_jitter < 0.0 {
        return Err(Error::config("rank_jitter must be non-negative"));
    }
    if spec.trend_scale == 0 {
        return Err(Error::config("trend_scale must be positive"));
    }
    Ok(())
}

/// Writes a corpus split back to the ingestion formats: the documents of
/// both halves as JSON-lines and the trends as `keyword,day,count` CSV.
pub fn write_corpus(
    split: &CorpusSplit,
    docs_path: &Path,
    trends_path: &Path,
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(docs_path)?);
    let mut all: Vec<&Document> = split.client_docs.iter().chain(&split.attacker_docs).collect();
    all.sort_by(|a, b| a.add_slot.cmp(&b.add_slot).then(a.doc_id.cmp(&b.doc_id)));
    for d in all {
        let rec = serde_json::json!({
            "id": d.doc_id,
            "size": d.size,
            "day": d.add_slot,
            "keywords": d.keywords.iter().map(|&k| split.universe.label(k)).collect::<Vec<_>>(),
        });
        writeln!(out, "{rec}")?;
    }
    let mut w = csv::Writer::from_path(trends_path).map_err(|e| Error::Input(e.to_string()))?;
    w.write_record(["keyword", "day", "count"])
        .map_err(|e| Error::Input(e.to_string()))?;
    for k in 0..split.trends.keywords() {
        for day in 0..split.trends.days() {
            w.write_record([
                split.universe.label(k as u32),
                &day.to_string(),
                &split.trends.count(k as u32, day as u32).to_string(),
            ])
            .map_err(|e| Error::Input(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
