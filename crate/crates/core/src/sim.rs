//! Dynamic encrypted-database replay and leakage emission.
//!
//! The simulator walks the corpus day by day: it adds the day's client
//! documents, applies retention and random deletions, then samples the
//! day's keyword queries from the trend table. During online slots of
//! the observation schedule it records per-query leakage — either the
//! access pattern (aliased file identities) or the file volume pattern
//! (a multiset of sizes). File aliases are remapped freshly at the start
//! of every round, so alias namespaces of different rounds never
//! intersect.
//!
//! The attacker's auxiliary knowledge is built in the same pass from the
//! attacker half of the corpus, which mirrors additions and retention
//! deletions but not the client's random deletions.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSplit;
use crate::linalg::{BitMat, Mat};
use crate::{Error, Result};

/// Mixes a master seed with a stream tag (SplitMix64 finalizer), so the
/// per-purpose random streams of one experiment stay independent.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Which leakage the attacker observes per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageMode {
    /// Access pattern: aliased identities of the responded files.
    Ap,
    /// File volume pattern: multiset of responded file sizes.
    Fvp,
}

/// The (η, σ, ς) round structure: for each of the η rounds, the number
/// of online observation days followed by offline days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSchedule {
    online: Vec<u32>,
    offline: Vec<u32>,
}

impl ObservationSchedule {
    pub fn new(online: Vec<u32>, offline: Vec<u32>) -> Result<Self> {
        if online.is_empty() || online.len() != offline.len() {
            return Err(Error::config(
                "schedule needs matching, non-empty online/offline vectors",
            ));
        }
        if online.iter().any(|&s| s == 0) {
            return Err(Error::config("every round needs at least one online day"));
        }
        Ok(ObservationSchedule { online, offline })
    }

    /// `rounds` identical rounds of `online` observation days and
    /// `offline` gap days.
    pub fn uniform(rounds: usize, online: u32, offline: u32) -> Result<Self> {
        Self::new(vec![online; rounds], vec![offline; rounds])
    }

    pub fn rounds(&self) -> usize {
        self.online.len()
    }

    /// τ: total number of observed time slots.
    pub fn observed_slots(&self) -> usize {
        self.online.iter().map(|&s| s as usize).sum()
    }

    pub fn horizon_days(&self) -> u32 {
        self.online.iter().sum::<u32>() + self.offline.iter().sum::<u32>()
    }

    pub fn online_days(&self) -> &[u32] {
        &self.online
    }

    /// Observed slots belonging to round `x`, as a global slot range.
    pub fn round_slots(&self, round: usize) -> std::ops::Range<usize> {
        let start: usize = self.online[..round].iter().map(|&s| s as usize).sum();
        start..start + self.online[round] as usize
    }

    /// For each simulated day: `Some((round, slot))` when the day is an
    /// online observation day, `None` when offline.
    fn day_plan(&self) -> Vec<Option<(usize, usize)>> {
        let mut plan = Vec::with_capacity(self.horizon_days() as usize);
        let mut slot = 0;
        for r in 0..self.rounds() {
            for _ in 0..self.online[r] {
                plan.push(Some((r, slot)));
                slot += 1;
            }
            for _ in 0..self.offline[r] {
                plan.push(None);
            }
        }
        plan
    }
}

/// One observed query: position in the trace plus an opaque handle.
/// The underlying keyword lives in [`GroundTruth`], not here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEvent {
    pub round: u32,
    /// Global observed-slot index in `0..τ`.
    pub slot: u32,
    pub query_ref: u64,
}

/// Leakage of one query in the configured mode; element vectors are
/// sorted (for sizes: a sorted multiset).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Response {
    Aliases(Vec<u64>),
    Sizes(Vec<u64>),
}

impl Response {
    /// Volume pattern: number of responded files.
    pub fn volume(&self) -> usize {
        match self {
            Response::Aliases(v) => v.len(),
            Response::Sizes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.volume() == 0
    }
}

/// Per-round observed queries and their leakage, index-aligned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLeakage {
    pub queries: Vec<QueryEvent>,
    pub responses: Vec<Response>,
}

/// Everything the attacker observes across all rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageTrace {
    pub mode: LeakageMode,
    pub schedule: ObservationSchedule,
    pub rounds: Vec<RoundLeakage>,
    /// Client database size per observed slot.
    pub n_db: Vec<u64>,
    /// Observed query count per slot.
    pub rho: Vec<u64>,
}

impl LeakageTrace {
    pub fn total_queries(&self) -> usize {
        self.rounds.iter().map(|r| r.queries.len()).sum()
    }

    /// Debug/replay dump: one JSON record per query.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for round in &self.rounds {
            for (q, resp) in round.queries.iter().zip(&round.responses) {
                let rec = match resp {
                    Response::Aliases(a) => serde_json::json!({
                        "round": q.round, "slot": q.slot, "aliases": a,
                    }),
                    Response::Sizes(s) => serde_json::json!({
                        "round": q.round, "slot": q.slot, "sizes": s,
                    }),
                };
                writeln!(out, "{rec}")?;
            }
        }
        Ok(())
    }
}

/// Ground truth for evaluation only: the true keyword behind every
/// query. Attack code never takes this type as input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per round, per query (aligned with `RoundLeakage.queries`).
    pub keywords: Vec<Vec<u32>>,
    /// True size behind every emitted alias (AP mode only); used by
    /// consistency checks.
    pub alias_sizes: BTreeMap<u64, u64>,
}

impl GroundTruth {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for (round, kws) in self.keywords.iter().enumerate() {
            for (idx, kw) in kws.iter().enumerate() {
                writeln!(
                    out,
                    "{}",
                    serde_json::json!({"round": round, "query": idx, "keyword": kw})
                )?;
            }
        }
        Ok(())
    }
}

/// Auxiliary knowledge built from the attacker half of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerKnowledge {
    /// τ x |W| raw trend counts per slot (the public search frequency).
    pub freq: Mat,
    /// τ x |W| per-slot keyword volumes in the attacker's dataset.
    pub volume: Mat,
    /// Per round: |W| x columns index matrix of the attacker's dataset
    /// (columns are its own documents, or distinct sizes in FVP mode).
    pub index: Vec<BitMat>,
    /// Attacker dataset size per observed slot.
    pub n_aux: Vec<u64>,
}

/// Obfuscation parameters: true pairs are kept with probability `tpr`,
/// false pairs are added with probability `fpr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationConfig {
    pub tpr: f64,
    pub fpr: f64,
}

/// At most one countermeasure is active per experiment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountermeasureConfig {
    pub padding_k: Option<u64>,
    pub obf: Option<ObfuscationConfig>,
}

impl CountermeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.padding_k.is_some() && self.obf.is_some() {
            return Err(Error::config(
                "padding and obfuscation cannot both be active",
            ));
        }
        if let Some(k) = self.padding_k {
            if k == 0 {
                return Err(Error::config("padding multiple k must be >= 1"));
            }
        }
        if let Some(o) = self.obf {
            for p in [o.tpr, o.fpr] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config("obfuscation probabilities must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Query workload: fixed number of queries per online day, sampled
/// proportionally to the day's trend counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub queries_per_day: u32,
    pub mode: LeakageMode,
}

/// Client update behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Documents older than this many days are deleted.
    pub retention_days: u32,
    /// Fraction of the day's newly added count deleted again at random.
    pub random_delete_frac: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            retention_days: 365,
            random_delete_frac: 0.10,
        }
    }
}

/// Pads `size` up to the next multiple of `k`.
pub fn pad_size(size: u64, k: u64) -> Result<u64> {
    if k == 0 {
        return Err(Error::config("padding multiple k must be >= 1"));
    }
    Ok(size.div_ceil(k) * k)
}

/// Pads every size in an FVP trace to a multiple of `k`; AP traces are
/// returned unchanged (padding does not touch identities).
pub fn pad_trace(trace: &LeakageTrace, k: u64) -> Result<LeakageTrace> {
    let mut out = trace.clone();
    for round in &mut out.rounds {
        for resp in &mut round.responses {
            if let Response::Sizes(sizes) = resp {
                for s in sizes.iter_mut() {
                    *s = pad_size(*s, k)?;
                }
                sizes.sort_unstable();
            }
        }
    }
    Ok(out)
}

/// Independent per-pair Bernoulli obfuscation of a binary
/// keyword-by-document relation: true pairs survive with probability
/// `tpr`, false pairs appear with probability `fpr`.
pub fn apply_obfuscation(relation: &BitMat, tpr: f64, fpr: f64, seed: u64) -> Result<BitMat> {
    for p in [tpr, fpr] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config("obfuscation probabilities must lie in [0, 1]"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BitMat::zeros(relation.rows(), relation.cols());
    for r in 0..relation.rows() {
        for c in 0..relation.cols() {
            let keep = if relation.get(r, c) {
                rng.gen::<f64>() < tpr
            } else {
                rng.gen::<f64>() < fpr
            };
            out.set(r, c, keep);
        }
    }
    Ok(out)
}

/// One half of the corpus as a mutable database: append-only postings
/// plus alive flags, with an optional obfuscated view of the index.
struct DbState {
    alive: Vec<bool>,
    add_day: Vec<u32>,
    sizes: Vec<u64>,
    keywords: Vec<Vec<u32>>,
    postings: Vec<Vec<usize>>,
    live: usize,
    retention_queue: VecDeque<usize>,
    obf_postings: Option<Vec<Vec<usize>>>,
    obf_rebuild_day: u32,
}

impl DbState {
    fn new(universe: usize) -> Self {
        DbState {
            alive: Vec::new(),
            add_day: Vec::new(),
            sizes: Vec::new(),
            keywords: Vec::new(),
            postings: vec![Vec::new(); universe],
            live: 0,
            retention_queue: VecDeque::new(),
            obf_postings: None,
            obf_rebuild_day: 0,
        }
    }

    fn add(&mut self, size: u64, keywords: &[u32], day: u32) -> usize {
        let handle = self.alive.len();
        self.alive.push(true);
        self.add_day.push(day);
        self.sizes.push(size);
        self.keywords.push(keywords.to_vec());
        for &k in keywords {
            self.postings[k as usize].push(handle);
        }
        self.live += 1;
        self.retention_queue.push_back(handle);
        handle
    }

    fn delete(&mut self, handle: usize) {
        if self.alive[handle] {
            self.alive[handle] = false;
            self.live -= 1;
        }
    }

    fn retention_sweep(&mut self, day: u32, retention_days: u32) {
        while let Some(&front) = self.retention_queue.front() {
            if self.add_day[front] + retention_days <= day {
                self.retention_queue.pop_front();
                self.delete(front);
            } else {
                break;
            }
        }
    }

    fn live_handles(&self) -> Vec<usize> {
        (0..self.alive.len()).filter(|&h| self.alive[h]).collect()
    }

    /// Live response of keyword `k` under the current (possibly
    /// obfuscated) index. Documents added after the last rebuild are
    /// served by their true postings.
    fn response(&self, k: u32) -> Vec<usize> {
        match &self.obf_postings {
            None => self.postings[k as usize]
                .iter()
                .copied()
                .filter(|&h| self.alive[h])
                .collect(),
            Some(obf) => {
                let mut out: Vec<usize> = obf[k as usize]
                    .iter()
                    .copied()
                    .filter(|&h| self.alive[h])
                    .collect();
                out.extend(
                    self.postings[k as usize]
                        .iter()
                        .copied()
                        .filter(|&h| self.alive[h] && self.add_day[h] > self.obf_rebuild_day),
                );
                out.sort_unstable();
                out
            }
        }
    }

    fn response_count(&self, k: u32) -> usize {
        match &self.obf_postings {
            None => self.postings[k as usize]
                .iter()
                .filter(|&&h| self.alive[h])
                .count(),
            Some(_) => self.response(k).len(),
        }
    }

    /// Resamples the obfuscated index over the currently live documents.
    fn rebuild_obfuscated(&mut self, cfg: &ObfuscationConfig, day: u32, rng: &mut ChaCha8Rng) {
        let n_kw = self.postings.len();
        let mut member = vec![false; self.alive.len()];
        let mut obf: Vec<Vec<usize>> = Vec::with_capacity(n_kw);
        let live = self.live_handles();
        for k in 0..n_kw {
            for &h in &self.postings[k] {
                member[h] = true;
            }
            let mut kept = Vec::new();
            for &h in &live {
                let keep = if member[h] {
                    rng.gen::<f64>() < cfg.tpr
                } else {
                    rng.gen::<f64>() < cfg.fpr
                };
                if keep {
                    kept.push(h);
                }
            }
            for &h in &self.postings[k] {
                member[h] = false;
            }
            obf.push(kept);
        }
        self.obf_postings = Some(obf);
        self.obf_rebuild_day = day;
    }
}

/// Runs the full client/attacker simulation and returns the leakage
/// trace, the attacker's auxiliary knowledge, and (separately) the
/// ground truth for scoring.
pub fn simulate(
    split: &CorpusSplit,
    schedule: &ObservationSchedule,
    workload: &WorkloadConfig,
    cm: &CountermeasureConfig,
    params: &SimParams,
    seed: u64,
) -> Result<(LeakageTrace, AttackerKnowledge, GroundTruth)> {
    cm.validate()?;
    let universe = split.universe.len();
    if universe == 0 {
        return Err(Error::config("empty keyword universe"));
    }
    if workload.queries_per_day == 0 {
        return Err(Error::config("queries_per_day must be positive"));
    }
    let horizon = schedule.horizon_days();
    let corpus_span = split.day_span().max(split.trends.days() as u32);
    if horizon > corpus_span {
        return Err(Error::config(format!(
            "schedule horizon {horizon} exceeds corpus day span {corpus_span}"
        )));
    }

    let tau = schedule.observed_slots();
    let mut rng_queries = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut rng_delete = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut rng_obf_client = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut rng_obf_attacker = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));

    // Documents grouped by add day; scheduled deletions by day.
    let mut client_adds: BTreeMap<u32, Vec<&crate::corpus::Document>> = BTreeMap::new();
    for d in &split.client_docs {
        client_adds.entry(d.add_slot).or_default().push(d);
    }
    let mut attacker_adds: BTreeMap<u32, Vec<&crate::corpus::Document>> = BTreeMap::new();
    for d in &split.attacker_docs {
        attacker_adds.entry(d.add_slot).or_default().push(d);
    }

    let mut client = DbState::new(universe);
    let mut attacker = DbState::new(universe);
    let mut client_scheduled: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut attacker_scheduled: BTreeMap<u32, Vec<usize>> = BTreeMap::new();

    let plan = schedule.day_plan();
    let mut rounds: Vec<RoundLeakage> = (0..schedule.rounds())
        .map(|_| RoundLeakage {
            queries: Vec::new(),
            responses: Vec::new(),
        })
        .collect();
    let mut truth_keywords: Vec<Vec<u32>> = vec![Vec::new(); schedule.rounds()];
    let mut alias_sizes: BTreeMap<u64, u64> = BTreeMap::new();
    let mut n_db = vec![0u64; tau];
    let mut rho = vec![0u64; tau];
    let mut freq = Mat::zeros(tau, universe);
    let mut volume = Mat::zeros(tau, universe);
    let mut n_aux = vec![0u64; tau];
    let mut aux_index: Vec<BitMat> = Vec::with_capacity(schedule.rounds());

    let mut query_ref = 0u64;
    let mut alias_map: HashMap<usize, u64> = HashMap::new();
    let mut alias_next = 0u64;
    let mut current_round = usize::MAX;

    // Weights reused across days to avoid reallocation.
    let mut weights = vec![0.0f64; universe];
    let mut cumulative = vec![0.0f64; universe];

    for (day_idx, &observed) in plan.iter().enumerate() {
        let day = day_idx as u32;

        // Additions, then retention, scheduled and random deletions,
        // then (on round boundaries) index rebuilds; queries see the
        // day's final state.
        let mut newly_added = 0usize;
        if let Some(docs) = client_adds.get(&day) {
            for d in docs {
                let h = client.add(d.size, &d.keywords, day);
                if let Some(del) = d.delete_slot {
                    client_scheduled.entry(del).or_default().push(h);
                }
                newly_added += 1;
            }
        }
        if let Some(docs) = attacker_adds.get(&day) {
            for d in docs {
                let h = attacker.add(d.size, &d.keywords, day);
                if let Some(del) = d.delete_slot {
                    attacker_scheduled.entry(del).or_default().push(h);
                }
            }
        }
        client.retention_sweep(day, params.retention_days);
        attacker.retention_sweep(day, params.retention_days);
        if let Some(handles) = client_scheduled.remove(&day) {
            for h in handles {
                client.delete(h);
            }
        }
        if let Some(handles) = attacker_scheduled.remove(&day) {
            for h in handles {
                attacker.delete(h);
            }
        }
        let n_random = (params.random_delete_frac * newly_added as f64).floor() as usize;
        if n_random > 0 && client.live > 0 {
            let live = client.live_handles();
            let take = n_random.min(live.len());
            let picks = rand::seq::index::sample(&mut rng_delete, live.len(), take);
            for i in picks.iter() {
                client.delete(live[i]);
            }
        }

        let (round, slot) = match observed {
            Some(rs) => rs,
            None => continue,
        };

        // Round boundary: fresh alias namespace, index rebuilds under
        // obfuscation (once per offline period).
        if round != current_round {
            current_round = round;
            alias_map.clear();
            if let Some(obf) = &cm.obf {
                client.rebuild_obfuscated(obf, day, &mut rng_obf_client);
                attacker.rebuild_obfuscated(obf, day, &mut rng_obf_attacker);
            }
        }

        // Trend weights of the day; all-zero days fall back to uniform.
        let mut total = 0.0;
        for k in 0..universe {
            let w = split.trends.count(k as u32, day) as f64;
            weights[k] = w;
            total += w;
        }
        if total <= 0.0 {
            weights.iter_mut().for_each(|w| *w = 1.0);
            total = universe as f64;
        }
        let mut acc = 0.0;
        for k in 0..universe {
            acc += weights[k];
            cumulative[k] = acc;
        }

        n_db[slot] = client.live as u64;
        rho[slot] = workload.queries_per_day as u64;
        n_aux[slot] = attacker.live as u64;
        for k in 0..universe {
            freq.set(slot, k, split.trends.count(k as u32, day) as f64);
            volume.set(slot, k, attacker.response_count(k as u32) as f64);
        }

        for _ in 0..workload.queries_per_day {
            let x = rng_queries.gen_range(0.0..total);
            let k = cumulative.partition_point(|&c| c <= x).min(universe - 1) as u32;
            let handles = client.response(k);
            let response = match workload.mode {
                LeakageMode::Ap => {
                    let mut aliases: Vec<u64> = handles
                        .iter()
                        .map(|&h| {
                            *alias_map.entry(h).or_insert_with(|| {
                                let a = ((round as u64) << 40) | alias_next;
                                alias_next += 1;
                                alias_sizes.insert(a, client.sizes[h]);
                                a
                            })
                        })
                        .collect();
                    aliases.sort_unstable();
                    Response::Aliases(aliases)
                }
                LeakageMode::Fvp => {
                    let mut sizes: Vec<u64> = match cm.padding_k {
                        Some(kpad) => handles
                            .iter()
                            .map(|&h| pad_size(client.sizes[h], kpad))
                            .collect::<Result<_>>()?,
                        None => handles.iter().map(|&h| client.sizes[h]).collect(),
                    };
                    sizes.sort_unstable();
                    Response::Sizes(sizes)
                }
            };
            rounds[round].queries.push(QueryEvent {
                round: round as u32,
                slot: slot as u32,
                query_ref,
            });
            rounds[round].responses.push(response);
            truth_keywords[round].push(k);
            query_ref += 1;
        }

        // Snapshot the attacker's index matrix at the end of the
        // round's last online day.
        let is_last_online_of_round = schedule.round_slots(round).end == slot + 1;
        if is_last_online_of_round {
            aux_index.push(attacker_index_matrix(
                &attacker,
                universe,
                workload.mode,
                cm.padding_k,
            )?);
        }
    }

    let trace = LeakageTrace {
        mode: workload.mode,
        schedule: schedule.clone(),
        rounds,
        n_db,
        rho,
    };
    let knowledge = AttackerKnowledge {
        freq,
        volume,
        index: aux_index,
        n_aux,
    };
    let truth = GroundTruth {
        keywords: truth_keywords,
        alias_sizes,
    };
    Ok((trace, knowledge, truth))
}

/// Index matrix of the attacker's live dataset: keywords by documents
/// (AP mode) or keywords by distinct padded sizes (FVP mode).
fn attacker_index_matrix(
    db: &DbState,
    universe: usize,
    mode: LeakageMode,
    padding_k: Option<u64>,
) -> Result<BitMat> {
    let live = db.live_handles();
    match mode {
        LeakageMode::Ap => {
            let col_of: HashMap<usize, usize> =
                live.iter().enumerate().map(|(c, &h)| (h, c)).collect();
            let mut m = BitMat::zeros(universe, live.len());
            for k in 0..universe {
                for h in db.response(k as u32) {
                    if let Some(&c) = col_of.get(&h) {
                        m.set(k, c, true);
                    }
                }
            }
            Ok(m)
        }
        LeakageMode::Fvp => {
            let size_of = |h: usize| -> Result<u64> {
                match padding_k {
                    Some(k) => pad_size(db.sizes[h], k),
                    None => Ok(db.sizes[h]),
                }
            };
            let mut distinct: Vec<u64> = live.iter().map(|&h| size_of(h)).collect::<Result<_>>()?;
            distinct.sort_unstable();
            distinct.dedup();
            let col_of: HashMap<u64, usize> =
                distinct.iter().enumerate().map(|(c, &s)| (s, c)).collect();
            let mut m = BitMat::zeros(universe, distinct.len());
            for k in 0..universe {
                for h in db.response(k as u32) {
                    m.set(k, col_of[&size_of(h)?], true);
                }
            }
            Ok(m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthSpec};

    fn small_split(seed: u64) -> CorpusSplit {
        synthesize_corpus(&SynthSpec {
            n_docs: 400,
            universe_size: 30,
            day_span: 24,
            initial_fraction: 0.5,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn workload(mode: LeakageMode) -> WorkloadConfig {
        WorkloadConfig {
            queries_per_day: 50,
            mode,
        }
    }

    #[test]
    fn single_query_schedule_emits_one_event() {
        let split = small_split(1);
        let schedule = ObservationSchedule::new(vec![1], vec![0]).unwrap();
        let wl = WorkloadConfig {
            queries_per_day: 1,
            mode: LeakageMode::Ap,
        };
        let (trace, _, truth) = simulate(
            &split,
            &schedule,
            &wl,
            &CountermeasureConfig::default(),
            &SimParams::default(),
            3,
        )
        .unwrap();
        assert_eq!(trace.total_queries(), 1);
        assert_eq!(trace.rho, vec![1]);
        assert_eq!(truth.keywords[0].len(), 1);
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let split = small_split(2);
        let schedule = ObservationSchedule::uniform(2, 2, 3).unwrap();
        let run = || {
            simulate(
                &split,
                &schedule,
                &workload(LeakageMode::Fvp),
                &CountermeasureConfig::default(),
                &SimParams::default(),
                77,
            )
            .unwrap()
        };
        let (t1, k1, g1) = run();
        let (t2, k2, g2) = run();
        assert_eq!(t1, t2);
        assert_eq!(k1, k2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn alias_namespaces_are_disjoint_across_rounds() {
        let split = small_split(3);
        let schedule = ObservationSchedule::uniform(2, 1, 2).unwrap();
        let (trace, _, _) = simulate(
            &split,
            &schedule,
            &workload(LeakageMode::Ap),
            &CountermeasureConfig::default(),
            &SimParams {
                retention_days: 365,
                random_delete_frac: 0.0,
            },
            5,
        )
        .unwrap();
        let collect = |r: &RoundLeakage| {
            let mut s = std::collections::HashSet::new();
            for resp in &r.responses {
                if let Response::Aliases(a) = resp {
                    s.extend(a.iter().copied());
                }
            }
            s
        };
        let r0 = collect(&trace.rounds[0]);
        let r1 = collect(&trace.rounds[1]);
        assert!(!r0.is_empty() && !r1.is_empty());
        assert!(r0.is_disjoint(&r1));
    }

    #[test]
    fn ap_volume_matches_fvp_multiset_under_same_seed() {
        // Recording mode does not consume randomness, so the same seed
        // produces the same query stream in both modes.
        let split = small_split(4);
        let schedule = ObservationSchedule::uniform(2, 2, 1).unwrap();
        let run = |mode| {
            simulate(
                &split,
                &schedule,
                &workload(mode),
                &CountermeasureConfig::default(),
                &SimParams::default(),
                11,
            )
            .unwrap()
        };
        let (ap, _, truth) = run(LeakageMode::Ap);
        let (fvp, _, _) = run(LeakageMode::Fvp);
        for (ra, rf) in ap.rounds.iter().zip(&fvp.rounds) {
            for (a, f) in ra.responses.iter().zip(&rf.responses) {
                let (Response::Aliases(al), Response::Sizes(sz)) = (a, f) else {
                    panic!("unexpected response modes");
                };
                let mut from_ap: Vec<u64> =
                    al.iter().map(|alias| truth.alias_sizes[alias]).collect();
                from_ap.sort_unstable();
                assert_eq!(&from_ap, sz);
            }
        }
    }

    #[test]
    fn n_db_counts_live_documents() {
        let split = small_split(6);
        let schedule = ObservationSchedule::uniform(3, 1, 3).unwrap();
        let (trace, _, _) = simulate(
            &split,
            &schedule,
            &workload(LeakageMode::Ap),
            &CountermeasureConfig::default(),
            &SimParams {
                retention_days: 6,
                random_delete_frac: 0.25,
            },
            9,
        )
        .unwrap();
        assert_eq!(trace.n_db.len(), 3);
        assert!(trace.n_db.iter().all(|&n| n > 0));
        // Retention caps the database at 6 days of additions.
        let per_day = split.client_docs.len();
        assert!(trace.n_db.iter().all(|&n| (n as usize) < per_day));
    }

    #[test]
    fn padding_rounds_sizes_up() {
        assert_eq!(pad_size(3, 100).unwrap(), 100);
        assert_eq!(pad_size(5, 100).unwrap(), 100);
        assert_eq!(pad_size(200, 100).unwrap(), 200);
        assert_eq!(pad_size(7, 1).unwrap(), 7);
        assert!(pad_size(7, 0).is_err());
    }

    #[test]
    fn padding_never_increases_distinct_size_count() {
        let split = small_split(8);
        let schedule = ObservationSchedule::uniform(1, 2, 0).unwrap();
        let run = |k: Option<u64>| {
            let (t, _, _) = simulate(
                &split,
                &schedule,
                &workload(LeakageMode::Fvp),
                &CountermeasureConfig {
                    padding_k: k,
                    obf: None,
                },
                &SimParams::default(),
                13,
            )
            .unwrap();
            let mut distinct = std::collections::HashSet::new();
            for r in &t.rounds {
                for resp in &r.responses {
                    if let Response::Sizes(s) = resp {
                        distinct.extend(s.iter().copied());
                    }
                }
            }
            distinct.len()
        };
        let raw = run(None);
        let padded = run(Some(500));
        assert!(padded <= raw, "padded {padded} > raw {raw}");
    }

    #[test]
    fn obfuscation_identity_and_empty_extremes() {
        let mut rel = BitMat::zeros(4, 9);
        for (r, c) in [(0, 1), (1, 3), (2, 8), (3, 0), (3, 4)] {
            rel.set(r, c, true);
        }
        let same = apply_obfuscation(&rel, 1.0, 0.0, 42).unwrap();
        assert_eq!(same, rel);
        let empty = apply_obfuscation(&rel, 0.0, 0.0, 42).unwrap();
        assert_eq!(empty, BitMat::zeros(4, 9));
        assert!(apply_obfuscation(&rel, 1.2, 0.0, 0).is_err());
    }

    #[test]
    fn obfuscation_false_pair_rate_is_close_to_fpr() {
        // Monte-Carlo over seeds: the added fraction of false pairs
        // concentrates around fpr (binomial, 200x2000 relation).
        let rel = {
            let mut m = BitMat::zeros(200, 2000);
            for r in 0..200 {
                for c in 0..20 {
                    m.set(r, (r * 13 + c * 97) % 2000, true);
                }
            }
            m
        };
        let mut true_pairs = 0u64;
        for r in 0..200 {
            true_pairs += rel.row_count(r) as u64;
        }
        let false_pairs = 200 * 2000 - true_pairs;
        let mut added = 0u64;
        let seeds = 3;
        for seed in 0..seeds {
            let out = apply_obfuscation(&rel, 0.999, 0.01, seed).unwrap();
            for r in 0..200 {
                for c in 0..2000 {
                    if out.get(r, c) && !rel.get(r, c) {
                        added += 1;
                    }
                }
            }
        }
        let rate = added as f64 / (false_pairs * seeds) as f64;
        assert!((rate - 0.01).abs() < 0.005, "added-pair rate {rate}");
    }

    #[test]
    fn rejects_bad_configs() {
        let split = small_split(1);
        let schedule = ObservationSchedule::uniform(1, 1, 0).unwrap();
        let bad_wl = WorkloadConfig {
            queries_per_day: 0,
            mode: LeakageMode::Ap,
        };
        assert!(simulate(
            &split,
            &schedule,
            &bad_wl,
            &CountermeasureConfig::default(),
            &SimParams::default(),
            0,
        )
        .is_err());
        let both = CountermeasureConfig {
            padding_k: Some(100),
            obf: Some(ObfuscationConfig { tpr: 0.9, fpr: 0.1 }),
        };
        assert!(both.validate().is_err());
        // Horizon longer than the corpus span.
        let long = ObservationSchedule::uniform(10, 2, 20).unwrap();
        assert!(simulate(
            &split,
            &long,
            &workload(LeakageMode::Ap),
            &CountermeasureConfig::default(),
            &SimParams::default(),
            0,
        )
        .is_err());
    }
}
