//! Query recovery: assembling per-group frequency, volume and
//! co-occurrence evidence from the inferred search pattern, and mapping
//! merged groups to keywords.
//!
//! Three instantiations share the evidence interface:
//!
//! * `sap_plus` — per-slot maximum-likelihood costs over frequency and
//!   volume, solved by one Hungarian assignment,
//! * `jigsaw_plus` — recovers the most distinctive groups first, confirms
//!   them through co-occurrence, then extends the matching iteratively,
//! * `ihop_plus` — the full iterative QAP over round-wise co-occurrence
//!   plus per-slot frequency/volume linear costs.

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, iterative_qap, QapInstance, QuadComponent};
use crate::linalg::{BitMat, Mat};
use crate::search_pattern::{build_index_matrices, Group, MergedGroupSet, RoundGroups};
use crate::sim::{AttackerKnowledge, GroundTruth, LeakageTrace};
use crate::{Error, Result};

/// Observation-side evidence per merged group: τ x |M| frequency and
/// volume matrices, per-round realigned index matrices and their
/// co-occurrence, plus the per-slot query and database counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvidence {
    /// Row-normalized query share per slot (rows with no queries stay
    /// zero).
    pub freq: Mat,
    /// Max response volume per slot and group.
    pub volume: Mat,
    /// Per round: |M| x |F^x| index matrix, zero rows for groups absent
    /// from the round.
    pub index: Vec<BitMat>,
    /// Per round: |M| x |M| co-occurrence of the realigned index.
    pub cooc: Vec<Mat>,
    pub rho: Vec<f64>,
    pub n_db: Vec<f64>,
    /// Observed slot range of each round.
    pub round_slots: Vec<std::ops::Range<usize>>,
}

/// Attacker-side evidence: same shapes over the keyword universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxEvidence {
    /// Row-normalized keyword search frequency per slot.
    pub freq: Mat,
    /// Keyword volume counts per slot.
    pub volume: Mat,
    /// Per round: |W| x |W| co-occurrence of the attacker's index.
    pub cooc: Vec<Mat>,
    /// Column count behind each round's co-occurrence (for smoothing).
    pub index_cols: Vec<usize>,
    pub n_aux: Vec<f64>,
}

impl AuxEvidence {
    pub fn from_knowledge(k: &AttackerKnowledge) -> Self {
        AuxEvidence {
            freq: normalize_rows(&k.freq),
            volume: k.volume.clone(),
            cooc: k.index.iter().map(|m| m.cooccurrence()).collect(),
            index_cols: k.index.iter().map(|m| m.cols()).collect(),
            n_aux: k.n_aux.iter().map(|&n| n as f64).collect(),
        }
    }

    pub fn keywords(&self) -> usize {
        self.freq.cols()
    }
}

/// Parameters of the recovery instantiations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Volume-vs-frequency weight in distances and costs.
    pub alpha: f64,
    /// Co-occurrence-vs-distance weight in iterative scores.
    pub beta: f64,
    pub base_rec: usize,
    pub conf_rec: usize,
    pub ref_speed: usize,
    /// When false, frequency terms are zeroed (volume-only distances).
    pub use_frequency: bool,
    pub qap_iters: u32,
    pub qap_p_free: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            alpha: 0.5,
            beta: 0.9,
            base_rec: 25,
            conf_rec: 10,
            ref_speed: 10,
            use_frequency: true,
            qap_iters: 30,
            qap_p_free: 0.25,
        }
    }
}

impl RecoveryConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("alpha and beta must lie in [0, 1]"));
        }
        if self.base_rec == 0 || self.conf_rec == 0 || self.ref_speed == 0 {
            return Err(Error::config("BaseRec, ConfRec and RefSpeed must be positive"));
        }
        if self.conf_rec > self.base_rec {
            return Err(Error::config("ConfRec must not exceed BaseRec"));
        }
        Ok(())
    }
}

/// Keyword assigned to each merged group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub mapping: Vec<u32>,
}

fn normalize_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
    out
}

/// Assembles the per-group evidence for a merged group set.
pub fn build_evidence(
    m: &MergedGroupSet,
    rounds: &[RoundGroups],
    trace: &LeakageTrace,
) -> GroupEvidence {
    let tau = trace.schedule.observed_slots();
    let n_groups = m.len();
    let mut freq = Mat::zeros(tau, n_groups);
    let mut volume = Mat::zeros(tau, n_groups);
    let mut index: Vec<BitMat> = rounds
        .iter()
        .map(|r| BitMat::zeros(n_groups, r.matrices.id.cols()))
        .collect();

    for (mid, parts) in m.groups.iter().enumerate() {
        for &(round, gi) in parts {
            let r = round as usize;
            let group = &rounds[r].groups[gi as usize];
            for &qi in &group.members {
                let q = &trace.rounds[r].queries[qi as usize];
                let slot = q.slot as usize;
                freq.set(slot, mid, freq.get(slot, mid) + 1.0);
                let vol = trace.rounds[r].responses[qi as usize].volume() as f64;
                if vol > volume.get(slot, mid) {
                    volume.set(slot, mid, vol);
                }
            }
            index[r].copy_row_from(mid, &rounds[r].matrices.id, gi as usize);
        }
    }

    let cooc = index.iter().map(|m| m.cooccurrence()).collect();
    GroupEvidence {
        freq: normalize_rows(&freq),
        volume,
        index,
        cooc,
        rho: trace.rho.iter().map(|&r| r as f64).collect(),
        n_db: trace.n_db.iter().map(|&n| n as f64).collect(),
        round_slots: (0..trace.schedule.rounds())
            .map(|x| trace.schedule.round_slots(x))
            .collect(),
    }
}

/// Smoothing bound for probabilities entering logarithms.
fn log_eps(ev: &GroupEvidence) -> f64 {
    let max_db = ev.n_db.iter().cloned().fold(1.0, f64::max);
    1.0 / (2.0 * max_db)
}

/// Frequency cost: `C_f[j][i] = -Σ_k ρ[k] · f_r^k[j] · ln f_s^k[i]`
/// (rows are groups, columns keywords).
fn frequency_cost(ev: &GroupEvidence, aux: &AuxEvidence, eps: f64) -> Mat {
    let (n, w) = (ev.freq.cols(), aux.freq.cols());
    let tau = ev.rho.len();
    let log_fs = aux.freq.map(|p| p.clamp(eps, 1.0 - eps).ln());
    let mut cost = Mat::zeros(n, w);
    for k in 0..tau {
        let rho = ev.rho[k];
        if rho == 0.0 {
            continue;
        }
        for j in 0..n {
            let f = ev.freq.get(k, j);
            if f == 0.0 {
                continue;
            }
            let row = cost.row_mut(j);
            let ls = log_fs.row(k);
            for i in 0..w {
                row[i] -= rho * f * ls[i];
            }
        }
    }
    cost
}

/// Volume cost: per-slot binomial log-likelihood of observing the
/// group's volume share under the keyword's inclusion probability.
fn volume_cost(ev: &GroupEvidence, aux: &AuxEvidence, eps: f64) -> Mat {
    let (n, w) = (ev.volume.cols(), aux.volume.cols());
    let tau = ev.rho.len();
    let mut cost = Mat::zeros(n, w);
    let clamp = |p: f64| p.clamp(eps, 1.0 - eps);
    for k in 0..tau {
        let n_db = ev.n_db[k].max(1.0);
        let n_aux = aux.n_aux[k].max(1.0);
        // Precompute the keyword-side logs for the slot.
        let mut log_vs = vec![0.0; w];
        let mut log_vs_compl = vec![0.0; w];
        for (i, (lv, lvc)) in log_vs.iter_mut().zip(log_vs_compl.iter_mut()).enumerate() {
            let vs = clamp(aux.volume.get(k, i) / n_aux);
            *lv = vs.ln();
            *lvc = (1.0 - vs).ln();
        }
        for j in 0..n {
            let vr = ev.volume.get(k, j) / n_db;
            let row = cost.row_mut(j);
            for i in 0..w {
                row[i] -= n_db * (vr * log_vs[i] + (1.0 - vr) * log_vs_compl[i]);
            }
        }
    }
    cost
}

/// The two Sap-style cost matrices (rows are groups, columns keywords):
/// per-slot frequency log-likelihood and per-slot volume binomial
/// log-likelihood.
pub fn sap_cost_matrices(ev: &GroupEvidence, aux: &AuxEvidence) -> Result<(Mat, Mat)> {
    let n = ev.freq.cols();
    let w = aux.keywords();
    if n > w {
        return Err(Error::config(format!(
            "{n} groups cannot map injectively into {w} keywords"
        )));
    }
    let eps = log_eps(ev);
    Ok((frequency_cost(ev, aux, eps), volume_cost(ev, aux, eps)))
}

/// Sap-style recovery: Hungarian over `α·C_f + (1-α)·C_v`.
pub fn sap_plus(
    ev: &GroupEvidence,
    aux: &AuxEvidence,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    let (cf, cv) = sap_cost_matrices(ev, aux)?;
    let (n, w) = (cf.rows(), cf.cols());
    let mut cost = Mat::zeros(n, w);
    for j in 0..n {
        for i in 0..w {
            cost.set(
                j,
                i,
                cfg.alpha * cf.get(j, i) + (1.0 - cfg.alpha) * cv.get(j, i),
            );
        }
    }
    let solution = hungarian(&cost)?;
    Ok(RecoveryResult {
        mapping: solution.mapping.iter().map(|&c| c as u32).collect(),
    })
}

/// Normalized per-slot volume and frequency views used by the Jigsaw
/// distances.
struct JigsawViews {
    vr: Mat,
    vs: Mat,
    fr: Mat,
    fs: Mat,
}

impl JigsawViews {
    fn new(ev: &GroupEvidence, aux: &AuxEvidence, cfg: &RecoveryConfig) -> Self {
        let tau = ev.rho.len();
        let mut vr = ev.volume.clone();
        for k in 0..tau {
            let n_db = ev.n_db[k].max(1.0);
            vr.row_mut(k).iter_mut().for_each(|v| *v /= n_db);
        }
        let mut vs = aux.volume.clone();
        for k in 0..tau {
            let n_aux = aux.n_aux[k].max(1.0);
            vs.row_mut(k).iter_mut().for_each(|v| *v /= n_aux);
        }
        let zero_if_off = |m: &Mat| {
            if cfg.use_frequency {
                m.clone()
            } else {
                Mat::zeros(m.rows(), m.cols())
            }
        };
        JigsawViews {
            vr,
            vs,
            fr: zero_if_off(&ev.freq),
            fs: zero_if_off(&aux.freq),
        }
    }

    /// Distance between group `i` and keyword `j`, summed over slots.
    fn s(&self, i: usize, j: usize, alpha: f64) -> f64 {
        let tau = self.vr.rows();
        let mut d = 0.0;
        for k in 0..tau {
            d += alpha * (self.vr.get(k, i) - self.vs.get(k, j)).abs()
                + (1.0 - alpha) * (self.fr.get(k, i) - self.fs.get(k, j)).abs();
        }
        d
    }

    /// Differential distance of group `i`: distance to its nearest
    /// other group.
    fn differential(&self, i: usize, alpha: f64) -> f64 {
        let n = self.vr.cols();
        let tau = self.vr.rows();
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut d = 0.0;
            for k in 0..tau {
                d += alpha * (self.vr.get(k, i) - self.vr.get(k, j)).abs()
                    + (1.0 - alpha) * (self.fr.get(k, i) - self.fr.get(k, j)).abs();
            }
            if d < best {
                best = d;
            }
        }
        best
    }
}

/// Euclidean distance between the co-occurrence row of group `g`
/// restricted to the matched groups and the row of keyword `w`
/// restricted to their keywords, summed over rounds.
fn cooc_distance(
    ev: &GroupEvidence,
    aux: &AuxEvidence,
    g: usize,
    w: usize,
    matched: &[(usize, usize)],
) -> f64 {
    let mut total = 0.0;
    for (cr, cs) in ev.cooc.iter().zip(&aux.cooc) {
        let mut sq = 0.0;
        for &(mg, mw) in matched {
            let d = cr.get(g, mg) - cs.get(w, mw);
            sq += d * d;
        }
        total += sq.sqrt();
    }
    total
}

/// Relative variant of [`cooc_distance`]: per round, the row distance is
/// normalized by the larger row norm, so the agreement of high-volume
/// anchors is judged by relative rather than absolute drift.
fn cooc_distance_rel(
    ev: &GroupEvidence,
    aux: &AuxEvidence,
    g: usize,
    w: usize,
    matched: &[(usize, usize)],
) -> f64 {
    let mut total = 0.0;
    for (cr, cs) in ev.cooc.iter().zip(&aux.cooc) {
        let (mut sq, mut na, mut nb) = (0.0, 0.0, 0.0);
        for &(mg, mw) in matched {
            let a = cr.get(g, mg);
            let b = cs.get(w, mw);
            sq += (a - b) * (a - b);
            na += a * a;
            nb += b * b;
        }
        total += sq.sqrt() / na.max(nb).sqrt().max(1e-12);
    }
    total
}

/// Jigsaw-style recovery: distinctive groups first, co-occurrence
/// confirmation, then certainty-ordered iterative extension.
pub fn jigsaw_plus(
    ev: &GroupEvidence,
    aux: &AuxEvidence,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    let n = ev.freq.cols();
    let w = aux.keywords();
    if n > w {
        return Err(Error::config(format!(
            "{n} groups cannot map injectively into {w} keywords"
        )));
    }
    if n == 0 {
        return Ok(RecoveryResult { mapping: vec![] });
    }
    let views = JigsawViews::new(ev, aux, cfg);
    let mut s = Mat::zeros(n, w);
    for i in 0..n {
        for j in 0..w {
            s.set(i, j, views.s(i, j, cfg.alpha));
        }
    }

    let mut assigned: Vec<Option<u32>> = vec![None; n];
    let mut keyword_taken = vec![false; w];

    if n == 1 {
        let best = argmin_free(s.row(0), &keyword_taken).expect("some keyword");
        return Ok(RecoveryResult {
            mapping: vec![best as u32],
        });
    }

    // Base step: the BaseRec most distinctive groups, each matched to
    // the keyword minimizing s. Resolved jointly (Hungarian over the
    // distinctive rows) so two groups never claim the same keyword.
    let base_rec = if cfg.base_rec > n {
        log::warn!("BaseRec {} exceeds {} groups; clamping", cfg.base_rec, n);
        n
    } else {
        cfg.base_rec
    };
    let mut by_distinct: Vec<(f64, usize)> = (0..n)
        .map(|i| (views.differential(i, cfg.alpha), i))
        .collect();
    by_distinct.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let distinctive: Vec<usize> = by_distinct.iter().take(base_rec).map(|&(_, g)| g).collect();
    let mut base_cost = Mat::zeros(distinctive.len(), w);
    for (row, &g) in distinctive.iter().enumerate() {
        base_cost.row_mut(row).copy_from_slice(s.row(g));
    }
    let base_assign = hungarian(&base_cost)?;
    let mut base: Vec<(usize, usize)> = Vec::with_capacity(base_rec);
    for (row, &g) in distinctive.iter().enumerate() {
        let kw = base_assign.mapping[row];
        keyword_taken[kw] = true;
        base.push((g, kw));
    }

    // Confirmation: keep the ConfRec base matches whose co-occurrence
    // rows agree best across rounds (relative row distance; absolute
    // distances would favor low-volume anchors regardless of agreement).
    let mut by_conf: Vec<(f64, usize)> = base
        .iter()
        .enumerate()
        .map(|(idx, &(g, kw))| (cooc_distance_rel(ev, aux, g, kw, &base), idx))
        .collect();
    by_conf.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let confirmed: Vec<(usize, usize)> = by_conf
        .iter()
        .take(cfg.conf_rec.min(base.len()))
        .map(|&(_, idx)| base[idx])
        .collect();
    keyword_taken.iter_mut().for_each(|t| *t = false);
    let mut known: Vec<(usize, usize)> = Vec::with_capacity(n);
    for &(g, kw) in &confirmed {
        assigned[g] = Some(kw as u32);
        keyword_taken[kw] = true;
        known.push((g, kw));
    }

    // Iterative extension: score unmatched (group, keyword) pairs by
    // co-occurrence against the known matches mixed with the direct
    // distance; commit the RefSpeed most certain per pass.
    while known.len() < n {
        let unmatched_g: Vec<usize> = (0..n).filter(|&g| assigned[g].is_none()).collect();
        let unmatched_w: Vec<usize> = (0..w).filter(|&k| !keyword_taken[k]).collect();
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(unmatched_g.len());
        for &g in &unmatched_g {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            let mut second = f64::NEG_INFINITY;
            for &kw in &unmatched_w {
                let dist =
                    cfg.beta * cooc_distance(ev, aux, g, kw, &known) + (1.0 - cfg.beta) * s.get(g, kw);
                let score = -dist.max(1e-12).ln();
                if score > best.0 {
                    second = best.0;
                    best = (score, kw);
                } else if score > second {
                    second = score;
                }
            }
            let certainty = if second.is_finite() {
                best.0 - second
            } else {
                f64::INFINITY
            };
            candidates.push((certainty, g, best.1));
        }
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut committed = 0;
        for &(_, g, kw) in &candidates {
            if committed == cfg.ref_speed {
                break;
            }
            if keyword_taken[kw] {
                continue; // claimed by a more certain group this pass
            }
            assigned[g] = Some(kw as u32);
            keyword_taken[kw] = true;
            known.push((g, kw));
            committed += 1;
        }
        debug_assert!(committed > 0, "no progress in jigsaw extension");
    }

    Ok(RecoveryResult {
        mapping: assigned.into_iter().map(|a| a.unwrap()).collect(),
    })
}

fn argmin_free(row: &[f64], taken: &[bool]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (j, &v) in row.iter().enumerate() {
        if taken[j] {
            continue;
        }
        if best.map_or(true, |(b, _)| v < b) {
            best = Some((v, j));
        }
    }
    best.map(|(_, j)| j)
}

/// IHOP-style recovery: iterative QAP whose quadratic terms sum the
/// round-wise co-occurrence log-likelihoods and whose linear cost adds
/// the per-slot frequency term to the per-round volume (diagonal) term.
pub fn ihop_plus(
    ev: &GroupEvidence,
    aux: &AuxEvidence,
    cfg: &RecoveryConfig,
    seed: u64,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    let n = ev.freq.cols();
    let w = aux.keywords();
    if n > w {
        return Err(Error::config(format!(
            "{n} groups cannot map injectively into {w} keywords"
        )));
    }
    let eps = log_eps(ev);
    let mut linear = if cfg.use_frequency {
        frequency_cost(ev, aux, eps)
    } else {
        Mat::zeros(n, w)
    };

    // Per-round database weight: mean n_D over the round's slots.
    let round_weight: Vec<f64> = ev
        .round_slots
        .iter()
        .map(|r| {
            let slots = r.clone();
            let len = slots.len().max(1) as f64;
            slots.map(|s| ev.n_db[s]).sum::<f64>() / len
        })
        .collect();

    let mut quad = Vec::with_capacity(ev.cooc.len());
    for (x, (cr, cs)) in ev.cooc.iter().zip(&aux.cooc).enumerate() {
        let weight = round_weight[x];
        let round_eps = 1.0 / (2.0 * aux.index_cols[x].max(1) as f64);
        // Diagonal (volume-share) terms enter the linear cost.
        let clamp = |p: f64| p.clamp(round_eps, 1.0 - round_eps);
        for j in 0..n {
            let p = cr.get(j, j);
            for i in 0..w {
                let q = clamp(cs.get(i, i));
                let add = -weight * (p * q.ln() + (1.0 - p) * (1.0 - q).ln());
                linear.set(j, i, linear.get(j, i) + add);
            }
        }
        quad.push(QuadComponent {
            obs: cr.clone(),
            aux: cs.clone(),
            weight,
            eps: round_eps,
        });
    }

    let instance = QapInstance {
        quad,
        linear: Some(linear),
        n_iters: cfg.qap_iters,
        p_free: cfg.qap_p_free,
    };
    let solution = iterative_qap(&instance, seed)?;
    Ok(RecoveryResult {
        mapping: solution.mapping.iter().map(|&c| c as u32).collect(),
    })
}

/// Recovery instantiation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instantiation {
    SapPlus,
    JigsawPlus,
    IhopPlus,
}

pub fn run_instantiation(
    which: Instantiation,
    ev: &GroupEvidence,
    aux: &AuxEvidence,
    cfg: &RecoveryConfig,
    seed: u64,
) -> Result<RecoveryResult> {
    match which {
        Instantiation::SapPlus => sap_plus(ev, aux, cfg),
        Instantiation::JigsawPlus => jigsaw_plus(ev, aux, cfg),
        Instantiation::IhopPlus => ihop_plus(ev, aux, cfg, seed),
    }
}

/// Ground-truth search pattern: per-round groups keyed by the true
/// keyword (in first-occurrence order) and their cross-round merge.
/// Used by the with-SP benchmark variants.
pub fn ground_truth_sp(
    trace: &LeakageTrace,
    truth: &GroundTruth,
) -> (Vec<RoundGroups>, MergedGroupSet) {
    let mut rounds: Vec<RoundGroups> = Vec::with_capacity(trace.rounds.len());
    let mut merged: std::collections::BTreeMap<u32, Vec<(u32, u32)>> = Default::default();
    for (x, round) in trace.rounds.iter().enumerate() {
        let mut group_of_kw: std::collections::HashMap<u32, usize> = Default::default();
        let mut groups: Vec<Group> = Vec::new();
        for (qi, &kw) in truth.keywords[x].iter().enumerate() {
            let gi = *group_of_kw.entry(kw).or_insert_with(|| {
                groups.push(Group {
                    round: x as u32,
                    members: Vec::new(),
                });
                merged.entry(kw).or_default().push((x as u32, groups.len() as u32 - 1));
                groups.len() - 1
            });
            groups[gi].members.push(qi as u32);
        }
        let matrices = build_index_matrices(&groups, round);
        rounds.push(RoundGroups { groups, matrices });
    }
    let mut groups: Vec<Vec<(u32, u32)>> = merged.into_values().collect();
    for parts in &mut groups {
        parts.sort_unstable();
    }
    groups.sort_unstable();
    (rounds, MergedGroupSet { groups })
}

/// Benchmark variant: the attacker knows the internal and external
/// search pattern and only runs the recovery step.
pub fn with_sp_variant(
    trace: &LeakageTrace,
    truth: &GroundTruth,
    aux: &AuxEvidence,
    which: Instantiation,
    cfg: &RecoveryConfig,
    seed: u64,
) -> Result<(RecoveryResult, MergedGroupSet, Vec<RoundGroups>)> {
    let (rounds, merged) = ground_truth_sp(trace, truth);
    let ev = build_evidence(&merged, &rounds, trace);
    let result = run_instantiation(which, &ev, aux, cfg, seed)?;
    Ok((result, merged, rounds))
}

/// Flattens a recovery result to one assigned keyword per observed
/// query (trace order), for accuracy scoring.
pub fn per_query_assignment(
    m: &MergedGroupSet,
    rounds: &[RoundGroups],
    result: &RecoveryResult,
) -> Vec<Option<u32>> {
    let group_of = m.group_of_queries(rounds);
    group_of
        .iter()
        .flat_map(|per_round| {
            per_round.iter().map(|&mid| {
                if mid == u32::MAX {
                    None
                } else {
                    result.mapping.get(mid as usize).copied()
                }
            })
        })
        .collect()
}

/// Serializes a recovery result as `group_id,assigned_keyword,
/// true_keyword,correct` CSV rows. The true keyword of a merged group is
/// the majority truth over its queries.
pub fn write_result_csv<W: std::io::Write>(
    out: W,
    m: &MergedGroupSet,
    rounds: &[RoundGroups],
    result: &RecoveryResult,
    truth: &GroundTruth,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group_id", "assigned_keyword", "true_keyword", "correct"])
        .map_err(|e| Error::Input(e.to_string()))?;
    for (mid, parts) in m.groups.iter().enumerate() {
        let mut counts: std::collections::BTreeMap<u32, usize> = Default::default();
        for &(round, gi) in parts {
            for &qi in &rounds[round as usize].groups[gi as usize].members {
                *counts
                    .entry(truth.keywords[round as usize][qi as usize])
                    .or_default() += 1;
            }
        }
        let true_kw = counts
            .iter()
            .max_by_key(|&(kw, c)| (*c, std::cmp::Reverse(*kw)))
            .map(|(&kw, _)| kw)
            .unwrap_or(u32::MAX);
        let assigned = result.mapping[mid];
        w.write_record([
            mid.to_string(),
            assigned.to_string(),
            true_kw.to_string(),
            (assigned == true_kw).to_string(),
        ])
        .map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
