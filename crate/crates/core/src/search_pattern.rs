//! Search-pattern inference from intermittent observations.
//!
//! Within a round, queries are grouped online: each incoming query is
//! compared (response similarity `rsp`) against the most recent query of
//! every existing group and joins the best group above the threshold δ,
//! or opens a new one. Across rounds, groups are matched by their
//! co-occurrence matrices — file identities do not survive the gap
//! between rounds, but the fraction of files two keywords share does —
//! solving a quadratic assignment per round pair and merging matched
//! groups unless the merge would put two same-round groups together.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::assignment::{iterative_qap, QapInstance, QuadComponent};
use crate::linalg::{BitMat, Mat};
use crate::sim::{derive_seed, LeakageTrace, Response, RoundLeakage};
use crate::{Error, Result};

/// Thresholds of the inference: δ for same-keyword similarity, the
/// maximum round distance considered when matching, the fraction of
/// worst matches dropped per round pair, and the parameters of the
/// underlying QAP heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpConfig {
    pub delta: f64,
    pub maxlevel: u32,
    pub p_g: f64,
    pub qap_iters: u32,
    pub qap_p_free: f64,
}

impl Default for SpConfig {
    fn default() -> Self {
        SpConfig {
            delta: 0.95,
            maxlevel: 5,
            p_g: 0.05,
            qap_iters: 30,
            qap_p_free: 0.25,
        }
    }
}

impl SpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::config("delta must lie in (0, 1]"));
        }
        if self.maxlevel == 0 {
            return Err(Error::config("maxlevel must be positive"));
        }
        if !(0.0..1.0).contains(&self.p_g) {
            return Err(Error::config("p_g must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Response similarity in [0, 1]: set Jaccard for access patterns,
/// multiset Jaccard (per-value min over max multiplicities) for file
/// volume patterns. Two empty responses are indistinguishable and score
/// 1; empty versus non-empty scores 0.
pub fn rsp(a: &Response, b: &Response) -> Result<f64> {
    match (a, b) {
        (Response::Aliases(x), Response::Aliases(y)) => Ok(sorted_jaccard(x, y)),
        (Response::Sizes(x), Response::Sizes(y)) => Ok(sorted_jaccard(x, y)),
        _ => Err(Error::input("rsp needs responses of the same leakage mode")),
    }
}

/// Jaccard over sorted element vectors. Works for sets and multisets
/// alike: the intersection advances both cursors on equality, which
/// counts per-value minimum multiplicity, and |a ∪ b| = |a| + |b| − |a ∩ b|
/// counts per-value maximum multiplicity.
fn sorted_jaccard(x: &[u64], y: &[u64]) -> f64 {
    if x.is_empty() && y.is_empty() {
        return 1.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0, 0);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    let union = x.len() + y.len() - inter;
    inter as f64 / union as f64
}

/// 1 iff the two responses look like queries for the same keyword,
/// i.e. `rsp(a, b) >= delta`.
pub fn qeq(a: &Response, b: &Response, delta: f64) -> Result<bool> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::config("delta must lie in (0, 1]"));
    }
    Ok(rsp(a, b)? >= delta)
}

/// A within-round query cluster; members are indices into the round's
/// query list, in observation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub round: u32,
    pub members: Vec<u32>,
}

impl Group {
    pub fn query_refs(&self, round: &RoundLeakage) -> Vec<u64> {
        self.members
            .iter()
            .map(|&i| round.queries[i as usize].query_ref)
            .collect()
    }
}

/// Internal search-pattern inference for one round.
///
/// Each query is compared against the last query of every group; among
/// the groups passing the δ threshold it joins the one with maximal
/// similarity (ties go to the oldest group), otherwise it opens a new
/// group. The output partitions the round's queries.
pub fn infer_isp(round: &RoundLeakage, round_idx: u32, cfg: &SpConfig) -> Result<Vec<Group>> {
    cfg.validate()?;
    let mut groups: Vec<Group> = Vec::new();
    // Cached tail of each group: (query index, volume) for the length
    // pre-filter — Jaccard can never reach δ when the volumes differ by
    // more than a factor 1/δ.
    let mut tails: Vec<(u32, usize)> = Vec::new();
    for (qi, resp) in round.responses.iter().enumerate() {
        let vol = resp.volume();
        let mut best: Option<(f64, usize)> = None;
        for (gi, &(tail_q, tail_vol)) in tails.iter().enumerate() {
            let (lo, hi) = (vol.min(tail_vol), vol.max(tail_vol));
            if (lo as f64) < cfg.delta * hi as f64 {
                continue;
            }
            let r = rsp(resp, &round.responses[tail_q as usize])?;
            if r >= cfg.delta && best.map_or(true, |(b, _)| r > b) {
                best = Some((r, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                groups[gi].members.push(qi as u32);
                tails[gi] = (qi as u32, vol);
            }
            None => {
                groups.push(Group {
                    round: round_idx,
                    members: vec![qi as u32],
                });
                tails.push((qi as u32, vol));
            }
        }
    }
    Ok(groups)
}

/// Per-round binary group-vs-file matrices. Columns are the distinct
/// file aliases (AP) or distinct file sizes (FVP) observed in the
/// round, in first-appearance order; `idh` indexes each group's first
/// query, `idt` its last, and `id` the union over the whole group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundIndexMatrices {
    pub columns: Vec<u64>,
    pub idh: BitMat,
    pub idt: BitMat,
    pub id: BitMat,
}

fn response_elements(resp: &Response) -> &[u64] {
    match resp {
        Response::Aliases(v) => v,
        Response::Sizes(v) => v,
    }
}

/// Builds `F^x`, `IDH`, `IDT` and `ID` for one round's groups.
pub fn build_index_matrices(groups: &[Group], round: &RoundLeakage) -> RoundIndexMatrices {
    let mut columns: Vec<u64> = Vec::new();
    let mut col_of: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    for resp in &round.responses {
        for &e in response_elements(resp) {
            col_of.entry(e).or_insert_with(|| {
                columns.push(e);
                columns.len() - 1
            });
        }
    }
    let n = groups.len();
    let m = columns.len();
    let mut idh = BitMat::zeros(n, m);
    let mut idt = BitMat::zeros(n, m);
    let mut id = BitMat::zeros(n, m);
    for (gi, g) in groups.iter().enumerate() {
        let first = *g.members.first().expect("groups are non-empty") as usize;
        let last = *g.members.last().unwrap() as usize;
        for &e in response_elements(&round.responses[first]) {
            idh.set(gi, col_of[&e], true);
        }
        for &e in response_elements(&round.responses[last]) {
            idt.set(gi, col_of[&e], true);
        }
        for &qi in &g.members {
            for &e in response_elements(&round.responses[qi as usize]) {
                id.set(gi, col_of[&e], true);
            }
        }
    }
    RoundIndexMatrices {
        columns,
        idh,
        idt,
        id,
    }
}

/// Groups and matrices of one analyzed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundGroups {
    pub groups: Vec<Group>,
    pub matrices: RoundIndexMatrices,
}

/// Runs [`infer_isp`] and [`build_index_matrices`] on every round of a
/// trace.
pub fn analyze_rounds(trace: &LeakageTrace, cfg: &SpConfig) -> Result<Vec<RoundGroups>> {
    trace
        .rounds
        .iter()
        .enumerate()
        .map(|(x, round)| {
            let groups = infer_isp(round, x as u32, cfg)?;
            let matrices = build_index_matrices(&groups, round);
            Ok(RoundGroups { groups, matrices })
        })
        .collect()
}

/// Matches the groups of an earlier round against a later one through
/// their co-occurrence matrices (the earlier round contributes its
/// last-query index `IDT`, the later its first-query index `IDH`).
/// Returns (earlier group, later group) pairs, with the worst
/// ⌊p_g·n⌋ matches by co-occurrence distance removed.
pub fn match_rounds(
    earlier: &RoundIndexMatrices,
    later: &RoundIndexMatrices,
    cfg: &SpConfig,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let n1 = earlier.idt.rows();
    let n2 = later.idh.rows();
    if n1 == 0 || n2 == 0 {
        return Ok(Vec::new());
    }

    // Orient so the smaller group set is the assigned (observation)
    // side; on ties the later round is assigned to the earlier.
    let (obs_idx, aux_idx, swapped) = if n1 < n2 {
        (&earlier.idt, &later.idh, false)
    } else {
        (&later.idh, &earlier.idt, true)
    };
    let c_obs = obs_idx.cooccurrence();
    let c_aux = aux_idx.cooccurrence();
    let weight = obs_idx.cols().max(1) as f64;
    let eps = 1.0 / (2.0 * aux_idx.cols().max(1) as f64);

    // Linear cost from the diagonal (self co-occurrence = per-group
    // volume share), quadratic terms from the off-diagonals.
    let n = c_obs.rows();
    let m = c_aux.rows();
    let mut linear = Mat::zeros(n, m);
    let clamp = |p: f64| p.clamp(eps, 1.0 - eps);
    for i in 0..n {
        let p = c_obs.get(i, i);
        for j in 0..m {
            let q = clamp(c_aux.get(j, j));
            linear.set(i, j, -weight * (p * q.ln() + (1.0 - p) * (1.0 - q).ln()));
        }
    }
    let instance = QapInstance {
        quad: vec![QuadComponent {
            obs: c_obs.clone(),
            aux: c_aux.clone(),
            weight,
            eps,
        }],
        linear: Some(linear),
        n_iters: cfg.qap_iters,
        p_free: cfg.qap_p_free,
    };
    let result = iterative_qap(&instance, seed)?;

    // Per-pair error over the matched submatrices: Euclidean distance of
    // the paired rows, normalized by the larger row norm. The relative
    // form keeps high-volume groups (large rows, small relative drift)
    // from outranking junk matches between near-empty rows.
    let mapping = &result.mapping;
    let mut errors: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let (mut sq, mut na, mut nb) = (0.0, 0.0, 0.0);
            for l in 0..n {
                let a = c_obs.get(i, l);
                let b = c_aux.get(mapping[i], mapping[l]);
                sq += (a - b) * (a - b);
                na += a * a;
                nb += b * b;
            }
            (sq.sqrt() / na.max(nb).sqrt().max(1e-12), i)
        })
        .collect();
    errors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let drop = ((cfg.p_g * n as f64).floor() as usize).min(n);
    errors.truncate(n - drop);
    errors.sort_by_key(|&(_, i)| i);

    Ok(errors
        .into_iter()
        .map(|(_, i)| {
            if swapped {
                (mapping[i], i)
            } else {
                (i, mapping[i])
            }
        })
        .collect())
}

/// The inferred external search pattern: a partition of all observed
/// queries into merged groups, each holding at most one group per round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedGroupSet {
    /// Each merged group lists its (round, group index) parts, sorted.
    pub groups: Vec<Vec<(u32, u32)>>,
}

impl MergedGroupSet {
    /// Merged-group id of every query, addressed as (round, query index).
    pub fn group_of_queries(&self, rounds: &[RoundGroups]) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = rounds
            .iter()
            .map(|r| {
                let n: usize = r.groups.iter().map(|g| g.members.len()).sum();
                vec![u32::MAX; n]
            })
            .collect();
        for (mid, parts) in self.groups.iter().enumerate() {
            for &(round, gi) in parts {
                for &qi in &rounds[round as usize].groups[gi as usize].members {
                    out[round as usize][qi as usize] = mid as u32;
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

struct Merger {
    parent: Vec<usize>,
    rounds: Vec<BTreeSet<u32>>,
}

impl Merger {
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Merges the two sets unless they already share a round.
    fn try_union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        if !self.rounds[ra].is_disjoint(&self.rounds[rb]) {
            return false;
        }
        let (big, small) = if self.rounds[ra].len() >= self.rounds[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        let moved = std::mem::take(&mut self.rounds[small]);
        self.rounds[big].extend(moved);
        self.parent[small] = big;
        true
    }
}

/// External search-pattern inference: level-by-level matching of round
/// pairs at distance 1..maxlevel, merging matched groups when the merge
/// does not bring two groups of one round together (a conflicting later
/// match is discarded entirely).
pub fn infer_esp(rounds: &[RoundGroups], cfg: &SpConfig, seed: u64) -> Result<MergedGroupSet> {
    cfg.validate()?;
    let eta = rounds.len();
    let offsets: Vec<usize> = rounds
        .iter()
        .scan(0usize, |acc, r| {
            let start = *acc;
            *acc += r.groups.len();
            Some(start)
        })
        .collect();
    let total: usize = rounds.iter().map(|r| r.groups.len()).sum();
    let mut merger = Merger {
        parent: (0..total).collect(),
        rounds: (0..eta)
            .flat_map(|x| {
                std::iter::repeat_with(move || BTreeSet::from([x as u32]))
                    .take(rounds[x].groups.len())
            })
            .collect(),
    };

    let max_level = (cfg.maxlevel as usize).min(eta.saturating_sub(1));
    for level in 1..=max_level {
        for j in 0..eta - level {
            let pair_seed = derive_seed(seed, ((level as u64) << 32) | j as u64);
            let pairs = match_rounds(
                &rounds[j].matrices,
                &rounds[j + level].matrices,
                cfg,
                pair_seed,
            )?;
            for (g1, g2) in pairs {
                merger.try_union(offsets[j] + g1, offsets[j + level] + g2);
            }
        }
    }

    // Collect the partition in canonical order (by smallest member).
    let mut by_root: std::collections::BTreeMap<usize, Vec<(u32, u32)>> = Default::default();
    for (x, r) in rounds.iter().enumerate() {
        for gi in 0..r.groups.len() {
            let root = merger.find(offsets[x] + gi);
            by_root.entry(root).or_default().push((x as u32, gi as u32));
        }
    }
    let mut groups: Vec<Vec<(u32, u32)>> = by_root.into_values().collect();
    for parts in &mut groups {
        parts.sort_unstable();
    }
    groups.sort_unstable();
    Ok(MergedGroupSet { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ap(v: &[u64]) -> Response {
        let mut s = v.to_vec();
        s.sort_unstable();
        s.dedup();
        Response::Aliases(s)
    }

    fn fvp(v: &[u64]) -> Response {
        let mut s = v.to_vec();
        s.sort_unstable();
        Response::Sizes(s)
    }

    #[test]
    fn multiset_similarity_counts_duplicates() {
        // Intersection {1,2,2} of size 3, union {1,1,2,2} of size 4.
        let x = fvp(&[1, 1, 2, 2]);
        let y = fvp(&[1, 2, 2]);
        assert_eq!(rsp(&x, &y).unwrap(), 0.75);
    }

    #[test]
    fn rsp_extremes_and_conventions() {
        assert_eq!(rsp(&fvp(&[3, 3, 7]), &fvp(&[3, 3, 7])).unwrap(), 1.0);
        assert_eq!(rsp(&ap(&[1]), &ap(&[2])).unwrap(), 0.0);
        assert_eq!(rsp(&ap(&[]), &ap(&[])).unwrap(), 1.0);
        assert_eq!(rsp(&ap(&[]), &ap(&[5])).unwrap(), 0.0);
        assert!(rsp(&ap(&[1]), &fvp(&[1])).is_err());
    }

    #[test]
    fn rsp_is_symmetric() {
        let a = fvp(&[1, 1, 4, 9]);
        let b = fvp(&[1, 4, 4, 9, 9]);
        assert_eq!(rsp(&a, &b).unwrap(), rsp(&b, &a).unwrap());
    }

    #[test]
    fn qeq_boundary_is_inclusive() {
        let a = ap(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]);
        let b = ap(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20]);
        // rsp = 19/20 = 0.95 exactly.
        assert_eq!(rsp(&a, &b).unwrap(), 0.95);
        assert!(qeq(&a, &b, 0.95).unwrap());
        assert!(!qeq(&a, &b, 0.951).unwrap());
        assert!(qeq(&a, &a, 1.0).unwrap());
        assert!(qeq(&ap(&[]), &ap(&[]), 1.0).unwrap());
    }

    fn round_of(responses: Vec<Response>) -> RoundLeakage {
        let queries = (0..responses.len())
            .map(|i| crate::sim::QueryEvent {
                round: 0,
                slot: 0,
                query_ref: i as u64,
            })
            .collect();
        RoundLeakage { queries, responses }
    }

    #[test]
    fn identical_responses_join_one_group() {
        let round = round_of(vec![ap(&[1, 2]), ap(&[1, 2])]);
        let groups = infer_isp(&round, 0, &SpConfig::default()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec![0, 1]);
    }

    #[test]
    fn single_query_forms_singleton_group() {
        let round = round_of(vec![ap(&[7])]);
        let groups = infer_isp(&round, 0, &SpConfig::default()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec![0]);
    }

    #[test]
    fn distinct_responses_stay_apart_and_partition_holds() {
        let round = round_of(vec![
            ap(&[1, 2, 3]),
            ap(&[4, 5]),
            ap(&[1, 2, 3]),
            ap(&[6]),
            ap(&[4, 5]),
        ]);
        let groups = infer_isp(&round, 0, &SpConfig::default()).unwrap();
        assert_eq!(groups.len(), 3);
        let mut all: Vec<u32> = groups.iter().flat_map(|g| g.members.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn index_matrices_head_tail_union_semantics() {
        // One group issuing two queries touching {f1} then {f2}, one
        // group touching {f1, f3}.
        let round = round_of(vec![ap(&[1]), ap(&[10, 3]), ap(&[2])]);
        let groups = vec![
            Group {
                round: 0,
                members: vec![0, 2],
            },
            Group {
                round: 0,
                members: vec![1],
            },
        ];
        let m = build_index_matrices(&groups, &round);
        // First-appearance column order: 1, 3, 10, 2.
        assert_eq!(m.columns, vec![1, 3, 10, 2]);
        let row = |b: &BitMat, r: usize| (0..b.cols()).map(|c| b.get(r, c)).collect::<Vec<_>>();
        assert_eq!(row(&m.idh, 0), vec![true, false, false, false]);
        assert_eq!(row(&m.idt, 0), vec![false, false, false, true]);
        assert_eq!(row(&m.id, 0), vec![true, false, false, true]);
        // Singleton group: head = tail = union.
        assert_eq!(row(&m.idh, 1), row(&m.idt, 1));
        assert_eq!(row(&m.idh, 1), row(&m.id, 1));
        // ID dominates IDH and IDT bitwise.
        for g in 0..2 {
            for c in 0..m.id.cols() {
                assert!(m.id.get(g, c) >= m.idh.get(g, c));
                assert!(m.id.get(g, c) >= m.idt.get(g, c));
            }
        }
    }

    #[test]
    fn fvp_columns_collapse_equal_sizes() {
        let round = round_of(vec![fvp(&[500, 500, 800])]);
        let groups = infer_isp(&round, 0, &SpConfig::default()).unwrap();
        let m = build_index_matrices(&groups, &round);
        assert_eq!(m.columns, vec![500, 800]);
        assert!(m.id.get(0, 0) && m.id.get(0, 1));
    }

    /// Two synthetic rounds with disjoint alias namespaces over the same
    /// underlying keyword structure.
    fn two_round_fixture(n_groups: usize) -> Vec<RoundGroups> {
        let mut rounds = Vec::new();
        for round_idx in 0..2u32 {
            let base = (round_idx as u64) << 40;
            // Keyword k touches files {3k, 3k+1, 3k+2} plus shared file
            // {3 * (k / 2)} to create off-diagonal co-occurrence.
            let responses: Vec<Response> = (0..n_groups)
                .map(|k| {
                    let k = k as u64;
                    let mut files = vec![base + 3 * k, base + 3 * k + 1, base + 3 * k + 2];
                    files.push(base + 3 * (k / 2));
                    ap(&files)
                })
                .collect();
            let round = round_of(responses);
            let groups = infer_isp(&round, round_idx, &SpConfig::default()).unwrap();
            let matrices = build_index_matrices(&groups, &round);
            rounds.push(RoundGroups { groups, matrices });
        }
        rounds
    }

    #[test]
    fn matching_identical_rounds_recovers_identity() {
        let rounds = two_round_fixture(8);
        let cfg = SpConfig {
            p_g: 0.0,
            ..SpConfig::default()
        };
        let pairs = match_rounds(&rounds[0].matrices, &rounds[1].matrices, &cfg, 5).unwrap();
        assert_eq!(pairs.len(), 8);
        for (a, b) in pairs {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn p_g_one_group_drops_everything() {
        let rounds = two_round_fixture(4);
        let cfg = SpConfig {
            p_g: 0.999,
            ..SpConfig::default()
        };
        // floor(0.999 * 4) = 3 dropped, one pair survives.
        let pairs = match_rounds(&rounds[0].matrices, &rounds[1].matrices, &cfg, 5).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn empty_side_matches_nothing() {
        let rounds = two_round_fixture(3);
        let empty = RoundIndexMatrices {
            columns: vec![],
            idh: BitMat::zeros(0, 0),
            idt: BitMat::zeros(0, 0),
            id: BitMat::zeros(0, 0),
        };
        let pairs = match_rounds(&empty, &rounds[1].matrices, &SpConfig::default(), 0).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn single_round_esp_is_passthrough() {
        let rounds = &two_round_fixture(5)[..1];
        let m = infer_esp(rounds, &SpConfig::default(), 0).unwrap();
        assert_eq!(m.len(), 5);
        assert!(m.groups.iter().all(|parts| parts.len() == 1));
    }

    #[test]
    fn two_identical_rounds_merge_pairwise() {
        let rounds = two_round_fixture(8);
        let cfg = SpConfig {
            p_g: 0.0,
            ..SpConfig::default()
        };
        let m = infer_esp(&rounds, &cfg, 3).unwrap();
        assert_eq!(m.len(), 8);
        for parts in &m.groups {
            assert_eq!(parts.len(), 2);
            assert_eq!(parts[0].1, parts[1].1, "matched to its counterpart");
        }
    }

    #[test]
    fn merged_groups_hold_at_most_one_group_per_round() {
        let rounds = two_round_fixture(8);
        let m = infer_esp(&rounds, &SpConfig::default(), 1).unwrap();
        for parts in &m.groups {
            let mut seen = std::collections::HashSet::new();
            for &(round, _) in parts {
                assert!(seen.insert(round), "two groups of round {round} merged");
            }
        }
        // Partition: every group appears exactly once.
        let total: usize = m.groups.iter().map(|p| p.len()).sum();
        assert_eq!(total, 16);
    }

    #[test]
    fn esp_is_deterministic() {
        let rounds = two_round_fixture(6);
        let a = infer_esp(&rounds, &SpConfig::default(), 9).unwrap();
        let b = infer_esp(&rounds, &SpConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
