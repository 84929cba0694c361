//! Combinatorial matching engine.
//!
//! [`hungarian`] solves rectangular min-cost linear assignment exactly
//! (Jonker-Volgenant style shortest augmenting paths). [`iterative_qap`]
//! is the fix-and-free heuristic for quadratic assignment used to match
//! co-occurrence matrices: it repeatedly fixes a random subset of the
//! current assignment, linearizes the quadratic terms against the fixed
//! pairs, and re-solves the remaining rows by Hungarian, keeping an
//! update only when it does not worsen the objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Mat;
use crate::{Error, Result};

/// Injective assignment of every row to a distinct column, with the
/// objective value it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `mapping[i]` is the column assigned to row `i`.
    pub mapping: Vec<usize>,
    pub objective: f64,
}

/// Minimum-cost assignment of all rows of a rectangular cost matrix
/// (`rows <= cols`). Ties are broken toward lower column indices.
pub fn hungarian(costs: &Mat) -> Result<AssignmentResult> {
    let n = costs.rows();
    let m = costs.cols();
    if n > m {
        return Err(Error::shape(format!(
            "hungarian needs rows <= cols, got {n}x{m}"
        )));
    }
    if costs.has_nan() {
        return Err(Error::input("hungarian cost matrix contains NaN"));
    }
    if n == 0 {
        return Ok(AssignmentResult {
            mapping: Vec::new(),
            objective: 0.0,
        });
    }

    // Column potentials and matching, 1-indexed with column 0 as the
    // virtual start of each augmenting path.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // 0 = free column
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut mapping = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] > 0 {
            mapping[matched_row[j] - 1] = j - 1;
        }
    }
    debug_assert!(mapping.iter().all(|&c| c != usize::MAX));
    let objective = (0..n).map(|i| costs.get(i, mapping[i])).sum();
    Ok(AssignmentResult { mapping, objective })
}

/// One quadratic component of a QAP objective: an observation-side
/// matrix, an auxiliary-side matrix, and the weight of the component.
///
/// Entries of both matrices are treated as probabilities. The cost of
/// assigning rows `i -> j` and `i' -> j'` is the weighted binomial
/// cross-entropy `-weight * (obs[i][i'] * ln(aux[j][j']) +
/// (1 - obs[i][i']) * ln(1 - aux[j][j']))`, with auxiliary probabilities
/// clamped to `[eps, 1 - eps]` before the logarithms.
#[derive(Debug, Clone)]
pub struct QuadComponent {
    /// n x n matrix on the side being assigned (one row per row of the
    /// assignment).
    pub obs: Mat,
    /// m x m matrix on the side assigned to.
    pub aux: Mat,
    pub weight: f64,
    pub eps: f64,
}

/// A quadratic assignment instance: any number of quadratic components
/// plus an optional n x m linear cost.
#[derive(Debug, Clone)]
pub struct QapInstance {
    pub quad: Vec<QuadComponent>,
    pub linear: Option<Mat>,
    pub n_iters: u32,
    pub p_free: f64,
}

struct PreparedComponent {
    obs: Mat,
    log_aux: Mat,
    log_aux_compl: Mat,
    weight: f64,
}

impl PreparedComponent {
    fn new(c: &QuadComponent) -> Self {
        let eps = c.eps.clamp(1e-12, 0.5);
        let clamp = |p: f64| p.clamp(eps, 1.0 - eps);
        PreparedComponent {
            obs: c.obs.clone(),
            log_aux: c.aux.map(|p| clamp(p).ln()),
            log_aux_compl: c.aux.map(|p| (1.0 - clamp(p)).ln()),
            weight: c.weight,
        }
    }

    /// Cost contribution of the ordered pair (i -> j, i2 -> j2).
    #[inline]
    fn pair_cost(&self, i: usize, i2: usize, j: usize, j2: usize) -> f64 {
        let p = self.obs.get(i, i2);
        -self.weight * (p * self.log_aux.get(j, j2) + (1.0 - p) * self.log_aux_compl.get(j, j2))
    }
}

fn total_objective(
    comps: &[PreparedComponent],
    linear: Option<&Mat>,
    mapping: &[usize],
) -> f64 {
    let n = mapping.len();
    let mut obj = 0.0;
    if let Some(lin) = linear {
        for (i, &j) in mapping.iter().enumerate() {
            obj += lin.get(i, j);
        }
    }
    for comp in comps {
        for i in 0..n {
            for i2 in 0..n {
                if i2 != i {
                    obj += comp.pair_cost(i, i2, mapping[i], mapping[i2]);
                }
            }
        }
    }
    obj
}

/// Fix-and-free QAP heuristic, deterministic under `seed`.
///
/// The start assignment is the Hungarian solution of the linear cost, or
/// a random injection when no linear cost is given. Each iteration frees
/// a `p_free` fraction of rows, rebuilds their linear cost against the
/// fixed pairs using the quadratic components, re-solves the freed rows
/// by Hungarian, and keeps the update when the full objective does not
/// increase. A deterministic swap/relocation polish runs at the end.
pub fn iterative_qap(instance: &QapInstance, seed: u64) -> Result<AssignmentResult> {
    Ok(iterative_qap_traced(instance, seed)?.0)
}

/// Like [`iterative_qap`], additionally returning the objective after
/// the initial assignment, after every iteration, and after the final
/// polish. The sequence is non-increasing.
pub fn iterative_qap_traced(
    instance: &QapInstance,
    seed: u64,
) -> Result<(AssignmentResult, Vec<f64>)> {
    if !(instance.p_free > 0.0 && instance.p_free < 1.0) {
        return Err(Error::config(format!(
            "p_free must lie in (0, 1), got {}",
            instance.p_free
        )));
    }
    let (n, m) = instance_dims(instance)?;
    if n == 0 {
        return Ok((
            AssignmentResult {
                mapping: Vec::new(),
                objective: 0.0,
            },
            vec![0.0],
        ));
    }

    let comps: Vec<PreparedComponent> = instance.quad.iter().map(PreparedComponent::new).collect();
    let linear = instance.linear.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mapping = match linear {
        Some(lin) => hungarian(lin)?.mapping,
        None => {
            let mut cols: Vec<usize> = (0..m).collect();
            cols.shuffle(&mut rng);
            cols.truncate(n);
            cols
        }
    };
    let mut objective = total_objective(&comps, linear, &mapping);
    let mut trace = Vec::with_capacity(instance.n_iters as usize + 2);
    trace.push(objective);

    // Free at least two rows per iteration so swaps stay reachable.
    let n_free = ((instance.p_free * n as f64).round() as usize).clamp(2.min(n), n);

    let mut rows: Vec<usize> = (0..n).collect();
    for _ in 0..instance.n_iters {
        rows.shuffle(&mut rng);
        let mut free_rows: Vec<usize> = rows[..n_free].to_vec();
        free_rows.sort_unstable();
        let fixed_rows: Vec<usize> = {
            let mut f: Vec<usize> = rows[n_free..].to_vec();
            f.sort_unstable();
            f
        };
        let used_cols: Vec<bool> = {
            let mut used = vec![false; m];
            for &r in &fixed_rows {
                used[mapping[r]] = true;
            }
            used
        };
        let free_cols: Vec<usize> = (0..m).filter(|&c| !used_cols[c]).collect();

        // Linearized cost of free rows against free columns. Quadratic
        // terms appear twice per unordered pair (both orientations), and
        // the matrices are symmetric, hence the factor 2.
        let mut cost = Mat::zeros(free_rows.len(), free_cols.len());
        for (fi, &r) in free_rows.iter().enumerate() {
            let row = cost.row_mut(fi);
            if let Some(lin) = linear {
                for (fj, &c) in free_cols.iter().enumerate() {
                    row[fj] = lin.get(r, c);
                }
            }
            for comp in &comps {
                for &fr in &fixed_rows {
                    let p = comp.obs.get(r, fr);
                    let anchor = mapping[fr];
                    for (fj, &c) in free_cols.iter().enumerate() {
                        row[fj] += 2.0
                            * -comp.weight
                            * (p * comp.log_aux.get(c, anchor)
                                + (1.0 - p) * comp.log_aux_compl.get(c, anchor));
                    }
                }
            }
        }

        let sub = hungarian(&cost)?;
        let mut candidate = mapping.clone();
        for (fi, &r) in free_rows.iter().enumerate() {
            candidate[r] = free_cols[sub.mapping[fi]];
        }
        let cand_obj = total_objective(&comps, linear, &candidate);
        if cand_obj <= objective {
            mapping = candidate;
            objective = cand_obj;
        }
        trace.push(objective);
    }

    if instance.n_iters > 0 {
        objective = polish(&comps, linear, &mut mapping, m, objective);
        trace.push(objective);
    }

    Ok((AssignmentResult { mapping, objective }, trace))
}

/// Deterministic local search over pairwise column swaps and moves to
/// unused columns, until no improving step remains (bounded sweeps).
/// Leaves no improving transposition behind, which the randomized
/// fix-and-free iterations cannot guarantee.
fn polish(
    comps: &[PreparedComponent],
    linear: Option<&Mat>,
    mapping: &mut [usize],
    m: usize,
    mut objective: f64,
) -> f64 {
    let n = mapping.len();
    let eps = 1e-12;
    // Cost of row `r` sitting on column `c`, against all other rows.
    let row_cost = |mapping: &[usize], r: usize, c: usize| -> f64 {
        let mut cost = linear.map_or(0.0, |l| l.get(r, c));
        for comp in comps {
            for (r2, &c2) in mapping.iter().enumerate() {
                if r2 != r {
                    cost += comp.pair_cost(r, r2, c, c2) + comp.pair_cost(r2, r, c2, c);
                }
            }
        }
        cost
    };
    for _ in 0..20 {
        let mut improved = false;
        let mut used = vec![false; m];
        for &c in mapping.iter() {
            used[c] = true;
        }
        // Relocations to free columns.
        for r in 0..n {
            let current = row_cost(mapping, r, mapping[r]);
            let mut best: Option<(f64, usize)> = None;
            for c in 0..m {
                if !used[c] {
                    let delta = row_cost(mapping, r, c) - current;
                    if delta < -eps && best.map_or(true, |(b, _)| delta < b) {
                        best = Some((delta, c));
                    }
                }
            }
            if let Some((delta, c)) = best {
                used[mapping[r]] = false;
                used[c] = true;
                mapping[r] = c;
                objective += delta;
                improved = true;
            }
        }
        // Pairwise swaps. The summed row costs count the a-b interaction
        // twice, so it is subtracted back once on both sides.
        let pair_ab = |a: usize, b: usize, ca: usize, cb: usize| -> f64 {
            comps
                .iter()
                .map(|comp| comp.pair_cost(a, b, ca, cb) + comp.pair_cost(b, a, cb, ca))
                .sum::<f64>()
        };
        for a in 0..n {
            for b in a + 1..n {
                let (ca, cb) = (mapping[a], mapping[b]);
                let before =
                    row_cost(mapping, a, ca) + row_cost(mapping, b, cb) - pair_ab(a, b, ca, cb);
                mapping[a] = cb;
                mapping[b] = ca;
                let after =
                    row_cost(mapping, a, cb) + row_cost(mapping, b, ca) - pair_ab(a, b, cb, ca);
                if after - before < -eps {
                    objective += after - before;
                    improved = true;
                } else {
                    mapping[a] = ca;
                    mapping[b] = cb;
                }
            }
        }
        if !improved {
            break;
        }
    }
    objective
}

fn instance_dims(instance: &QapInstance) -> Result<(usize, usize)> {
    let mut dims: Option<(usize, usize)> = None;
    for c in &instance.quad {
        if c.obs.rows() != c.obs.cols() || c.aux.rows() != c.aux.cols() {
            return Err(Error::shape("quadratic components must be square"));
        }
        let d = (c.obs.rows(), c.aux.rows());
        if let Some(prev) = dims {
            if prev != d {
                return Err(Error::shape("inconsistent component dimensions"));
            }
        }
        dims = Some(d);
    }
    if let Some(lin) = &instance.linear {
        let d = (lin.rows(), lin.cols());
        if let Some(prev) = dims {
            if prev != d {
                return Err(Error::shape("linear cost dimensions differ"));
            }
        }
        dims = Some(d);
    }
    let (n, m) = dims.ok_or_else(|| Error::config("empty QAP instance"))?;
    if n > m {
        return Err(Error::shape(format!(
            "QAP needs observation side <= auxiliary side, got {n} > {m}"
        )));
    }
    Ok((n, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(rows.iter().map(|r| r.to_vec()).collect())
    }

    /// Exhaustive-permutation oracle for square instances.
    fn brute_force_min(costs: &Mat) -> f64 {
        fn rec(costs: &Mat, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == costs.rows() {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for c in 0..costs.cols() {
                if !used[c] {
                    used[c] = true;
                    rec(costs, row + 1, used, acc + costs.get(row, c), best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(costs, 0, &mut vec![false; costs.cols()], 0.0, &mut best);
        best
    }

    #[test]
    fn two_by_two_matches_brute_force() {
        // Oracle: both permutations of [[1,2],[2,1]] cost 2 and 4.
        let c = mat(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let r = hungarian(&c).unwrap();
        assert_eq!(r.mapping, vec![0, 1]);
        assert_eq!(r.objective, 2.0);
        assert_eq!(brute_force_min(&c), 2.0);
    }

    #[test]
    fn zero_diagonal_picks_diagonal() {
        let n = 6;
        let mut c = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    c.set(i, j, 1.0 + (i * n + j) as f64);
                }
            }
        }
        let r = hungarian(&c).unwrap();
        assert_eq!(r.mapping, (0..n).collect::<Vec<_>>());
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn rectangular_single_row_takes_minimum() {
        let c = mat(&[&[5.0, 1.0, 7.0]]);
        let r = hungarian(&c).unwrap();
        assert_eq!(r.mapping, vec![1]);
        assert_eq!(r.objective, 1.0);
    }

    #[test]
    fn rejects_bad_shapes_and_nan() {
        let c = mat(&[&[1.0], &[2.0]]);
        assert!(matches!(hungarian(&c), Err(Error::Shape(_))));
        let c = mat(&[&[f64::NAN, 1.0]]);
        assert!(matches!(hungarian(&c), Err(Error::Input(_))));
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(2..=6);
            let mut c = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    c.set(i, j, (rng.gen_range(-50..50) as f64) / 4.0);
                }
            }
            let r = hungarian(&c).unwrap();
            assert_eq!(r.objective, brute_force_min(&c), "matrix {c:?}");
        }
    }

    #[test]
    fn constant_shift_keeps_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..=8);
            let m = n + rng.gen_range(0..=3);
            let mut c = Mat::zeros(n, m);
            for i in 0..n {
                for j in 0..m {
                    c.set(i, j, rng.gen_range(-10.0..10.0));
                }
            }
            let shifted = c.map(|v| v + 13.25);
            let a = hungarian(&c).unwrap();
            let b = hungarian(&shifted).unwrap();
            assert_eq!(a.mapping, b.mapping);
            let expect = a.objective + 13.25 * n as f64;
            assert!((b.objective - expect).abs() < 1e-9);
        }
    }

    fn self_match_instance(n: usize, seed: u64) -> QapInstance {
        // Distinct-row symmetric probability matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let p = rng.gen_range(0.05..0.95);
                v.set(i, j, p);
                v.set(j, i, p);
            }
        }
        // Linear cost from diagonal cross-entropy, as callers build it.
        let eps = 0.01;
        let mut lin = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let p = v.get(i, i);
                let q = v.get(j, j).clamp(eps, 1.0 - eps);
                lin.set(i, j, -(p * q.ln() + (1.0 - p) * (1.0 - q).ln()));
            }
        }
        QapInstance {
            quad: vec![QuadComponent {
                obs: v.clone(),
                aux: v,
                weight: 1.0,
                eps,
            }],
            linear: Some(lin),
            n_iters: 60,
            p_free: 0.5,
        }
    }

    #[test]
    fn self_matching_recovers_identity() {
        // Oracle: matching a matrix against itself must return the
        // identity permutation; checked exhaustively for n <= 6 by the
        // uniqueness of the cross-entropy minimum at equal rows.
        for n in 2..=6 {
            for seed in 0..4 {
                let inst = self_match_instance(n, 100 * n as u64 + seed);
                let r = iterative_qap(&inst, seed).unwrap();
                assert_eq!(r.mapping, (0..n).collect::<Vec<_>>(), "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn zero_iterations_returns_initial_assignment() {
        let mut inst = self_match_instance(5, 3);
        inst.n_iters = 0;
        let init = hungarian(inst.linear.as_ref().unwrap()).unwrap();
        let r = iterative_qap(&inst, 9).unwrap();
        assert_eq!(r.mapping, init.mapping);
    }

    #[test]
    fn objective_is_non_increasing_and_mapping_injective() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..10 {
            let n = 8;
            let m = 10;
            let mut obs = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let p: f64 = rng.gen_range(0.0..1.0);
                    obs.set(i, j, p);
                    obs.set(j, i, p);
                }
            }
            let mut aux = Mat::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let p: f64 = rng.gen_range(0.0..1.0);
                    aux.set(i, j, p);
                    aux.set(j, i, p);
                }
            }
            let inst = QapInstance {
                quad: vec![QuadComponent {
                    obs,
                    aux,
                    weight: 2.0,
                    eps: 0.01,
                }],
                linear: None,
                n_iters: 25,
                p_free: 0.4,
            };
            // The recorded per-iteration objective sequence (including
            // the final polish) must never increase.
            let (r, objectives) = iterative_qap_traced(&inst, trial).unwrap();
            assert!(
                objectives.windows(2).all(|w| w[1] <= w[0] + 1e-9),
                "objective increased: {objectives:?}"
            );
            assert_eq!(*objectives.last().unwrap(), r.objective);
            let mut seen = vec![false; m];
            for &c in &r.mapping {
                assert!(!seen[c], "non-injective mapping");
                seen[c] = true;
            }
        }
    }

    #[test]
    fn invalid_p_free_is_rejected() {
        let mut inst = self_match_instance(4, 1);
        inst.p_free = 1.0;
        assert!(matches!(iterative_qap(&inst, 0), Err(Error::Config(_))));
        inst.p_free = 0.0;
        assert!(matches!(iterative_qap(&inst, 0), Err(Error::Config(_))));
    }
}
