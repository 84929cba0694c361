//! Evaluation metrics: rand index / adjusted rand index for search
//! pattern inference, and query-weighted accuracy for query recovery.

use std::collections::HashMap;

use crate::{Error, Result};

/// A partition of a query set: each item carries a block id. Block ids
/// are arbitrary labels; only the induced equivalence matters.
#[derive(Debug, Clone)]
pub struct Partition {
    block_of: Vec<u32>,
}

impl Partition {
    /// Builds a partition from per-item block labels. Items must be
    /// listed in the same order for both partitions being compared.
    pub fn from_labels<L: std::hash::Hash + Eq>(labels: impl IntoIterator<Item = L>) -> Self {
        let mut ids: HashMap<L, u32> = HashMap::new();
        let mut block_of = Vec::new();
        for l in labels {
            let next = ids.len() as u32;
            let id = *ids.entry(l).or_insert(next);
            block_of.push(id);
        }
        Partition { block_of }
    }

    pub fn len(&self) -> usize {
        self.block_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_of.is_empty()
    }

    fn n_blocks(&self) -> usize {
        self.block_of.iter().map(|&b| b as usize + 1).max().unwrap_or(0)
    }
}

fn comb2(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        n as f64 * (n - 1) as f64 / 2.0
    }
}

struct PairCounts {
    same_same: f64,  // pairs together in both partitions (a)
    px: f64,         // pairs together in X
    py: f64,         // pairs together in Y
    total: f64,      // n choose 2
}

fn pair_counts(x: &Partition, y: &Partition) -> Result<PairCounts> {
    if x.len() != y.len() {
        return Err(Error::input("partitions cover different item counts"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::input("partition metrics need at least 2 items"));
    }
    let bx = x.n_blocks();
    let by = y.n_blocks();
    let mut contingency: HashMap<(u32, u32), u64> = HashMap::new();
    let mut ax = vec![0u64; bx];
    let mut ay = vec![0u64; by];
    for i in 0..n {
        let (xb, yb) = (x.block_of[i], y.block_of[i]);
        *contingency.entry((xb, yb)).or_insert(0) += 1;
        ax[xb as usize] += 1;
        ay[yb as usize] += 1;
    }
    Ok(PairCounts {
        same_same: contingency.values().map(|&c| comb2(c)).sum(),
        px: ax.iter().map(|&c| comb2(c)).sum(),
        py: ay.iter().map(|&c| comb2(c)).sum(),
        total: comb2(n as u64),
    })
}

/// Rand index: fraction of item pairs on which the two partitions agree
/// (both together or both apart).
pub fn rand_index(x: &Partition, y: &Partition) -> Result<f64> {
    let c = pair_counts(x, y)?;
    let agree_apart = c.total - c.px - c.py + c.same_same;
    Ok((c.same_same + agree_apart) / c.total)
}

/// Adjusted rand index via the contingency-table formulation,
/// equivalent to `(RI - E[RI]) / (MaxRI - E[RI])` under the permutation
/// model with `MaxRI = 1`.
///
/// Degenerate cases (both partitions all singletons, or both a single
/// block) have a zero denominator; they score 1 when the partitions are
/// equal and 0 otherwise.
pub fn adjusted_rand_index(x: &Partition, y: &Partition) -> Result<f64> {
    let c = pair_counts(x, y)?;
    let expected = c.px * c.py / c.total;
    let max_index = 0.5 * (c.px + c.py);
    if (max_index - expected).abs() < f64::EPSILON {
        let equal = rand_index(x, y)? == 1.0;
        return Ok(if equal { 1.0 } else { 0.0 });
    }
    Ok((c.same_same - expected) / (max_index - expected))
}

/// Query-weighted recovery accuracy: the fraction of observed queries
/// whose group was assigned the query's true keyword. Queries without a
/// mapped group count as incorrect.
pub fn accuracy(assigned: &[Option<u32>], truth: &[u32]) -> Result<f64> {
    if assigned.len() != truth.len() {
        return Err(Error::input("assignment and truth cover different queries"));
    }
    if truth.is_empty() {
        return Err(Error::input("no observed queries to score"));
    }
    let correct = assigned
        .iter()
        .zip(truth)
        .filter(|(a, t)| a.map_or(false, |k| k == **t))
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn part(labels: &[u32]) -> Partition {
        Partition::from_labels(labels.iter().copied())
    }

    /// O(n^2) pair-loop oracle for RI, plus the definitional ARI with the
    /// permutation-model expectation. Kept independent of the
    /// contingency-table implementation.
    fn pair_loop_ri_ari(x: &[u32], y: &[u32]) -> (f64, f64) {
        let n = x.len();
        let (mut a, mut b, mut px, mut py) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut total = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                total += 1.0;
                let sx = x[i] == x[j];
                let sy = y[i] == y[j];
                if sx {
                    px += 1.0;
                }
                if sy {
                    py += 1.0;
                }
                if sx && sy {
                    a += 1.0;
                }
                if !sx && !sy {
                    b += 1.0;
                }
            }
        }
        let ri = (a + b) / total;
        let e_a = px * py / total;
        let e_b = total - px - py + e_a;
        let e_ri = (e_a + e_b) / total;
        let ari = if (1.0 - e_ri).abs() < 1e-15 {
            if ri == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (ri - e_ri) / (1.0 - e_ri)
        };
        (ri, ari)
    }

    #[test]
    fn identical_partitions_score_one() {
        let x = part(&[0, 0, 1, 2, 2]);
        assert_eq!(rand_index(&x, &x).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn singletons_vs_one_block_is_zero() {
        let x = part(&[0, 1, 2]);
        let y = part(&[0, 0, 0]);
        // a = 0 and b = 0, so RI = 0; ARI = 0 as well.
        assert_eq!(rand_index(&x, &y).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_cases_follow_convention() {
        let singles_a = part(&[0, 1, 2, 3]);
        let singles_b = part(&[3, 2, 1, 0]);
        assert_eq!(adjusted_rand_index(&singles_a, &singles_b).unwrap(), 1.0);
        let one_a = part(&[0, 0, 0]);
        let one_b = part(&[5, 5, 5]);
        assert_eq!(adjusted_rand_index(&one_a, &one_b).unwrap(), 1.0);
    }

    #[test]
    fn matches_pair_loop_oracle_on_random_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(2..=50);
            let bx = rng.gen_range(1..=n);
            let by = rng.gen_range(1..=n);
            let x: Vec<u32> = (0..n).map(|_| rng.gen_range(0..bx) as u32).collect();
            let y: Vec<u32> = (0..n).map(|_| rng.gen_range(0..by) as u32).collect();
            let (ri_o, ari_o) = pair_loop_ri_ari(&x, &y);
            let ri = rand_index(&part(&x), &part(&y)).unwrap();
            let ari = adjusted_rand_index(&part(&x), &part(&y)).unwrap();
            assert!((ri - ri_o).abs() <= 1e-12);
            assert!((ari - ari_o).abs() <= 1e-9);
        }
    }

    #[test]
    fn independent_partitions_score_near_zero_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sum = 0.0;
        let runs = 100;
        for _ in 0..runs {
            let n = 200;
            let x: Vec<u32> = (0..n).map(|_| rng.gen_range(0..12u32)).collect();
            let y: Vec<u32> = (0..n).map(|_| rng.gen_range(0..12u32)).collect();
            sum += adjusted_rand_index(&part(&x), &part(&y)).unwrap();
        }
        assert!((sum / runs as f64).abs() < 0.05);
    }

    #[test]
    fn symmetry_in_arguments() {
        let x = part(&[0, 0, 1, 1, 2, 0, 1]);
        let y = part(&[0, 1, 1, 1, 0, 2, 2]);
        assert_eq!(rand_index(&x, &y).unwrap(), rand_index(&y, &x).unwrap());
        assert_eq!(
            adjusted_rand_index(&x, &y).unwrap(),
            adjusted_rand_index(&y, &x).unwrap()
        );
    }

    #[test]
    fn too_small_inputs_are_rejected() {
        let x = part(&[0]);
        assert!(rand_index(&x, &x).is_err());
    }

    #[test]
    fn accuracy_is_query_weighted() {
        // 9 queries in a correctly recovered group, 1 in a wrong one.
        let assigned: Vec<Option<u32>> = (0..10).map(|i| Some(if i < 9 { 1 } else { 7 })).collect();
        let truth = vec![1u32; 10];
        assert_eq!(accuracy(&assigned, &truth).unwrap(), 0.9);
        // Unmapped queries count as incorrect.
        let none: Vec<Option<u32>> = vec![None; 4];
        assert_eq!(accuracy(&none, &[1, 2, 3, 4]).unwrap(), 0.0);
    }
}
