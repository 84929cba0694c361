//! Minimal dense matrix helpers used by the attack pipeline.
//!
//! Two representations: [`Mat`] is a row-major `f64` matrix for cost and
//! co-occurrence computations, [`BitMat`] is a packed binary matrix for
//! index matrices (group-vs-file indicators), with popcount-based row
//! intersection so co-occurrence matrices stay cheap at scale.

use serde::{Deserialize, Serialize};

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        Mat {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }
}

/// Packed binary matrix; rows are stored as blocks of 64 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitMat {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        BitMat {
            rows,
            cols,
            words_per_row,
            data: vec![0; rows * words_per_row],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let w = r * self.words_per_row + c / 64;
        let bit = 1u64 << (c % 64);
        if v {
            self.data[w] |= bit;
        } else {
            self.data[w] &= !bit;
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        let w = r * self.words_per_row + c / 64;
        self.data[w] >> (c % 64) & 1 == 1
    }

    #[inline]
    fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn row_count(&self, r: usize) -> u32 {
        self.row_words(r).iter().map(|w| w.count_ones()).sum()
    }

    pub fn intersect_count(&self, r1: usize, r2: usize) -> u32 {
        self.row_words(r1)
            .iter()
            .zip(self.row_words(r2))
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    /// Copies row `src` of `other` into row `dst` of `self`. Column counts
    /// must match.
    pub fn copy_row_from(&mut self, dst: usize, other: &BitMat, src: usize) {
        assert_eq!(self.cols, other.cols, "column mismatch");
        let w = self.words_per_row;
        self.data[dst * w..(dst + 1) * w].copy_from_slice(other.row_words(src));
    }

    /// Bitwise OR of row `src` of `other` into row `dst` of `self`.
    pub fn or_row_from(&mut self, dst: usize, other: &BitMat, src: usize) {
        assert_eq!(self.cols, other.cols, "column mismatch");
        let w = self.words_per_row;
        for (d, s) in self.data[dst * w..(dst + 1) * w]
            .iter_mut()
            .zip(other.row_words(src))
        {
            *d |= *s;
        }
    }

    /// Returns `true` when row `a` bitwise dominates row `b` (a ⊇ b).
    pub fn row_dominates(&self, a: usize, b: usize) -> bool {
        self.row_words(a)
            .iter()
            .zip(self.row_words(b))
            .all(|(x, y)| x & y == *y)
    }

    /// Symmetric co-occurrence matrix: entry (i, j) is the fraction of
    /// columns set in both row i and row j. A matrix without columns
    /// yields all zeros.
    pub fn cooccurrence(&self) -> Mat {
        let n = self.rows;
        let mut out = Mat::zeros(n, n);
        if self.cols == 0 {
            return out;
        }
        let denom = self.cols as f64;
        for i in 0..n {
            for j in i..n {
                let v = self.intersect_count(i, j) as f64 / denom;
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitmat_roundtrip_across_word_boundary() {
        let mut m = BitMat::zeros(2, 130);
        m.set(0, 0, true);
        m.set(0, 63, true);
        m.set(0, 64, true);
        m.set(1, 64, true);
        m.set(1, 129, true);
        assert!(m.get(0, 64));
        assert!(!m.get(1, 0));
        assert_eq!(m.row_count(0), 3);
        assert_eq!(m.intersect_count(0, 1), 1);
    }

    #[test]
    fn cooccurrence_matches_direct_counts() {
        let mut m = BitMat::zeros(3, 4);
        // rows: 1100, 0110, 1111
        m.set(0, 0, true);
        m.set(0, 1, true);
        m.set(1, 1, true);
        m.set(1, 2, true);
        for c in 0..4 {
            m.set(2, c, true);
        }
        let c = m.cooccurrence();
        assert_eq!(c.get(0, 0), 0.5);
        assert_eq!(c.get(0, 1), 0.25);
        assert_eq!(c.get(1, 2), 0.5);
        assert_eq!(c.get(2, 2), 1.0);
        // symmetry
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
    }
}
