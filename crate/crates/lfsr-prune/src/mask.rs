//! Sparsity-mask generation from paired shift registers, plus structural
//! analysis (density balance, numerical rank) of the masked matrices.
//!
//! Two registers step in lockstep; at each step their states map to a
//! (row, col) candidate. Already-kept pairs are skipped, so the mask reaches
//! its target cardinality exactly and regenerating from the two specs
//! reproduces the kept list in the same order. That replay property is what
//! lets sparse storage drop index arrays entirely.

use serde::Serialize;
use thiserror::Error;

use crate::bitset::BitSet;
use crate::lfsr::{self, map_to_index, Lfsr, LfsrError, LfsrSpec};
use crate::matrix::Matrix;

/// Relative pivot tolerance for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Pair draws allowed per kept entry before generation gives up.
const EXHAUSTION_FACTOR: u64 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error(transparent)]
    Lfsr(#[from] LfsrError),
    #[error("mask dimensions must be nonzero, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("sparsity {0} outside [0, 1)")]
    InvalidSparsity(f64),
    #[error("target of round((1-{sparsity})*{rows}*{cols}) keeps no entries")]
    EmptyTarget {
        rows: usize,
        cols: usize,
        sparsity: f64,
    },
    #[error("register width {width} cannot address {n_items} items (needs n <= 2^w - 1)")]
    WidthTooNarrow { width: u32, n_items: usize },
    #[error(
        "gave up after {steps} draws with {kept} of {target} entries; \
         register periods too small for this layer"
    )]
    Exhausted { steps: u64, target: usize, kept: usize },
}

/// A sparsity pattern: the ordered kept set plus everything needed to
/// regenerate it (the two register specs and the target).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    target_sparsity: f64,
    row_spec: LfsrSpec,
    col_spec: LfsrSpec,
    kept: Vec<(u32, u32)>,
    kept_bits: BitSet,
    steps_consumed: u64,
}

/// Summary of a mask's density balance and generation overhead.
#[derive(Debug, Clone, Serialize)]
pub struct MaskStats {
    pub rows: usize,
    pub cols: usize,
    pub target_sparsity: f64,
    pub nnz: usize,
    pub achieved_sparsity: f64,
    pub row_counts: Vec<u32>,
    pub col_counts: Vec<u32>,
    pub row_min: u32,
    pub row_max: u32,
    pub row_mean: f64,
    pub row_cv: f64,
    pub col_min: u32,
    pub col_max: u32,
    pub col_mean: f64,
    pub col_cv: f64,
    pub steps_consumed: u64,
    pub duplicate_ratio: f64,
}

impl Mask {
    /// Draws a mask keeping `round((1 - sparsity) * rows * cols)` entries.
    ///
    /// Both specs are period-checked first. Errors if the registers cannot
    /// address the dimensions, or if the joint stream fails to produce the
    /// target count within 64 draws per kept entry.
    pub fn generate(
        rows: usize,
        cols: usize,
        sparsity: f64,
        row_spec: LfsrSpec,
        col_spec: LfsrSpec,
    ) -> Result<Mask, MaskError> {
        if rows == 0 || cols == 0 {
            return Err(MaskError::ZeroDimension { rows, cols });
        }
        if !(0.0..1.0).contains(&sparsity) {
            return Err(MaskError::InvalidSparsity(sparsity));
        }
        let target = ((1.0 - sparsity) * (rows * cols) as f64).round() as usize;
        if target == 0 {
            return Err(MaskError::EmptyTarget {
                rows,
                cols,
                sparsity,
            });
        }
        Self::replay(rows, cols, target, row_spec, col_spec)
    }

    /// Draws a mask with an exact kept-entry target. This is the
    /// regeneration entry point used when decoding stored layers.
    pub fn replay(
        rows: usize,
        cols: usize,
        target_nnz: usize,
        row_spec: LfsrSpec,
        col_spec: LfsrSpec,
    ) -> Result<Mask, MaskError> {
        if rows == 0 || cols == 0 {
            return Err(MaskError::ZeroDimension { rows, cols });
        }
        if target_nnz == 0 || target_nnz > rows * cols {
            return Err(MaskError::EmptyTarget {
                rows,
                cols,
                sparsity: 1.0 - target_nnz as f64 / (rows * cols) as f64,
            });
        }
        for (spec, n_items) in [(&row_spec, rows), (&col_spec, cols)] {
            if n_items as u64 > spec.max_period() {
                return Err(MaskError::WidthTooNarrow {
                    width: spec.width(),
                    n_items,
                });
            }
            spec.validate()?;
        }

        let (w_r, w_c) = (row_spec.width(), col_spec.width());
        let mut row_reg = Lfsr::from_spec(&row_spec);
        let mut col_reg = Lfsr::from_spec(&col_spec);
        let mut kept = Vec::with_capacity(target_nnz);
        let mut kept_bits = BitSet::new(rows * cols);
        let budget = EXHAUSTION_FACTOR * target_nnz as u64;
        let mut steps: u64 = 0;
        while kept.len() < target_nnz {
            if steps >= budget {
                return Err(MaskError::Exhausted {
                    steps,
                    target: target_nnz,
                    kept: kept.len(),
                });
            }
            let r = map_to_index(row_reg.step(), w_r, rows);
            let c = map_to_index(col_reg.step(), w_c, cols);
            steps += 1;
            if !kept_bits.test_and_set(r * cols + c) {
                kept.push((r as u32, c as u32));
            }
        }
        let target_sparsity = 1.0 - target_nnz as f64 / (rows * cols) as f64;
        Ok(Mask {
            rows,
            cols,
            target_sparsity,
            row_spec,
            col_spec,
            kept,
            kept_bits,
            steps_consumed: steps,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn target_sparsity(&self) -> f64 {
        self.target_sparsity
    }

    pub fn row_spec(&self) -> &LfsrSpec {
        &self.row_spec
    }

    pub fn col_spec(&self) -> &LfsrSpec {
        &self.col_spec
    }

    /// Kept (row, col) pairs in generation order.
    pub fn kept(&self) -> &[(u32, u32)] {
        &self.kept
    }

    pub fn nnz(&self) -> usize {
        self.kept.len()
    }

    /// Pair draws consumed, including draws skipped as duplicates.
    pub fn steps_consumed(&self) -> u64 {
        self.steps_consumed
    }

    #[inline]
    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.kept_bits.get(r * self.cols + c)
    }

    /// Returns a copy of `m` with every non-kept entry zeroed.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        self.zero_pruned(&mut out);
        out
    }

    /// Zeroes every non-kept entry of `m` in place.
    pub fn zero_pruned(&self, m: &mut Matrix) {
        assert_eq!((m.rows(), m.cols()), (self.rows, self.cols));
        for r in 0..self.rows {
            let row = m.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                if !self.kept_bits.get(r * self.cols + c) {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn stats(&self) -> MaskStats {
        let mut row_counts = vec![0u32; self.rows];
        let mut col_counts = vec![0u32; self.cols];
        for &(r, c) in &self.kept {
            row_counts[r as usize] += 1;
            col_counts[c as usize] += 1;
        }
        let nnz = self.kept.len();
        let (row_min, row_max, row_mean, row_cv) = count_summary(&row_counts);
        let (col_min, col_max, col_mean, col_cv) = count_summary(&col_counts);
        MaskStats {
            rows: self.rows,
            cols: self.cols,
            target_sparsity: self.target_sparsity,
            nnz,
            achieved_sparsity: 1.0 - nnz as f64 / (self.rows * self.cols) as f64,
            row_counts,
            col_counts,
            row_min,
            row_max,
            row_mean,
            row_cv,
            col_min,
            col_max,
            col_mean,
            col_cv,
            steps_consumed: self.steps_consumed,
            duplicate_ratio: self.steps_consumed as f64 / nnz as f64,
        }
    }

    /// Default register widths for a layer shape.
    ///
    /// Each width oversamples its dimension by two bits (reducing bucket skew
    /// in the index map), and the column width is then nudged upward to the
    /// nearest width coprime with the row width. Coprime widths give coprime
    /// periods, so the joint stream cycles through every state pair and every
    /// cell stays reachable; equal or non-coprime widths would leave a
    /// structured fraction of cells permanently unreachable.
    pub fn default_widths(rows: usize, cols: usize) -> (u32, u32) {
        let clamp = |n: usize| (ceil_log2(n) + 2).clamp(lfsr::MIN_WIDTH, lfsr::MAX_WIDTH);
        let w_r = clamp(rows);
        let base = clamp(cols);
        let w_c = (base..=lfsr::MAX_WIDTH)
            .find(|&w| gcd(w, w_r) == 1)
            .or_else(|| (lfsr::MIN_WIDTH..base).rev().find(|&w| gcd(w, w_r) == 1))
            .expect("some width in 4..=24 is coprime with any other");
        (w_r, w_c)
    }

    /// Default spec pair for a layer shape from a single user seed.
    ///
    /// The row seed is the user seed truncated to the row width; the column
    /// seed is the user seed XOR 0x5A5A5A5A truncated to the column width.
    /// A truncation that lands on zero is replaced with 1.
    pub fn default_specs(
        rows: usize,
        cols: usize,
        seed: u64,
    ) -> Result<(LfsrSpec, LfsrSpec), LfsrError> {
        let (w_r, w_c) = Self::default_widths(rows, cols);
        let truncate = |s: u64, w: u32| {
            let t = (s & ((1u64 << w) - 1)) as u32;
            if t == 0 {
                1
            } else {
                t
            }
        };
        let row_spec = LfsrSpec::with_default_taps(w_r, truncate(seed, w_r))?;
        let col_spec = LfsrSpec::with_default_taps(w_c, truncate(seed ^ 0x5A5A_5A5A, w_c))?;
        Ok((row_spec, col_spec))
    }
}

fn count_summary(counts: &[u32]) -> (u32, u32, f64, f64) {
    let min = *counts.iter().min().unwrap();
    let max = *counts.iter().max().unwrap();
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
    (min, max, mean, cv)
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rank by Gaussian elimination with partial pivoting.
///
/// A pivot counts only if its magnitude exceeds
/// `tol * max_initial_abs * max(rows, cols)`, making the result invariant
/// under uniform scaling of the matrix.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a = m.data().to_vec();
    let threshold = tol * m.max_abs() * rows.max(cols) as f64;
    let mut rank = 0;
    for col in 0..cols {
        let mut best = rank;
        let mut best_abs = 0.0;
        for r in rank..rows {
            let v = a[r * cols + col].abs();
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        if best_abs <= threshold {
            continue;
        }
        if best != rank {
            for c in 0..cols {
                a.swap(rank * cols + c, best * cols + c);
            }
        }
        let pivot = a[rank * cols + col];
        for r in rank + 1..rows {
            let factor = a[r * cols + col] / pivot;
            if factor != 0.0 {
                for c in col..cols {
                    a[r * cols + c] -= factor * a[rank * cols + c];
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn default_mask(rows: usize, cols: usize, sp: f64, seed: u64) -> Mask {
        let (rs, cs) = Mask::default_specs(rows, cols, seed).unwrap();
        Mask::generate(rows, cols, sp, rs, cs).unwrap()
    }

    #[test]
    fn default_widths_oversample_and_stay_coprime() {
        assert_eq!(Mask::default_widths(300, 100), (11, 9));
        assert_eq!(Mask::default_widths(120, 84), (9, 10));
        assert_eq!(Mask::default_widths(84, 10), (9, 7));
        assert_eq!(Mask::default_widths(2048, 2048), (13, 14));
        assert_eq!(Mask::default_widths(784, 64), (12, 11));
        assert_eq!(Mask::default_widths(1, 1), (4, 5));
        for rows in [1, 3, 17, 120, 300, 784, 2048, 100_000] {
            for cols in [1, 10, 64, 100, 2048, 100_000] {
                let (wr, wc) = Mask::default_widths(rows, cols);
                assert_eq!(gcd(wr, wc), 1, "{rows}x{cols} -> ({wr},{wc})");
                assert!((1u64 << wr) - 1 >= rows as u64);
                assert!((1u64 << wc) - 1 >= cols as u64);
            }
        }
    }

    #[test]
    fn kept_matches_replay_oracle_exactly() {
        // Frozen from an independent bit-level simulation of the same
        // stream: widths (11, 9), derived seeds (1, 91).
        let (rs, cs) = Mask::default_specs(300, 100, 1).unwrap();
        assert_eq!(rs.to_string(), "w=11,taps=11+9,seed=0x1");
        assert_eq!(cs.to_string(), "w=9,taps=9+5,seed=0x5b");
        let mask = Mask::generate(300, 100, 0.9, rs, cs).unwrap();
        assert_eq!(mask.nnz(), 3000);
        assert_eq!(mask.steps_consumed(), 3138);
        assert_eq!(
            &mask.kept()[..8],
            &[
                (150, 8),
                (75, 54),
                (37, 77),
                (18, 88),
                (9, 94),
                (4, 47),
                (2, 23),
                (1, 61)
            ]
        );
    }

    #[test]
    fn full_density_covers_every_cell() {
        let (rs, cs) = Mask::default_specs(10, 10, 99).unwrap();
        let mask = Mask::generate(10, 10, 0.0, rs, cs).unwrap();
        assert_eq!(mask.nnz(), 100);
        assert_eq!(mask.steps_consumed(), 547);
        assert_eq!(&mask.kept()[..4], &[(2, 7), (6, 3), (3, 6), (1, 3)]);
        let unique: HashSet<_> = mask.kept().iter().collect();
        assert_eq!(unique.len(), 100);
    }

    #[test]
    fn single_cell_mask() {
        let (rs, cs) = Mask::default_specs(1, 1, 3).unwrap();
        let mask = Mask::generate(1, 1, 0.0, rs, cs).unwrap();
        assert_eq!(mask.kept(), &[(0, 0)]);
        assert!(mask.is_kept(0, 0));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = default_mask(120, 84, 0.7, 42);
        let b = default_mask(120, 84, 0.7, 42);
        assert_eq!(a, b);
        let c = default_mask(120, 84, 0.7, 43);
        assert_ne!(a.kept(), c.kept());
    }

    #[test]
    fn cardinality_is_exact_for_assorted_sparsities() {
        for sp in [0.0, 0.25, 0.5, 0.7, 0.9, 0.95] {
            let mask = default_mask(60, 35, sp, 5);
            let expect = ((1.0 - sp) * 2100.0).round() as usize;
            assert_eq!(mask.nnz(), expect, "sp={sp}");
            let stats = mask.stats();
            assert_eq!(stats.nnz, expect);
            assert!((stats.achieved_sparsity - (1.0 - expect as f64 / 2100.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn row_balance_is_tight_at_half_density() {
        let stats = default_mask(300, 100, 0.5, 7).stats();
        assert_eq!(stats.nnz, 15000);
        assert!(stats.row_cv < 0.25, "row cv {}", stats.row_cv);
        assert!(stats.col_cv < 0.25, "col cv {}", stats.col_cv);
        assert_eq!(
            stats.row_counts.iter().sum::<u32>(),
            stats.col_counts.iter().sum::<u32>()
        );
    }

    #[test]
    fn duplicate_overhead_is_small_at_high_sparsity() {
        let stats = default_mask(300, 100, 0.9, 1).stats();
        assert!(stats.duplicate_ratio < 1.5, "ratio {}", stats.duplicate_ratio);
        assert!(stats.duplicate_ratio >= 1.0);
    }

    #[test]
    fn equal_widths_exhaust_instead_of_looping_forever() {
        // Equal widths share one period, so the joint stream has only
        // 2^w - 1 distinct pairs and can never tile a 10x10 grid.
        let rs = LfsrSpec::with_default_taps(4, 1).unwrap();
        let cs = LfsrSpec::with_default_taps(4, 2).unwrap();
        match Mask::generate(10, 10, 0.0, rs, cs) {
            Err(MaskError::Exhausted { target: 100, .. }) => {}
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let (rs, cs) = Mask::default_specs(10, 10, 1).unwrap();
        assert!(matches!(
            Mask::generate(0, 10, 0.5, rs.clone(), cs.clone()),
            Err(MaskError::ZeroDimension { .. })
        ));
        for bad in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                Mask::generate(10, 10, bad, rs.clone(), cs.clone()),
                Err(MaskError::InvalidSparsity(_))
            ));
        }
        assert!(matches!(
            Mask::generate(2, 2, 0.9, rs.clone(), cs.clone()),
            Err(MaskError::EmptyTarget { .. })
        ));
        let narrow = LfsrSpec::with_default_taps(4, 1).unwrap();
        assert!(matches!(
            Mask::generate(20, 10, 0.5, narrow, cs.clone()),
            Err(MaskError::WidthTooNarrow {
                width: 4,
                n_items: 20
            })
        ));
        let non_primitive = LfsrSpec::new(4, &[4, 2], 1).unwrap();
        assert!(matches!(
            Mask::generate(10, 10, 0.5, non_primitive, cs),
            Err(MaskError::Lfsr(LfsrError::NonMaximal { .. }))
        ));
    }

    #[test]
    fn apply_zeroes_exactly_the_complement() {
        let mask = default_mask(30, 20, 0.6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dense = Matrix::gaussian(30, 20, &mut rng);
        let masked = mask.apply(&dense);
        for r in 0..30 {
            for c in 0..20 {
                if mask.is_kept(r, c) {
                    assert_eq!(masked.get(r, c), dense.get(r, c));
                } else {
                    assert_eq!(masked.get(r, c), 0.0);
                }
            }
        }
        assert_eq!(masked.count_nonzero(), mask.nnz());
    }

    #[test]
    fn rank_of_simple_matrices() {
        assert_eq!(numerical_rank(&Matrix::identity(10), DEFAULT_RANK_TOL), 10);
        assert_eq!(numerical_rank(&Matrix::zeros(8, 5), DEFAULT_RANK_TOL), 0);
        // Scaling must not change the outcome.
        let mut tiny = Matrix::identity(6);
        for v in tiny.data_mut() {
            *v *= 1e-30;
        }
        assert_eq!(numerical_rank(&tiny, DEFAULT_RANK_TOL), 6);
    }

    #[test]
    fn rank_detects_constructed_deficiency() {
        // A 50xr times rx40 product has rank exactly r almost surely.
        for r in [1, 5, 20] {
            let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
            let b = Matrix::gaussian(50, r, &mut rng);
            let c = Matrix::gaussian(r, 40, &mut rng);
            let prod = Matrix::from_fn(50, 40, |i, j| {
                (0..r).map(|k| b.get(i, k) * c.get(k, j)).sum()
            });
            assert_eq!(numerical_rank(&prod, DEFAULT_RANK_TOL), r);
        }
    }

    #[test]
    fn masked_gaussian_matrices_keep_near_full_rank() {
        for t in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let dense = Matrix::gaussian(120, 84, &mut rng);
            let masked = default_mask(120, 84, 0.5, 5000 + t).apply(&dense);
            assert!(numerical_rank(&masked, DEFAULT_RANK_TOL) >= 82, "trial {t}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kept_pairs_are_distinct_and_in_bounds(
            rows in 1usize..40,
            cols in 1usize..40,
            sp_percent in 0u32..95,
            seed in 0u64..1_000_000,
        ) {
            let sp = sp_percent as f64 / 100.0;
            let target = ((1.0 - sp) * (rows * cols) as f64).round() as usize;
            prop_assume!(target >= 1);
            let (rs, cs) = Mask::default_specs(rows, cols, seed).unwrap();
            let mask = Mask::generate(rows, cols, sp, rs, cs).unwrap();
            prop_assert_eq!(mask.nnz(), target);
            let mut seen = HashSet::new();
            for &(r, c) in mask.kept() {
                prop_assert!((r as usize) < rows && (c as usize) < cols);
                prop_assert!(seen.insert((r, c)), "duplicate pair ({r},{c})");
                prop_assert!(mask.is_kept(r as usize, c as usize));
            }
            prop_assert_eq!(mask.stats().duplicate_ratio >= 1.0, true);
        }
    }
}
