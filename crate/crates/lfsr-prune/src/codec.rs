//! Sparse-layer storage codecs and footprint accounting.
//!
//! Two formats are implemented. The register-replay format stores only the
//! nonzero values (in mask generation order) plus the two register specs
//! that regenerate the positions — no index arrays at all. The baseline
//! format is the classic value / relative-index / pointer layout: values S,
//! zero-gap indices I, and per-column start pointers P.
//!
//! ## Gap convention (baseline format)
//!
//! The decoder is the ground truth. Walking one column with a cursor `pos`
//! starting at 0, each entry k does: `pos += I[k]`, places `S[k]` at `pos`,
//! then `pos += 1`. A padding entry (S = 0, I = 2^b − 1) therefore consumes
//! `2^b − 1` zeros *and its own position holds a zero*, i.e. 2^b positions
//! total. Example, 4-bit indices, one column with nonzeros at rows 0 and 20:
//! the 19-zero gap becomes one padding entry (15 zeros + its own slot) plus
//! a real entry with I = 3, so I = [0, 15, 3].

use serde::Serialize;
use thiserror::Error;

use crate::lfsr::LfsrSpec;
use crate::mask::{Mask, MaskError};
use crate::matrix::Matrix;
use crate::net::Layer;

/// Bits for each stored pointer in the baseline format.
pub const POINTER_BITS: u64 = 32;
/// Bits charged for one register spec in the replay format.
pub const SPEC_BITS: u64 = 64;
/// Bits for the per-layer quantization scale, when present.
pub const SCALE_BITS: u64 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("layer has no mask; prune before encoding")]
    MissingMask,
    #[error("index_bits {0} unsupported, expected 4 or 8")]
    BadIndexBits(u8),
    #[error("value_bits {0} unsupported, expected 8 or 32")]
    BadValueBits(u8),
    #[error("S has {s_len} entries but I has {i_len}")]
    LengthMismatch { s_len: usize, i_len: usize },
    #[error("pointer vector malformed: {0}")]
    MalformedPointers(String),
    #[error("relative index {index} needs more than {index_bits} bits")]
    IndexOverflow { index: u32, index_bits: u8 },
    #[error("column {col} decodes past row {rows}")]
    RowOverflow { col: usize, rows: usize },
    #[error("footprint comparison mixes value_bits {a} and {b}")]
    ValueBitsMismatch { a: u8, b: u8 },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Stored value payload: raw single-precision floats, or 8-bit symmetric
/// quantized codes plus one per-layer scale.
///
/// Quantization uses `scale = max|w| / 127` (held as single precision) and
/// `code = round(w / scale)` clamped to ±127. Quantizing already-quantized
/// values reproduces the same codes and scale bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ValueStore {
    Float(Vec<f32>),
    Quantized { scale: f32, codes: Vec<i8> },
}

impl ValueStore {
    /// Builds the payload from full-precision values.
    pub fn build(values: &[f64], quantized: bool) -> ValueStore {
        if quantized {
            let (scale, codes) = quantize_symmetric(values);
            ValueStore::Quantized { scale, codes }
        } else {
            ValueStore::Float(values.iter().map(|&v| v as f32).collect())
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ValueStore::Float(v) => v.len(),
            ValueStore::Quantized { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 32 for float storage, 8 for quantized.
    pub fn value_bits(&self) -> u8 {
        match self {
            ValueStore::Float(_) => 32,
            ValueStore::Quantized { .. } => 8,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, ValueStore::Quantized { .. })
    }

    /// Reconstructed full-precision value at position `k`.
    pub fn get(&self, k: usize) -> f64 {
        match self {
            ValueStore::Float(v) => v[k] as f64,
            ValueStore::Quantized { scale, codes } => codes[k] as f64 * *scale as f64,
        }
    }
}

/// 8-bit symmetric quantization: per-slice scale `max|v| / 127`, codes
/// rounded and clamped to ±127. An all-zero slice gets scale 1.
pub fn quantize_symmetric(values: &[f64]) -> (f32, Vec<i8>) {
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return (1.0, vec![0; values.len()]);
    }
    let scale = (max_abs / 127.0) as f32;
    let s = scale as f64;
    let codes = values
        .iter()
        .map(|&v| (v / s).round().clamp(-127.0, 127.0) as i8)
        .collect();
    (scale, codes)
}

/// A sparse layer stored as values plus the register specs that regenerate
/// every position. Decoding replays the paired-register stream with the
/// stored nnz target and scatters `values[k]` to the k-th kept cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LfsrSparseLayer {
    pub rows: usize,
    pub cols: usize,
    pub row_spec: LfsrSpec,
    pub col_spec: LfsrSpec,
    pub nnz: usize,
    pub values: ValueStore,
    pub bias: Vec<f32>,
}

/// A sparse layer in value / relative-index / pointer form.
///
/// `s` holds entry values including padding zeros; `i` holds the zero-gap
/// before each entry (see the module docs for the exact convention); `p`
/// holds `cols + 1` offsets into `s`/`i`, with `p[c]..p[c+1]` spanning
/// column c. `nnz` counts true nonzeros, so `alpha() = |S| / nnz ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineCompressed {
    pub rows: usize,
    pub cols: usize,
    pub index_bits: u8,
    pub s: ValueStore,
    pub i: Vec<u16>,
    pub p: Vec<u32>,
    pub nnz: usize,
    pub bias: Vec<f32>,
}

impl BaselineCompressed {
    /// Stored entries (padding included) per true nonzero; 1 for an empty
    /// layer.
    pub fn alpha(&self) -> f64 {
        if self.nnz == 0 {
            1.0
        } else {
            self.s.len() as f64 / self.nnz as f64
        }
    }

    /// Structural invariants: |S| = |I|, pointers non-decreasing from 0 to
    /// |S| with one per column boundary, and every index within range.
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.index_bits != 4 && self.index_bits != 8 {
            return Err(CodecError::BadIndexBits(self.index_bits));
        }
        if self.s.len() != self.i.len() {
            return Err(CodecError::LengthMismatch {
                s_len: self.s.len(),
                i_len: self.i.len(),
            });
        }
        if self.p.len() != self.cols + 1 {
            return Err(CodecError::MalformedPointers(format!(
                "{} pointers for {} columns",
                self.p.len(),
                self.cols
            )));
        }
        if self.p[0] != 0 {
            return Err(CodecError::MalformedPointers(format!(
                "first pointer {} nonzero",
                self.p[0]
            )));
        }
        if self.p[self.cols] as usize != self.s.len() {
            return Err(CodecError::MalformedPointers(format!(
                "last pointer {} but |S| = {}",
                self.p[self.cols],
                self.s.len()
            )));
        }
        if self.p.windows(2).any(|w| w[1] < w[0]) {
            return Err(CodecError::MalformedPointers("not non-decreasing".into()));
        }
        let limit = (1u32 << self.index_bits) - 1;
        for &gap in &self.i {
            if gap as u32 > limit {
                return Err(CodecError::IndexOverflow {
                    index: gap as u32,
                    index_bits: self.index_bits,
                });
            }
        }
        Ok(())
    }
}

fn require_value_bits(bits: u8) -> Result<bool, CodecError> {
    match bits {
        8 => Ok(true),
        32 => Ok(false),
        other => Err(CodecError::BadValueBits(other)),
    }
}

/// Encodes a pruned layer into the register-replay format.
///
/// Values are gathered in mask generation order; positions are not stored.
/// Entries outside the kept set are assumed already zero (prune first) and
/// are not represented. `value_bits` is 8 (quantized) or 32.
pub fn encode_lfsr(layer: &Layer, value_bits: u8) -> Result<LfsrSparseLayer, CodecError> {
    let quantized = require_value_bits(value_bits)?;
    let mask = layer.mask.as_ref().ok_or(CodecError::MissingMask)?;
    let gathered: Vec<f64> = mask
        .kept()
        .iter()
        .map(|&(r, c)| layer.weights.get(r as usize, c as usize))
        .collect();
    Ok(LfsrSparseLayer {
        rows: mask.rows(),
        cols: mask.cols(),
        row_spec: mask.row_spec().clone(),
        col_spec: mask.col_spec().clone(),
        nnz: mask.nnz(),
        values: ValueStore::build(&gathered, quantized),
        bias: layer.bias.iter().map(|&b| b as f32).collect(),
    })
}

/// Rebuilds the dense layer: replays the mask from the stored specs and
/// scatters `values[k]` to the k-th kept position. The replayed mask rides
/// along on the returned layer.
pub fn decode_lfsr(sparse: &LfsrSparseLayer) -> Result<Layer, CodecError> {
    let mask = Mask::replay(
        sparse.rows,
        sparse.cols,
        sparse.nnz,
        sparse.row_spec.clone(),
        sparse.col_spec.clone(),
    )?;
    let mut weights = Matrix::zeros(sparse.rows, sparse.cols);
    for (k, &(r, c)) in mask.kept().iter().enumerate() {
        weights.set(r as usize, c as usize, sparse.values.get(k));
    }
    Ok(Layer {
        weights,
        bias: sparse.bias.iter().map(|&b| b as f64).collect(),
        mask: Some(mask),
    })
}

/// Encodes a layer into the value / relative-index / pointer format.
///
/// Column-major walk; each nonzero's index is the zero-gap since the
/// previous entry in its column. While a gap exceeds `2^index_bits − 1`, a
/// padding entry (S = 0, I = 2^index_bits − 1) is emitted, consuming
/// `2^index_bits − 1` zeros plus its own position.
pub fn encode_baseline(
    layer: &Layer,
    index_bits: u8,
    value_bits: u8,
) -> Result<BaselineCompressed, CodecError> {
    if index_bits != 4 && index_bits != 8 {
        return Err(CodecError::BadIndexBits(index_bits));
    }
    let quantized = require_value_bits(value_bits)?;
    let max_gap = (1u32 << index_bits) - 1;
    let (rows, cols) = (layer.weights.rows(), layer.weights.cols());

    let mut s_raw = Vec::new();
    let mut i = Vec::new();
    let mut p = Vec::with_capacity(cols + 1);
    let mut nnz = 0usize;
    p.push(0u32);
    for c in 0..cols {
        let mut pos = 0usize; // next undescribed row
        for r in 0..rows {
            let w = layer.weights.get(r, c);
            if w == 0.0 {
                continue;
            }
            nnz += 1;
            let mut gap = (r - pos) as u32;
            while gap > max_gap {
                s_raw.push(0.0);
                i.push(max_gap as u16);
                gap -= max_gap + 1; // padding consumes max_gap zeros + its own slot
            }
            s_raw.push(w);
            i.push(gap as u16);
            pos = r + 1;
        }
        p.push(s_raw.len() as u32);
    }

    Ok(BaselineCompressed {
        rows,
        cols,
        index_bits,
        s: ValueStore::build(&s_raw, quantized),
        i,
        p,
        nnz,
        bias: layer.bias.iter().map(|&b| b as f32).collect(),
    })
}

/// Decodes the value / relative-index / pointer format back to a dense
/// layer. This walk *is* the gap convention; the encoder must round-trip
/// through it.
///
/// The stored `nnz` is metadata (it feeds `alpha`) and is not re-derivable
/// from the payload: quantization can turn a small true nonzero into a
/// stored zero, which decodes identically to a padding entry.
pub fn decode_baseline(c: &BaselineCompressed) -> Result<Layer, CodecError> {
    c.validate()?;
    let mut weights = Matrix::zeros(c.rows, c.cols);
    for col in 0..c.cols {
        let mut pos = 0usize;
        for k in c.p[col] as usize..c.p[col + 1] as usize {
            pos += c.i[k] as usize;
            if pos >= c.rows {
                return Err(CodecError::RowOverflow { col, rows: c.rows });
            }
            let v = c.s.get(k);
            if v != 0.0 {
                weights.set(pos, col, v);
            }
            pos += 1;
        }
    }
    Ok(Layer {
        weights,
        bias: c.bias.iter().map(|&b| b as f64).collect(),
        mask: None,
    })
}

/// Storage bits for one replay-format layer: values, two register specs,
/// and the quantization scale when present. Biases are excluded — both
/// formats store them identically, so they cancel in every comparison.
pub fn lfsr_bits(sparse: &LfsrSparseLayer) -> u64 {
    sparse.nnz as u64 * sparse.values.value_bits() as u64
        + 2 * SPEC_BITS
        + if sparse.values.is_quantized() {
            SCALE_BITS
        } else {
            0
        }
}

/// Storage bits for one baseline layer: every stored entry pays value plus
/// index bits, and the pointer vector pays 32 bits per column boundary.
pub fn baseline_bits(c: &BaselineCompressed) -> u64 {
    c.s.len() as u64 * (c.s.value_bits() as u64 + c.index_bits as u64)
        + baseline_pointer_bits(c)
        + if c.s.is_quantized() { SCALE_BITS } else { 0 }
}

/// The pointer vector's share of [`baseline_bits`], reported separately.
pub fn baseline_pointer_bits(c: &BaselineCompressed) -> u64 {
    (c.cols as u64 + 1) * POINTER_BITS
}

/// One layer's storage comparison between the two formats.
#[derive(Debug, Clone, Serialize)]
pub struct LayerFootprint {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub value_bits: u8,
    pub index_bits: u8,
    pub alpha: f64,
    pub proposed_bits: u64,
    pub baseline_bits: u64,
    pub baseline_pointer_bits: u64,
    pub ratio: f64,
}

/// Whole-model storage comparison; ratio is baseline over proposed.
#[derive(Debug, Clone, Serialize)]
pub struct FootprintReport {
    pub layers: Vec<LayerFootprint>,
    pub total_proposed_bits: u64,
    pub total_baseline_bits: u64,
    pub ratio: f64,
}

/// Compares per-layer storage across formats. Every pair must describe the
/// same shape at the same value precision.
pub fn footprint(
    pairs: &[(&LfsrSparseLayer, &BaselineCompressed)],
) -> Result<FootprintReport, CodecError> {
    let mut layers = Vec::with_capacity(pairs.len());
    let mut total_proposed = 0u64;
    let mut total_baseline = 0u64;
    for &(sparse, base) in pairs {
        if sparse.values.value_bits() != base.s.value_bits() {
            return Err(CodecError::ValueBitsMismatch {
                a: sparse.values.value_bits(),
                b: base.s.value_bits(),
            });
        }
        let proposed = lfsr_bits(sparse);
        let baseline = baseline_bits(base);
        total_proposed += proposed;
        total_baseline += baseline;
        layers.push(LayerFootprint {
            rows: sparse.rows,
            cols: sparse.cols,
            nnz: sparse.nnz,
            value_bits: sparse.values.value_bits(),
            index_bits: base.index_bits,
            alpha: base.alpha(),
            proposed_bits: proposed,
            baseline_bits: baseline,
            baseline_pointer_bits: baseline_pointer_bits(base),
            ratio: baseline as f64 / proposed as f64,
        });
    }
    Ok(FootprintReport {
        layers,
        total_proposed_bits: total_proposed,
        total_baseline_bits: total_baseline,
        ratio: total_baseline as f64 / total_proposed as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// An f64 matrix whose entries are all exactly representable as f32,
    /// so float-mode round-trips can demand bit equality.
    fn f32_exact_gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense = Matrix::gaussian(rows, cols, &mut rng);
        Matrix::from_vec(
            rows,
            cols,
            dense.data().iter().map(|&v| v as f32 as f64).collect(),
        )
    }

    fn masked_layer(rows: usize, cols: usize, sp: f64, seed: u64) -> Layer {
        let (rs, cs) = Mask::default_specs(rows, cols, seed).unwrap();
        let mask = Mask::generate(rows, cols, sp, rs, cs).unwrap();
        let mut weights = f32_exact_gaussian(rows, cols, seed ^ 0xABCD);
        mask.zero_pruned(&mut weights);
        let bias: Vec<f64> = (0..cols).map(|j| (j as f64 / 8.0) as f32 as f64).collect();
        Layer {
            weights,
            bias,
            mask: Some(mask),
        }
    }

    fn single_column_layer(rows: usize, nonzeros: &[(usize, f64)]) -> Layer {
        let mut weights = Matrix::zeros(rows, 1);
        for &(r, v) in nonzeros {
            weights.set(r, 0, v);
        }
        Layer {
            weights,
            bias: vec![0.0],
            mask: None,
        }
    }

    #[test]
    fn single_cell_replay_roundtrip() {
        let (rs, cs) = Mask::default_specs(1, 1, 3).unwrap();
        let mask = Mask::generate(1, 1, 0.0, rs, cs).unwrap();
        let layer = Layer {
            weights: Matrix::from_vec(1, 1, vec![0.5]),
            bias: vec![0.25],
            mask: Some(mask),
        };
        let sparse = encode_lfsr(&layer, 32).unwrap();
        assert_eq!(sparse.nnz, 1);
        assert_eq!(sparse.values, ValueStore::Float(vec![0.5]));
        let back = decode_lfsr(&sparse).unwrap();
        assert_eq!(back.weights.get(0, 0), 0.5);
        assert_eq!(back.bias, vec![0.25]);
    }

    #[test]
    fn replay_roundtrip_is_exact_in_float_mode() {
        let layer = masked_layer(300, 100, 0.9, 1);
        let sparse = encode_lfsr(&layer, 32).unwrap();
        assert_eq!(sparse.nnz, 3000);
        let back = decode_lfsr(&sparse).unwrap();
        assert_eq!(back.weights, layer.weights);
        assert_eq!(back.bias, layer.bias);
        // Decoding carries a mask identical to the original.
        assert_eq!(back.mask.as_ref().unwrap().kept(), layer.mask.as_ref().unwrap().kept());
    }

    #[test]
    fn replay_decode_matches_independent_scatter() {
        // Rebuild the dense matrix by replaying the mask separately and
        // scattering, then compare against decode's output.
        let layer = masked_layer(300, 100, 0.9, 7);
        let sparse = encode_lfsr(&layer, 32).unwrap();
        let back = decode_lfsr(&sparse).unwrap();

        let mask = Mask::replay(
            300,
            100,
            sparse.nnz,
            sparse.row_spec.clone(),
            sparse.col_spec.clone(),
        )
        .unwrap();
        let mut oracle = Matrix::zeros(300, 100);
        for (k, &(r, c)) in mask.kept().iter().enumerate() {
            oracle.set(r as usize, c as usize, sparse.values.get(k));
        }
        assert_eq!(back.weights, oracle);
    }

    #[test]
    fn encode_requires_mask() {
        let layer = single_column_layer(4, &[(0, 1.0)]);
        assert_eq!(encode_lfsr(&layer, 32).unwrap_err(), CodecError::MissingMask);
        assert_eq!(
            encode_lfsr(&masked_layer(4, 4, 0.5, 1), 16).unwrap_err(),
            CodecError::BadValueBits(16)
        );
    }

    #[test]
    fn quantized_replay_roundtrip_is_idempotent() {
        let layer = masked_layer(120, 84, 0.7, 5);
        let sparse = encode_lfsr(&layer, 8).unwrap();
        let back = decode_lfsr(&sparse).unwrap();
        // Second persistence pass changes nothing.
        let sparse2 = encode_lfsr(&back, 8).unwrap();
        assert_eq!(sparse, sparse2);
        let back2 = decode_lfsr(&sparse2).unwrap();
        assert_eq!(back.weights, back2.weights);

        // Quantized values stay within half a step of the originals.
        let scale = match sparse.values {
            ValueStore::Quantized { scale, .. } => scale as f64,
            _ => unreachable!(),
        };
        let mask = layer.mask.as_ref().unwrap();
        for &(r, c) in mask.kept() {
            let (orig, deq) = (
                layer.weights.get(r as usize, c as usize),
                back.weights.get(r as usize, c as usize),
            );
            assert!(
                (orig - deq).abs() <= scale * 0.5 + 1e-12,
                "({r},{c}): {orig} vs {deq}"
            );
        }
    }

    #[test]
    fn quantization_scale_comes_from_the_extreme_value() {
        let (scale, codes) = quantize_symmetric(&[0.5, -1.27, 0.01, 0.0]);
        assert_eq!(scale, (1.27f64 / 127.0) as f32);
        assert_eq!(codes[1], -127);
        assert_eq!(codes[3], 0);
        // round(0.5 / 0.01) = 50
        assert_eq!(codes[0], 50);
        let (zscale, zcodes) = quantize_symmetric(&[0.0, 0.0]);
        assert_eq!(zscale, 1.0);
        assert_eq!(zcodes, vec![0, 0]);
    }

    #[test]
    fn gap_example_forced_by_the_decoder() {
        // One column, nonzeros at rows 0 and 20, 4-bit indices: the 19-zero
        // gap costs one padding entry (15 zeros + its own slot) and leaves 3.
        let layer = single_column_layer(24, &[(0, 1.5), (20, -2.5)]);
        let c = encode_baseline(&layer, 4, 32).unwrap();
        assert_eq!(c.s, ValueStore::Float(vec![1.5, 0.0, -2.5]));
        assert_eq!(c.i, vec![0, 15, 3]);
        assert_eq!(c.p, vec![0, 3]);
        assert_eq!(c.nnz, 2);
        assert_eq!(c.alpha(), 1.5);
        let back = decode_baseline(&c).unwrap();
        assert_eq!(back.weights, layer.weights);
    }

    #[test]
    fn dense_column_has_zero_gaps_and_alpha_one() {
        let layer = single_column_layer(6, &[(0, 1.0), (1, 2.0), (2, 3.0), (3, 4.0), (4, 5.0), (5, 6.0)]);
        for bits in [4u8, 8] {
            let c = encode_baseline(&layer, bits, 32).unwrap();
            assert!(c.i.iter().all(|&g| g == 0), "bits={bits}");
            assert_eq!(c.alpha(), 1.0);
            assert_eq!(decode_baseline(&c).unwrap().weights, layer.weights);
        }
    }

    #[test]
    fn long_leading_gap_needs_multiple_padding_entries() {
        // First nonzero at row 33, 4-bit: gaps of 16 positions per padding
        // entry, so 33 = 16 + 16 + 1 → two paddings then I = 1.
        let layer = single_column_layer(40, &[(33, 7.0)]);
        let c = encode_baseline(&layer, 4, 32).unwrap();
        assert_eq!(c.i, vec![15, 15, 1]);
        assert_eq!(c.nnz, 1);
        assert_eq!(c.alpha(), 3.0);
        assert_eq!(decode_baseline(&c).unwrap().weights, layer.weights);

        // 8-bit indices swallow the same gap whole.
        let c8 = encode_baseline(&layer, 8, 32).unwrap();
        assert_eq!(c8.i, vec![33]);
        assert_eq!(c8.alpha(), 1.0);
    }

    #[test]
    fn empty_and_trailing_columns_decode_cleanly() {
        let mut weights = Matrix::zeros(10, 3);
        weights.set(2, 1, 4.0); // column 0 empty, column 2 empty
        let layer = Layer {
            weights,
            bias: vec![0.0; 3],
            mask: None,
        };
        let c = encode_baseline(&layer, 4, 32).unwrap();
        assert_eq!(c.p, vec![0, 0, 1, 1]);
        assert_eq!(decode_baseline(&c).unwrap().weights, layer.weights);

        let empty = encode_baseline(&single_column_layer(5, &[]), 8, 32).unwrap();
        assert_eq!(empty.nnz, 0);
        assert_eq!(empty.alpha(), 1.0);
        assert_eq!(decode_baseline(&empty).unwrap().weights, Matrix::zeros(5, 1));
    }

    #[test]
    fn seeded_sparse_roundtrip_with_measured_alpha() {
        let layer = masked_layer(300, 100, 0.95, 11);
        let c = encode_baseline(&layer, 4, 32).unwrap();
        let back = decode_baseline(&c).unwrap();
        assert_eq!(back.weights, layer.weights);
        let alpha = c.alpha();
        assert!(alpha > 1.0 && alpha < 3.0, "alpha {alpha}");
    }

    #[test]
    fn quantized_baseline_roundtrip_is_idempotent() {
        // The first quantization may turn tiny nonzeros into stored zeros,
        // which drop out of the structure on the next encode. From then on
        // the format is a fixed point: dense content and structure repeat.
        let layer = masked_layer(64, 48, 0.8, 13);
        let c = encode_baseline(&layer, 8, 8).unwrap();
        let back = decode_baseline(&c).unwrap();
        let c2 = encode_baseline(&back, 8, 8).unwrap();
        let back2 = decode_baseline(&c2).unwrap();
        assert_eq!(back2.weights, back.weights);
        let c3 = encode_baseline(&back2, 8, 8).unwrap();
        assert_eq!(c3, c2);
    }

    #[test]
    fn both_formats_quantize_with_one_shared_scale() {
        // Same pruned layer, same extreme value → identical scales, so the
        // two formats reconstruct identical dense matrices.
        let layer = masked_layer(80, 60, 0.9, 17);
        let a = encode_lfsr(&layer, 8).unwrap();
        let b = encode_baseline(&layer, 8, 8).unwrap();
        let (sa, sb) = match (&a.values, &b.s) {
            (
                ValueStore::Quantized { scale: sa, .. },
                ValueStore::Quantized { scale: sb, .. },
            ) => (*sa, *sb),
            _ => unreachable!(),
        };
        assert_eq!(sa, sb);
        assert_eq!(
            decode_lfsr(&a).unwrap().weights,
            decode_baseline(&b).unwrap().weights
        );
    }

    #[test]
    fn validation_rejects_malformed_structures() {
        let layer = single_column_layer(24, &[(0, 1.5), (20, -2.5)]);
        let good = encode_baseline(&layer, 4, 32).unwrap();

        let mut bad = good.clone();
        bad.i.pop();
        assert!(matches!(
            decode_baseline(&bad),
            Err(CodecError::LengthMismatch { .. })
        ));

        let mut bad = good.clone();
        bad.p = vec![0, 2];
        assert!(matches!(
            decode_baseline(&bad),
            Err(CodecError::MalformedPointers(_))
        ));

        let mut bad = good.clone();
        bad.i[2] = 16;
        assert!(matches!(
            decode_baseline(&bad),
            Err(CodecError::IndexOverflow {
                index: 16,
                index_bits: 4
            })
        ));

        let mut bad = good;
        bad.i[2] = 7; // cursor 17 + 7 = 24, past the last row index 23
        assert!(matches!(
            decode_baseline(&bad),
            Err(CodecError::RowOverflow { col: 0, rows: 24 })
        ));

        assert_eq!(
            encode_baseline(&layer, 5, 32).unwrap_err(),
            CodecError::BadIndexBits(5)
        );
    }

    #[test]
    fn footprint_arithmetic_is_forced() {
        // nnz = 3000 at 8-bit values: 3000×8 + 2×64 spec bits + 32 scale.
        let layer = masked_layer(300, 100, 0.9, 1);
        let sparse = encode_lfsr(&layer, 8).unwrap();
        assert_eq!(lfsr_bits(&sparse), 3000 * 8 + 128 + 32);
        let float = encode_lfsr(&layer, 32).unwrap();
        assert_eq!(lfsr_bits(&float), 3000 * 32 + 128);

        // Baseline at alpha 1: |S|×(8+8) + 101 pointers × 32 + scale.
        let base = encode_baseline(&layer, 8, 8).unwrap();
        assert_eq!(base.alpha(), 1.0);
        assert_eq!(baseline_pointer_bits(&base), 101 * 32);
        assert_eq!(baseline_bits(&base), 3000 * 16 + 101 * 32 + 32);

        let report = footprint(&[(&sparse, &base)]).unwrap();
        let ratio = report.ratio;
        assert!((ratio - 2.1).abs() < 0.05, "ratio {ratio}");
        assert_eq!(report.total_proposed_bits, lfsr_bits(&sparse));
        assert_eq!(report.total_baseline_bits, baseline_bits(&base));
    }

    #[test]
    fn footprint_grid_stays_in_the_documented_band() {
        // Shapes × sparsities × index widths; every ratio in [1.4, 3.5] and
        // the 8-bit-index column at least 1.9.
        for &(rows, cols) in &[(300usize, 100usize), (400, 120), (2048, 2048)] {
            for &sp in &[0.4, 0.7, 0.95] {
                for &ib in &[4u8, 8] {
                    let layer = masked_layer(rows, cols, sp, 21);
                    let sparse = encode_lfsr(&layer, 8).unwrap();
                    let base = encode_baseline(&layer, ib, 8).unwrap();
                    let r = footprint(&[(&sparse, &base)]).unwrap().ratio;
                    assert!(
                        (1.4..=3.5).contains(&r),
                        "{rows}x{cols} sp={sp} ib={ib}: ratio {r}"
                    );
                    if ib == 8 {
                        assert!(r >= 1.9, "{rows}x{cols} sp={sp}: 8-bit ratio {r}");
                    }
                }
            }
        }
    }

    #[test]
    fn footprint_rejects_mixed_precision() {
        let layer = masked_layer(30, 20, 0.5, 3);
        let sparse = encode_lfsr(&layer, 32).unwrap();
        let base = encode_baseline(&layer, 8, 8).unwrap();
        assert_eq!(
            footprint(&[(&sparse, &base)]).unwrap_err(),
            CodecError::ValueBitsMismatch { a: 32, b: 8 }
        );
    }

    #[test]
    fn proposed_bits_ignore_index_width_and_baseline_grows_with_alpha() {
        let layer = masked_layer(300, 100, 0.95, 9);
        let sparse = encode_lfsr(&layer, 8).unwrap();
        let b4 = encode_baseline(&layer, 4, 8).unwrap();
        let b8 = encode_baseline(&layer, 8, 8).unwrap();
        let r4 = footprint(&[(&sparse, &b4)]).unwrap();
        let r8 = footprint(&[(&sparse, &b8)]).unwrap();
        assert_eq!(r4.total_proposed_bits, r8.total_proposed_bits);
        assert!(b4.alpha() > b8.alpha());

        // Stretching gaps strictly raises alpha and baseline bits: same
        // nonzero count, increasingly far apart.
        let mut last_alpha = 0.0;
        let mut last_bits = 0;
        for stride in [1usize, 20, 40] {
            let nz: Vec<(usize, f64)> = (0..10).map(|k| (k * stride, 1.0)).collect();
            let column = single_column_layer(400, &nz);
            let c = encode_baseline(&column, 4, 32).unwrap();
            assert!(c.alpha() >= last_alpha);
            if stride > 1 {
                assert!(c.alpha() > last_alpha, "stride {stride}");
                assert!(baseline_bits(&c) > last_bits);
            }
            last_alpha = c.alpha();
            last_bits = baseline_bits(&c);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn fuzzed_baseline_roundtrip(
            rows in 1usize..64,
            cols in 1usize..64,
            sp_percent in 0u32..99,
            seed in 0u64..1_000_000,
            index_bits in prop::sample::select(vec![4u8, 8]),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut weights = Matrix::gaussian(rows, cols, &mut rng);
            for v in weights.data_mut() {
                *v = *v as f32 as f64;
                if (seed ^ (v.to_bits() >> 30)) % 100 < sp_percent as u64 {
                    *v = 0.0;
                }
            }
            let layer = Layer { weights, bias: vec![0.0; cols], mask: None };
            let c = encode_baseline(&layer, index_bits, 32).unwrap();
            prop_assert!(c.validate().is_ok());
            prop_assert!(c.alpha() >= 1.0);
            let back = decode_baseline(&c).unwrap();
            prop_assert_eq!(back.weights, layer.weights);
        }

        #[test]
        fn fuzzed_replay_roundtrip(
            rows in 1usize..64,
            cols in 1usize..64,
            sp_percent in 0u32..99,
            seed in 0u64..1_000_000,
            value_bits in prop::sample::select(vec![8u8, 32]),
        ) {
            let sp = sp_percent as f64 / 100.0;
            let target = ((1.0 - sp) * (rows * cols) as f64).round() as usize;
            prop_assume!(target >= 1);
            let layer = masked_layer(rows, cols, sp, seed);
            let sparse = encode_lfsr(&layer, value_bits).unwrap();
            let back = decode_lfsr(&sparse).unwrap();
            let again = encode_lfsr(&back, value_bits).unwrap();
            prop_assert_eq!(&sparse, &again);
            if value_bits == 32 {
                prop_assert_eq!(&back.weights, &layer.weights);
            }
            prop_assert_eq!(decode_lfsr(&again).unwrap().weights, back.weights);
        }
    }
}
