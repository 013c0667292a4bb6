//! Matrix-vector kernels over the three storage forms, instrumented with
//! memory-access counters.
//!
//! Each kernel mirrors one datapath. The dense kernel touches every weight.
//! The replay kernel regenerates positions from the two registers — no
//! index or pointer traffic at all — at the cost of one output-buffer read
//! and one write per entry (positions arrive in generation order, not
//! column order, so accumulation is read-modify-write). The baseline kernel
//! walks columns through the pointer vector, paying an index read per
//! stored entry (padding included) but accumulating each column in a
//! register and writing the output once.
//!
//! Float kernels compute in f64 and may reorder sums; they agree to
//! floating-point reordering tolerance. The 8-bit integer kernels
//! accumulate `i32` products of value and input codes and share one
//! finishing step, so all of them produce bit-identical outputs.
//!
//! Duplicate skipping during replay needs a visited bitset; that structure
//! is a software-model artifact and is deliberately not charged to any
//! counter.

use serde::Serialize;
use thiserror::Error;

use crate::codec::{BaselineCompressed, CodecError, LfsrSparseLayer, ValueStore};
use crate::mask::{Mask, MaskError};
use crate::net::Layer;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("input has {got} entries, kernel expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error(transparent)]
    Replay(#[from] MaskError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("integer kernel requires 8-bit quantized values, found {0}-bit floats")]
    NotQuantized(u8),
}

/// Memory and arithmetic counters for one kernel invocation.
///
/// The CSV row for a trace has the fixed header
/// `weight_mem_reads,index_mem_reads,pointer_mem_reads,input_buffer_reads,output_buffer_reads,output_buffer_writes,mac_ops,lfsr_steps,cycles`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessTrace {
    pub weight_mem_reads: u64,
    pub index_mem_reads: u64,
    pub pointer_mem_reads: u64,
    pub input_buffer_reads: u64,
    pub output_buffer_reads: u64,
    pub output_buffer_writes: u64,
    pub mac_ops: u64,
    pub lfsr_steps: u64,
}

/// Column names for [`AccessTrace::csv_row`], `cycles` last.
pub const TRACE_CSV_HEADER: &str = "weight_mem_reads,index_mem_reads,pointer_mem_reads,\
input_buffer_reads,output_buffer_reads,output_buffer_writes,mac_ops,lfsr_steps,cycles";

impl AccessTrace {
    /// Total operations under a one-operation-per-cycle model.
    pub fn cycles(&self) -> u64 {
        self.weight_mem_reads
            + self.index_mem_reads
            + self.pointer_mem_reads
            + self.input_buffer_reads
            + self.output_buffer_reads
            + self.output_buffer_writes
            + self.mac_ops
            + self.lfsr_steps
    }

    /// One CSV row matching [`TRACE_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.weight_mem_reads,
            self.index_mem_reads,
            self.pointer_mem_reads,
            self.input_buffer_reads,
            self.output_buffer_reads,
            self.output_buffer_writes,
            self.mac_ops,
            self.lfsr_steps,
            self.cycles()
        )
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), KernelError> {
    if expected != got {
        return Err(KernelError::InputDim { expected, got });
    }
    Ok(())
}

fn apply_relu(y: &mut [f64]) {
    for v in y {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Dense reference path: reads all `rows × cols` weights.
pub fn dense_matvec(
    layer: &Layer,
    x: &[f64],
    relu: bool,
) -> Result<(Vec<f64>, AccessTrace), KernelError> {
    let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
    check_len(rows, x.len())?;
    let mut y = layer.bias.clone();
    for (i, &xi) in x.iter().enumerate() {
        let row = layer.weights.row(i);
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += row[j] * xi;
        }
    }
    if relu {
        apply_relu(&mut y);
    }
    let n = (rows * cols) as u64;
    let trace = AccessTrace {
        weight_mem_reads: n,
        input_buffer_reads: n,
        output_buffer_writes: cols as u64,
        mac_ops: n,
        ..AccessTrace::default()
    };
    Ok((y, trace))
}

/// Replay path: regenerates every position from the stored register specs.
///
/// Accumulators start at the bias. For the k-th distinct pair (i, j):
/// one input read, one value read, one MAC, and a read-modify-write of
/// output j. Register stepping is counted for *every* draw, duplicates
/// included, two steps per draw (one per register). No index or pointer
/// traffic exists on this path.
pub fn lfsr_sparse_matvec(
    sparse: &LfsrSparseLayer,
    x: &[f64],
    relu: bool,
) -> Result<(Vec<f64>, AccessTrace), KernelError> {
    check_len(sparse.rows, x.len())?;
    let mask = replay_mask(sparse)?;
    let mut y: Vec<f64> = sparse.bias.iter().map(|&b| b as f64).collect();
    for (k, &(r, c)) in mask.kept().iter().enumerate() {
        y[c as usize] += sparse.values.get(k) * x[r as usize];
    }
    if relu {
        apply_relu(&mut y);
    }
    Ok((y, lfsr_trace(&mask)))
}

/// Baseline path: walks columns via the pointer vector; every stored entry
/// (padding included) costs an index read, a value read, an input read, and
/// a MAC. Each column accumulates in a register and writes out once.
pub fn baseline_sparse_matvec(
    c: &BaselineCompressed,
    x: &[f64],
    relu: bool,
) -> Result<(Vec<f64>, AccessTrace), KernelError> {
    check_len(c.rows, x.len())?;
    c.validate()?;
    let mut y = Vec::with_capacity(c.cols);
    for col in 0..c.cols {
        let mut acc = 0.0;
        let mut pos = 0usize;
        for k in c.p[col] as usize..c.p[col + 1] as usize {
            pos += c.i[k] as usize;
            if pos >= c.rows {
                return Err(KernelError::Codec(CodecError::RowOverflow {
                    col,
                    rows: c.rows,
                }));
            }
            acc += c.s.get(k) * x[pos];
            pos += 1;
        }
        y.push(acc + c.bias[col] as f64);
    }
    if relu {
        apply_relu(&mut y);
    }
    Ok((y, baseline_trace(c)))
}

/// An input vector in 8-bit symmetric quantized form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedVec {
    pub scale: f32,
    pub codes: Vec<i8>,
}

/// Quantizes an activation vector with the same symmetric scheme used for
/// weights.
pub fn quantize_vec(x: &[f64]) -> QuantizedVec {
    let (scale, codes) = crate::codec::quantize_symmetric(x);
    QuantizedVec { scale, codes }
}

impl QuantizedVec {
    /// Reconstructed full-precision values.
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes
            .iter()
            .map(|&c| c as f64 * self.scale as f64)
            .collect()
    }
}

/// The one finishing step shared by every integer kernel: rescale the i32
/// accumulator, add the bias, apply the rectifier. Identical inputs give
/// bit-identical outputs, which is what makes the integer kernels agree
/// exactly.
fn finish_int(acc: i32, bias: f32, w_scale: f32, x_scale: f32, relu: bool) -> f64 {
    let v = bias as f64 + (w_scale as f64 * x_scale as f64) * acc as f64;
    if relu && v < 0.0 {
        0.0
    } else {
        v
    }
}

fn quantized_codes(store: &ValueStore) -> Result<(f32, &[i8]), KernelError> {
    match store {
        ValueStore::Quantized { scale, codes } => Ok((*scale, codes)),
        ValueStore::Float(_) => Err(KernelError::NotQuantized(32)),
    }
}

/// Integer-datapath replay kernel: i32 accumulation of code products, then
/// the shared finish. Trace counts are identical to the float path.
pub fn lfsr_sparse_matvec_int(
    sparse: &LfsrSparseLayer,
    x: &QuantizedVec,
    relu: bool,
) -> Result<(Vec<f64>, AccessTrace), KernelError> {
    check_len(sparse.rows, x.codes.len())?;
    let (w_scale, codes) = quantized_codes(&sparse.values)?;
    let mask = replay_mask(sparse)?;
    let mut acc = vec![0i32; sparse.cols];
    for (k, &(r, c)) in mask.kept().iter().enumerate() {
        acc[c as usize] += codes[k] as i32 * x.codes[r as usize] as i32;
    }
    let y = acc
        .iter()
        .zip(&sparse.bias)
        .map(|(&a, &b)| finish_int(a, b, w_scale, x.scale, relu))
        .collect();
    Ok((y, lfsr_trace(&mask)))
}

/// Integer-datapath baseline kernel; same accumulation and finish as the
/// replay kernel, so outputs match it bit for bit.
pub fn baseline_sparse_matvec_int(
    c: &BaselineCompressed,
    x: &QuantizedVec,
    relu: bool,
) -> Result<(Vec<f64>, AccessTrace), KernelError> {
    check_len(c.rows, x.codes.len())?;
    c.validate()?;
    let (w_scale, codes) = quantized_codes(&c.s)?;
    let mut y = Vec::with_capacity(c.cols);
    for col in 0..c.cols {
        let mut acc = 0i32;
        let mut pos = 0usize;
        for k in c.p[col] as usize..c.p[col + 1] as usize {
            pos += c.i[k] as usize;
            if pos >= c.rows {
                return Err(KernelError::Codec(CodecError::RowOverflow {
                    col,
                    rows: c.rows,
                }));
            }
            acc += codes[k] as i32 * x.codes[pos] as i32;
            pos += 1;
        }
        y.push(finish_int(acc, c.bias[col], w_scale, x.scale, relu));
    }
    Ok((y, baseline_trace(c)))
}

/// Integer-datapath dense kernel: quantizes the dense weights with the
/// shared symmetric scheme (zeros stay code 0, so the scale matches the
/// sparse encodings of the same matrix) and accumulates every cell.
pub fn dense_matvec_int(
    layer: &Layer,
    x: &QuantizedVec,
    relu: bool,
) -> Result<(Vec<f64>, AccessTrace), KernelError> {
    let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
    check_len(rows, x.codes.len())?;
    let (w_scale, codes) = crate::codec::quantize_symmetric(layer.weights.data());
    let mut acc = vec![0i32; cols];
    for i in 0..rows {
        let xi = x.codes[i] as i32;
        for (j, a) in acc.iter_mut().enumerate() {
            *a += codes[i * cols + j] as i32 * xi;
        }
    }
    let y = acc
        .iter()
        .zip(&layer.bias)
        .map(|(&a, &b)| finish_int(a, b as f32, w_scale, x.scale, relu))
        .collect();
    let n = (rows * cols) as u64;
    let trace = AccessTrace {
        weight_mem_reads: n,
        input_buffer_reads: n,
        output_buffer_writes: cols as u64,
        mac_ops: n,
        ..AccessTrace::default()
    };
    Ok((y, trace))
}

fn replay_mask(sparse: &LfsrSparseLayer) -> Result<Mask, MaskError> {
    Mask::replay(
        sparse.rows,
        sparse.cols,
        sparse.nnz,
        sparse.row_spec.clone(),
        sparse.col_spec.clone(),
    )
}

fn lfsr_trace(mask: &Mask) -> AccessTrace {
    let nnz = mask.nnz() as u64;
    AccessTrace {
        weight_mem_reads: nnz,
        input_buffer_reads: nnz,
        output_buffer_reads: nnz,
        output_buffer_writes: nnz,
        mac_ops: nnz,
        // Two registers step once per draw, duplicates included.
        lfsr_steps: 2 * mask.steps_consumed(),
        ..AccessTrace::default()
    }
}

fn baseline_trace(c: &BaselineCompressed) -> AccessTrace {
    let stored = c.s.len() as u64;
    AccessTrace {
        weight_mem_reads: stored,
        index_mem_reads: stored,
        pointer_mem_reads: c.cols as u64 + 1,
        input_buffer_reads: stored,
        output_buffer_writes: c.cols as u64,
        mac_ops: stored,
        ..AccessTrace::default()
    }
}
