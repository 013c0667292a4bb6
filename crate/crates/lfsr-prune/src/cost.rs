//! Linear energy model over access traces, and the savings grid that
//! compares the two sparse designs across sparsity levels and index widths.
//!
//! Energy is a dot product of counter values with per-operation costs:
//! weight, index, pointer, and input reads are SRAM reads; output-buffer
//! traffic is register-file traffic (the output accumulators are registers
//! in both designs, so their read-modify-write cycles are priced at
//! `register_op`, not at SRAM rates); MACs cost `mac` and register steps
//! cost `lfsr_step`. The `sram_write` and `dram_read` entries ride along in
//! the table so alternative pricings can be expressed in config files and
//! echoed in reports, but the kernels modeled here never touch DRAM and
//! never write SRAM.
//!
//! All energies are picojoules; only ratios between designs are meaningful
//! as claims, so reports lead with saving percentages.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::kernels::{self, AccessTrace, KernelError};
use crate::mask::{Mask, MaskError};
use crate::matrix::Matrix;
use crate::net::Layer;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("unknown cost-table key `{0}`")]
    UnknownKey(String),
    #[error("cost-table line {line} is not `key = value`: `{text}`")]
    BadLine { line: usize, text: String },
    #[error("cost-table key `{key}` has unparsable value `{text}`")]
    BadValue { key: String, text: String },
    #[error("cost-table key `{key}` must be non-negative, got {value}")]
    NegativeCost { key: String, value: f64 },
    #[error("baseline energy is zero; saving percentage is undefined")]
    ZeroBaselineEnergy,
    #[error("baseline footprint is zero bits; saving percentage is undefined")]
    ZeroBaselineBits,
    #[error(transparent)]
    Spec(#[from] crate::lfsr::LfsrError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Per-operation energy costs in picojoules.
///
/// Parses from and prints to line-oriented `key = value` text; `#` starts a
/// comment and blank lines are skipped. Keys absent from the text keep
/// their defaults; unknown keys are rejected. `bank_bytes` is an optional
/// memory-bank size that is recorded in reports but does not change the
/// linear model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostTable {
    pub sram_read: f64,
    pub sram_write: f64,
    pub dram_read: f64,
    pub mac: f64,
    pub lfsr_step: f64,
    pub register_op: f64,
    pub bank_bytes: Option<u64>,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            sram_read: 5.0,
            sram_write: 5.0,
            dram_read: 640.0,
            mac: 0.9,
            lfsr_step: 0.1,
            register_op: 0.1,
            bank_bytes: None,
        }
    }
}

impl fmt::Display for CostTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sram_read = {}", self.sram_read)?;
        writeln!(f, "sram_write = {}", self.sram_write)?;
        writeln!(f, "dram_read = {}", self.dram_read)?;
        writeln!(f, "mac = {}", self.mac)?;
        writeln!(f, "lfsr_step = {}", self.lfsr_step)?;
        write!(f, "register_op = {}", self.register_op)?;
        if let Some(b) = self.bank_bytes {
            write!(f, "\nbank_bytes = {b}")?;
        }
        Ok(())
    }
}

impl FromStr for CostTable {
    type Err = CostError;

    fn from_str(text: &str) -> Result<Self, CostError> {
        let mut table = CostTable::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CostError::BadLine {
                line: lineno + 1,
                text: raw.trim().to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "bank_bytes" {
                let b: u64 = value.parse().map_err(|_| CostError::BadValue {
                    key: key.to_string(),
                    text: value.to_string(),
                })?;
                table.bank_bytes = Some(b);
                continue;
            }
            let slot = match key {
                "sram_read" => &mut table.sram_read,
                "sram_write" => &mut table.sram_write,
                "dram_read" => &mut table.dram_read,
                "mac" => &mut table.mac,
                "lfsr_step" => &mut table.lfsr_step,
                "register_op" => &mut table.register_op,
                other => return Err(CostError::UnknownKey(other.to_string())),
            };
            let v: f64 = value.parse().map_err(|_| CostError::BadValue {
                key: key.to_string(),
                text: value.to_string(),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(CostError::NegativeCost {
                    key: key.to_string(),
                    value: v,
                });
            }
            *slot = v;
        }
        Ok(table)
    }
}

/// One kernel invocation's energy, split by counter class. Picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub weight_read_pj: f64,
    pub index_read_pj: f64,
    pub pointer_read_pj: f64,
    pub input_read_pj: f64,
    pub output_buffer_pj: f64,
    pub mac_pj: f64,
    pub lfsr_pj: f64,
    pub total_pj: f64,
}

/// Prices a trace under a table, split by counter class.
pub fn breakdown(trace: &AccessTrace, table: &CostTable) -> EnergyBreakdown {
    let weight_read_pj = trace.weight_mem_reads as f64 * table.sram_read;
    let index_read_pj = trace.index_mem_reads as f64 * table.sram_read;
    let pointer_read_pj = trace.pointer_mem_reads as f64 * table.sram_read;
    let input_read_pj = trace.input_buffer_reads as f64 * table.sram_read;
    let output_buffer_pj =
        (trace.output_buffer_reads + trace.output_buffer_writes) as f64 * table.register_op;
    let mac_pj = trace.mac_ops as f64 * table.mac;
    let lfsr_pj = trace.lfsr_steps as f64 * table.lfsr_step;
    EnergyBreakdown {
        weight_read_pj,
        index_read_pj,
        pointer_read_pj,
        input_read_pj,
        output_buffer_pj,
        mac_pj,
        lfsr_pj,
        total_pj: weight_read_pj
            + index_read_pj
            + pointer_read_pj
            + input_read_pj
            + output_buffer_pj
            + mac_pj
            + lfsr_pj,
    }
}

/// Total energy proxy for a trace, in picojoules.
pub fn energy(trace: &AccessTrace, table: &CostTable) -> f64 {
    breakdown(trace, table).total_pj
}

/// Side-by-side energy and storage comparison of the two designs.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub proposed: EnergyBreakdown,
    pub baseline: EnergyBreakdown,
    pub energy_saving_percent: f64,
    pub proposed_bits: u64,
    pub baseline_bits: u64,
    pub footprint_saving_percent: f64,
    pub bank_bytes: Option<u64>,
}

/// Prices both traces and restates both footprints as a saving percentage:
/// `100 × (baseline − proposed) / baseline` for each.
pub fn compare(
    proposed_trace: &AccessTrace,
    baseline_trace: &AccessTrace,
    proposed_bits: u64,
    baseline_bits: u64,
    table: &CostTable,
) -> Result<CostReport, CostError> {
    let proposed = breakdown(proposed_trace, table);
    let baseline = breakdown(baseline_trace, table);
    if baseline.total_pj == 0.0 {
        return Err(CostError::ZeroBaselineEnergy);
    }
    if baseline_bits == 0 {
        return Err(CostError::ZeroBaselineBits);
    }
    let energy_saving_percent = 100.0 * (baseline.total_pj - proposed.total_pj) / baseline.total_pj;
    let footprint_saving_percent =
        100.0 * (baseline_bits as f64 - proposed_bits as f64) / baseline_bits as f64;
    Ok(CostReport {
        proposed,
        baseline,
        energy_saving_percent,
        proposed_bits,
        baseline_bits,
        footprint_saving_percent,
        bank_bytes: table.bank_bytes,
    })
}

/// One grid point of the sparsity × index-width comparison.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub sparsity: f64,
    pub index_bits: u8,
    pub nnz: usize,
    pub alpha: f64,
    pub proposed_pj: f64,
    pub baseline_pj: f64,
    pub energy_saving_percent: f64,
    pub proposed_bits: u64,
    pub baseline_bits: u64,
    pub footprint_saving_percent: f64,
}

/// Savings across a sparsity × index-width grid for one layer shape,
/// rendered as CSV or as an aligned text table.
#[derive(Debug, Clone, Serialize)]
pub struct SavingsGrid {
    pub rows: usize,
    pub cols: usize,
    pub sparsities: Vec<f64>,
    pub index_bits: Vec<u8>,
    /// Row-major: one cell per (sparsity, index_bits) pair.
    pub cells: Vec<GridCell>,
}

/// Fixed header for [`SavingsGrid::to_csv`].
pub const GRID_CSV_HEADER: &str = "rows,cols,sparsity,index_bits,nnz,alpha,proposed_pj,\
baseline_pj,energy_saving_percent,proposed_bits,baseline_bits,footprint_saving_percent";

impl SavingsGrid {
    pub fn cell(&self, sparsity_idx: usize, bits_idx: usize) -> &GridCell {
        &self.cells[sparsity_idx * self.index_bits.len() + bits_idx]
    }

    /// CSV with header [`GRID_CSV_HEADER`], one row per grid cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(GRID_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.3},{:.3},{:.4},{},{},{:.4}",
                self.rows,
                self.cols,
                c.sparsity,
                c.index_bits,
                c.nnz,
                c.alpha,
                c.proposed_pj,
                c.baseline_pj,
                c.energy_saving_percent,
                c.proposed_bits,
                c.baseline_bits,
                c.footprint_saving_percent
            );
        }
        out
    }

    /// Two aligned blocks — energy saving and footprint saving — with one
    /// row per sparsity level and one column per index width.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "layer {}x{}", self.rows, self.cols);
        for (title, pick) in [
            (
                "energy saving (%)",
                (|c: &GridCell| c.energy_saving_percent) as fn(&GridCell) -> f64,
            ),
            ("footprint saving (%)", |c: &GridCell| {
                c.footprint_saving_percent
            }),
        ] {
            let _ = writeln!(out, "\n{title}");
            let _ = write!(out, "{:>10}", "sparsity");
            for b in &self.index_bits {
                let _ = write!(out, "{:>10}", format!("{b}-bit"));
            }
            out.push('\n');
            for (si, sp) in self.sparsities.iter().enumerate() {
                let _ = write!(out, "{sp:>10.2}");
                for bi in 0..self.index_bits.len() {
                    let _ = write!(out, "{:>10.2}", pick(self.cell(si, bi)));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Builds the grid by generating a mask per sparsity level, encoding it
/// both ways, running both kernels, and pricing the traces. Traces depend
/// only on structure, so kept weights are filled with placeholder nonzeros.
pub fn savings_grid(
    rows: usize,
    cols: usize,
    sparsities: &[f64],
    index_bits: &[u8],
    value_bits: u8,
    seed: u64,
    table: &CostTable,
) -> Result<SavingsGrid, CostError> {
    let mut cells = Vec::with_capacity(sparsities.len() * index_bits.len());
    for &sp in sparsities {
        let (row_spec, col_spec) = Mask::default_specs(rows, cols, seed)?;
        let mask = Mask::generate(rows, cols, sp, row_spec, col_spec)?;
        let mut weights = Matrix::zeros(rows, cols);
        for (k, &(r, c)) in mask.kept().iter().enumerate() {
            weights.set(r as usize, c as usize, 0.5 + 0.01 * (k % 17) as f64);
        }
        let layer = Layer {
            weights,
            bias: vec![0.0; cols],
            mask: Some(mask),
        };
        let sparse = codec::encode_lfsr(&layer, value_bits)?;
        let x = vec![1.0; rows];
        let (_, proposed_trace) = kernels::lfsr_sparse_matvec(&sparse, &x, false)?;
        let proposed_bits = codec::lfsr_bits(&sparse);
        for &bits in index_bits {
            let base = codec::encode_baseline(&layer, bits, value_bits)?;
            let (_, baseline_trace) = kernels::baseline_sparse_matvec(&base, &x, false)?;
            let report = compare(
                &proposed_trace,
                &baseline_trace,
                proposed_bits,
                codec::baseline_bits(&base),
                table,
            )?;
            cells.push(GridCell {
                sparsity: sp,
                index_bits: bits,
                nnz: sparse.nnz,
                alpha: base.alpha(),
                proposed_pj: report.proposed.total_pj,
                baseline_pj: report.baseline.total_pj,
                energy_saving_percent: report.energy_saving_percent,
                proposed_bits: report.proposed_bits,
                baseline_bits: report.baseline_bits,
                footprint_saving_percent: report.footprint_saving_percent,
            });
        }
    }
    Ok(SavingsGrid {
        rows,
        cols,
        sparsities: sparsities.to_vec(),
        index_bits: index_bits.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(vals: [u64; 8]) -> AccessTrace {
        AccessTrace {
            weight_mem_reads: vals[0],
            index_mem_reads: vals[1],
            pointer_mem_reads: vals[2],
            input_buffer_reads: vals[3],
            output_buffer_reads: vals[4],
            output_buffer_writes: vals[5],
            mac_ops: vals[6],
            lfsr_steps: vals[7],
        }
    }

    #[test]
    fn defaults_are_the_documented_values() {
        let t = CostTable::default();
        assert_eq!(t.sram_read, 5.0);
        assert_eq!(t.sram_write, 5.0);
        assert_eq!(t.dram_read, 640.0);
        assert_eq!(t.mac, 0.9);
        assert_eq!(t.lfsr_step, 0.1);
        assert_eq!(t.register_op, 0.1);
        assert_eq!(t.bank_bytes, None);
    }

    #[test]
    fn zero_trace_costs_nothing() {
        assert_eq!(energy(&AccessTrace::default(), &CostTable::default()), 0.0);
    }

    #[test]
    fn one_mac_costs_the_mac_price() {
        let t = trace([0, 0, 0, 0, 0, 0, 1, 0]);
        assert_eq!(energy(&t, &CostTable::default()), 0.9);
    }

    #[test]
    fn energy_is_linear_in_the_counters() {
        let table = CostTable::default();
        let a = trace([3, 1, 4, 1, 5, 9, 2, 6]);
        let b = trace([6, 2, 8, 2, 10, 18, 4, 12]);
        assert!((2.0 * energy(&a, &table) - energy(&b, &table)).abs() < 1e-12);
        let bd = breakdown(&a, &table);
        let sum = bd.weight_read_pj
            + bd.index_read_pj
            + bd.pointer_read_pj
            + bd.input_read_pj
            + bd.output_buffer_pj
            + bd.mac_pj
            + bd.lfsr_pj;
        assert!((bd.total_pj - sum).abs() < 1e-12);
    }

    #[test]
    fn table_text_roundtrips_through_display() {
        let mut t = CostTable::default();
        t.mac = 1.25;
        t.bank_bytes = Some(4096);
        let text = t.to_string();
        let back: CostTable = text.parse().unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn parsing_overrides_only_named_keys() {
        let t: CostTable = "# tweak two entries\n\nsram_read = 10\nmac=2.5 # inline note\n"
            .parse()
            .unwrap();
        assert_eq!(t.sram_read, 10.0);
        assert_eq!(t.mac, 2.5);
        assert_eq!(t.dram_read, 640.0);
        assert_eq!(t.lfsr_step, 0.1);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert_eq!(
            "watts = 3".parse::<CostTable>().unwrap_err(),
            CostError::UnknownKey("watts".to_string())
        );
        assert_eq!(
            "sram_read 5".parse::<CostTable>().unwrap_err(),
            CostError::BadLine {
                line: 1,
                text: "sram_read 5".to_string()
            }
        );
        assert_eq!(
            "mac = fast".parse::<CostTable>().unwrap_err(),
            CostError::BadValue {
                key: "mac".to_string(),
                text: "fast".to_string()
            }
        );
        assert_eq!(
            "mac = -1".parse::<CostTable>().unwrap_err(),
            CostError::NegativeCost {
                key: "mac".to_string(),
                value: -1.0
            }
        );
        assert!("bank_bytes = 2.5".parse::<CostTable>().is_err());
    }

    #[test]
    fn identical_traces_save_nothing() {
        let t = trace([10, 5, 3, 10, 0, 4, 10, 0]);
        let r = compare(&t, &t, 100, 100, &CostTable::default()).unwrap();
        assert_eq!(r.energy_saving_percent, 0.0);
        assert_eq!(r.footprint_saving_percent, 0.0);
    }

    #[test]
    fn saving_percent_ignores_uniform_table_scaling() {
        let p = trace([30, 0, 0, 30, 30, 30, 30, 70]);
        let b = trace([45, 45, 11, 45, 0, 10, 45, 0]);
        let base = CostTable::default();
        let mut scaled = base.clone();
        scaled.sram_read *= 3.0;
        scaled.sram_write *= 3.0;
        scaled.dram_read *= 3.0;
        scaled.mac *= 3.0;
        scaled.lfsr_step *= 3.0;
        scaled.register_op *= 3.0;
        let r1 = compare(&p, &b, 10, 20, &base).unwrap();
        let r2 = compare(&p, &b, 10, 20, &scaled).unwrap();
        assert!((r1.energy_saving_percent - r2.energy_saving_percent).abs() < 1e-9);
    }

    #[test]
    fn zero_baselines_are_rejected() {
        let p = trace([1, 0, 0, 1, 1, 1, 1, 2]);
        assert_eq!(
            compare(&p, &AccessTrace::default(), 1, 1, &CostTable::default()).unwrap_err(),
            CostError::ZeroBaselineEnergy
        );
        let b = trace([1, 1, 2, 1, 0, 1, 1, 0]);
        assert_eq!(
            compare(&p, &b, 1, 0, &CostTable::default()).unwrap_err(),
            CostError::ZeroBaselineBits
        );
    }

    #[test]
    fn bank_size_is_echoed_but_never_priced() {
        let p = trace([3, 0, 0, 3, 3, 3, 3, 8]);
        let b = trace([4, 4, 2, 4, 0, 1, 4, 0]);
        let plain = CostTable::default();
        let mut banked = plain.clone();
        banked.bank_bytes = Some(512);
        let r1 = compare(&p, &b, 10, 20, &plain).unwrap();
        let r2 = compare(&p, &b, 10, 20, &banked).unwrap();
        assert_eq!(r1.proposed.total_pj, r2.proposed.total_pj);
        assert_eq!(r1.baseline.total_pj, r2.baseline.total_pj);
        assert_eq!(r2.bank_bytes, Some(512));
    }

    #[test]
    fn footprint_saving_restates_the_codec_ratio() {
        let grid = savings_grid(
            300,
            100,
            &[0.9],
            &[8],
            8,
            1,
            &CostTable::default(),
        )
        .unwrap();
        let c = grid.cell(0, 0);
        let ratio = c.baseline_bits as f64 / c.proposed_bits as f64;
        let restated = 100.0 * (1.0 - 1.0 / ratio);
        assert!((c.footprint_saving_percent - restated).abs() < 1e-9);
    }

    #[test]
    fn default_table_shows_positive_saving_at_high_sparsity() {
        let grid = savings_grid(
            300,
            100,
            &[0.95],
            &[4],
            32,
            1,
            &CostTable::default(),
        )
        .unwrap();
        let c = grid.cell(0, 0);
        assert!(c.energy_saving_percent > 0.0, "{}", c.energy_saving_percent);
        assert!(c.proposed_pj < c.baseline_pj);
    }

    #[test]
    fn advantage_is_structural_across_cost_tables() {
        // Whenever padding keeps alpha at or above one and register
        // operations plus register stepping stay well under an SRAM read
        // (each at most an eighth of it here), the replay design wins: the
        // index read it avoids costs more than the accumulator traffic and
        // register stepping it adds.
        let shapes = [(60usize, 40usize), (300, 100)];
        let sparsities = [0.5, 0.9];
        let bits = [4u8, 8];
        for &(rows, cols) in &shapes {
            for sram in [1.0, 5.0, 640.0] {
                for cheap in [0.0, sram / 8.0] {
                    for mac in [0.0, 0.9] {
                        let table = CostTable {
                            sram_read: sram,
                            sram_write: sram,
                            dram_read: sram,
                            mac,
                            lfsr_step: cheap,
                            register_op: cheap,
                            bank_bytes: None,
                        };
                        let grid =
                            savings_grid(rows, cols, &sparsities, &bits, 32, 7, &table).unwrap();
                        for c in &grid.cells {
                            assert!(c.alpha >= 1.0);
                            assert!(
                                c.energy_saving_percent > 0.0,
                                "{rows}x{cols} sp={} bits={} sram={sram} cheap={cheap} mac={mac}: {}",
                                c.sparsity,
                                c.index_bits,
                                c.energy_saving_percent
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn grid_outputs_are_shaped_like_the_inputs() {
        let grid = savings_grid(
            50,
            30,
            &[0.5, 0.8],
            &[4, 8],
            32,
            3,
            &CostTable::default(),
        )
        .unwrap();
        assert_eq!(grid.cells.len(), 4);
        assert_eq!(grid.cell(1, 0).sparsity, 0.8);
        assert_eq!(grid.cell(1, 0).index_bits, 4);

        let csv = grid.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), GRID_CSV_HEADER);
        assert_eq!(lines.count(), 4);
        assert_eq!(GRID_CSV_HEADER.split(',').count(), 12);
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 12);
        }

        let text = grid.render_text();
        assert!(text.contains("energy saving (%)"));
        assert!(text.contains("footprint saving (%)"));
        assert!(text.contains("4-bit"));
        assert!(text.contains("8-bit"));
        // Two header rows plus two sparsity rows per block, every row the
        // same width within a block.
        let block: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("  sparsity"))
            .take(3)
            .collect();
        assert_eq!(block.len(), 3);
        assert_eq!(block[0].len(), block[1].len());
        assert_eq!(block[1].len(), block[2].len());
    }
}
