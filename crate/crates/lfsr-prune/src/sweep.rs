//! Experiment-grid driver: runs the full pipeline over every combination
//! of sparsity, penalty weight, penalty kind, and seed, then compares the
//! two storage designs at every index width.
//!
//! Each grid point writes its own epoch CSV, JSON report, and model
//! container as soon as it finishes, so partial results survive a failure.
//! The summary and footprint CSVs are assembled single-threaded afterward
//! in grid order. Nothing written here contains a timestamp, so rerunning
//! a sweep with the same config reproduces every output byte for byte.
//!
//! Any model file a sweep produces can be decoded on its own: the register
//! specs that regenerate each layer's mask travel inside the container.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::container::{ContainerError, ModelContainer};
use crate::cost::{self, CostError, CostTable};
use crate::data::{self, DataError, Dataset};
use crate::kernels::{self, AccessTrace, KernelError};
use crate::net::Model;
use crate::train::{self, PipelineReport, RegKind, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep field `{0}` must be non-empty")]
    EmptyField(&'static str),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Where the sweep's dataset comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Seeded Gaussian blobs.
    Synthetic {
        seed: u64,
        n_samples: usize,
        n_features: usize,
        n_classes: usize,
    },
    /// A directory holding the four standard IDX files; limits truncate
    /// the splits.
    MnistDir {
        path: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

/// Loads the dataset a [`DataSource`] describes.
pub fn load_dataset(source: &DataSource) -> Result<Dataset, DataError> {
    match source {
        DataSource::Synthetic {
            seed,
            n_samples,
            n_features,
            n_classes,
        } => data::gen_synthetic(*seed, *n_samples, *n_features, *n_classes),
        DataSource::MnistDir {
            path,
            train_limit,
            test_limit,
        } => data::load_mnist_dir(path, *train_limit, *test_limit),
    }
}

/// Full description of one sweep: the grid axes, the shared training
/// hyperparameters, and where to write results.
///
/// `base.lambda`, `base.reg_kind`, and `base.seed` are ignored; the grid
/// axes override them point by point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arch: Vec<usize>,
    pub dataset: DataSource,
    pub sparsities: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub reg_kinds: Vec<RegKind>,
    pub index_bits: Vec<u8>,
    #[serde(default = "default_value_bits")]
    pub value_bits: u8,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub base: TrainConfig,
}

fn default_value_bits() -> u8 {
    32
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), SweepError> {
        if self.arch.len() < 2 {
            return Err(SweepError::EmptyField("arch"));
        }
        for (field, empty) in [
            ("sparsities", self.sparsities.is_empty()),
            ("lambdas", self.lambdas.is_empty()),
            ("reg_kinds", self.reg_kinds.is_empty()),
            ("index_bits", self.index_bits.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(SweepError::EmptyField(field));
            }
        }
        Ok(())
    }

    /// Grid points in deterministic order: sparsity, then penalty weight,
    /// then penalty kind, then seed, slowest axis first.
    pub fn points(&self) -> Vec<PointParams> {
        let mut points = Vec::new();
        for &sparsity in &self.sparsities {
            for &lambda in &self.lambdas {
                for &reg_kind in &self.reg_kinds {
                    for &seed in &self.seeds {
                        points.push(PointParams {
                            sparsity,
                            lambda,
                            reg_kind,
                            seed,
                        });
                    }
                }
            }
        }
        points
    }
}

/// The axes values of one grid point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PointParams {
    pub sparsity: f64,
    pub lambda: f64,
    pub reg_kind: RegKind,
    pub seed: u64,
}

impl PointParams {
    /// Deterministic file stem, e.g. `run_sp0.7_lam2_l2_seed1`.
    pub fn stem(&self) -> String {
        format!(
            "run_sp{}_lam{}_{}_seed{}",
            self.sparsity, self.lambda, self.reg_kind, self.seed
        )
    }
}

/// One finished grid point: its parameters, the pipeline report, and the
/// files it wrote.
#[derive(Debug, Serialize)]
pub struct PointOutcome {
    pub params: PointParams,
    pub report: PipelineReport,
    pub epochs_csv: PathBuf,
    pub report_json: PathBuf,
    pub model_file: PathBuf,
}

/// Everything a sweep produced.
#[derive(Debug)]
pub struct SweepSummary {
    pub points: Vec<PointOutcome>,
    pub summary_csv: PathBuf,
    pub footprint_csv: PathBuf,
}

/// Fixed header of `summary.csv`.
pub const SUMMARY_CSV_HEADER: &str = "sparsity,lambda,reg_kind,seed,dense_acc,pruned_acc,\
final_acc,achieved_sparsity,compression_rate,mean_abs_pruneset_after_reg,model_file";

/// Fixed header of `footprint.csv`.
pub const FOOTPRINT_CSV_HEADER: &str = "sparsity,lambda,reg_kind,seed,index_bits,nnz,\
proposed_bits,baseline_bits,ratio,energy_saving_percent";

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SweepError> {
    let mut f = fs::File::create(path).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_point(
    dataset: &Dataset,
    config: &ExperimentConfig,
    params: PointParams,
) -> Result<PointOutcome, SweepError> {
    let mut cfg = config.base.clone();
    cfg.lambda = params.lambda;
    cfg.reg_kind = params.reg_kind;
    cfg.seed = params.seed;
    let (model, report) = train::run_pipeline(dataset, &config.arch, &cfg, params.sparsity)?;

    let stem = params.stem();
    let epochs_csv = config.out_dir.join(format!("{stem}.csv"));
    let mut csv_bytes = Vec::new();
    report
        .write_csv(&mut csv_bytes)
        .map_err(|e| SweepError::Io {
            path: epochs_csv.clone(),
            source: std::io::Error::other(e),
        })?;
    write_file(&epochs_csv, &csv_bytes)?;

    let report_json = config.out_dir.join(format!("{stem}.json"));
    #[derive(Serialize)]
    struct RunJson<'a> {
        params: &'a PointParams,
        report: &'a PipelineReport,
    }
    let json = serde_json::to_string_pretty(&RunJson {
        params: &params,
        report: &report,
    })
    .expect("report serialization cannot fail");
    write_file(&report_json, format!("{json}\n").as_bytes())?;

    let model_file = config.out_dir.join(format!("{stem}.lfsp"));
    let container = ModelContainer::from_model_lfsr(&model, config.value_bits)?;
    write_file(&model_file, &container.to_bytes())?;

    Ok(PointOutcome {
        params,
        report,
        epochs_csv,
        report_json,
        model_file,
    })
}

/// Sums both designs' traces and storage bits across a model's layers at
/// one index width, then prices them.
fn model_comparison(
    model: &Model,
    index_bits: u8,
    value_bits: u8,
    table: &CostTable,
) -> Result<(usize, cost::CostReport), SweepError> {
    let mut proposed = AccessTrace::default();
    let mut baseline = AccessTrace::default();
    let mut proposed_bits = 0u64;
    let mut baseline_bits = 0u64;
    let mut nnz = 0usize;
    for layer in &model.layers {
        let sparse = codec::encode_lfsr(layer, value_bits)?;
        let base = codec::encode_baseline(layer, index_bits, value_bits)?;
        let x = vec![1.0; layer.in_dim()];
        let (_, tp) = kernels::lfsr_sparse_matvec(&sparse, &x, false)?;
        let (_, tb) = kernels::baseline_sparse_matvec(&base, &x, false)?;
        proposed = add_traces(proposed, tp);
        baseline = add_traces(baseline, tb);
        proposed_bits += codec::lfsr_bits(&sparse);
        baseline_bits += codec::baseline_bits(&base);
        nnz += sparse.nnz;
    }
    let report = cost::compare(&proposed, &baseline, proposed_bits, baseline_bits, table)?;
    Ok((nnz, report))
}

fn add_traces(a: AccessTrace, b: AccessTrace) -> AccessTrace {
    AccessTrace {
        weight_mem_reads: a.weight_mem_reads + b.weight_mem_reads,
        index_mem_reads: a.index_mem_reads + b.index_mem_reads,
        pointer_mem_reads: a.pointer_mem_reads + b.pointer_mem_reads,
        input_buffer_reads: a.input_buffer_reads + b.input_buffer_reads,
        output_buffer_reads: a.output_buffer_reads + b.output_buffer_reads,
        output_buffer_writes: a.output_buffer_writes + b.output_buffer_writes,
        mac_ops: a.mac_ops + b.mac_ops,
        lfsr_steps: a.lfsr_steps + b.lfsr_steps,
    }
}

/// Runs every grid point, writing per-run files immediately and the two
/// roll-up CSVs at the end. Points run in parallel when the `parallel`
/// feature is on; outputs are identical either way.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepSummary, SweepError> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|source| SweepError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    let dataset = load_dataset(&config.dataset)?;
    let points = config.points();

    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<PointOutcome>, SweepError> = {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|&p| run_point(&dataset, config, p))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<PointOutcome>, SweepError> = points
        .iter()
        .map(|&p| run_point(&dataset, config, p))
        .collect();
    let outcomes = outcomes?;

    let mut summary = String::from(SUMMARY_CSV_HEADER);
    summary.push('\n');
    for o in &outcomes {
        let r = &o.report;
        summary.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.6},{:.4},{:.6e},{}\n",
            o.params.sparsity,
            o.params.lambda,
            o.params.reg_kind,
            o.params.seed,
            r.dense_acc,
            r.pruned_acc,
            r.final_acc,
            r.achieved_sparsity,
            r.compression_rate,
            r.mean_abs_pruneset_after_reg,
            o.model_file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        ));
    }
    let summary_csv = config.out_dir.join("summary.csv");
    write_file(&summary_csv, summary.as_bytes())?;

    let table = CostTable::default();
    let mut footprint = String::from(FOOTPRINT_CSV_HEADER);
    footprint.push('\n');
    for o in &outcomes {
        let container = ModelContainer::load(&o.model_file)?;
        let model = container.to_model()?;
        for &bits in &config.index_bits {
            let (nnz, report) = model_comparison(&model, bits, config.value_bits, &table)?;
            let ratio = report.baseline_bits as f64 / report.proposed_bits as f64;
            footprint.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.4},{:.4}\n",
                o.params.sparsity,
                o.params.lambda,
                o.params.reg_kind,
                o.params.seed,
                bits,
                nnz,
                report.proposed_bits,
                report.baseline_bits,
                ratio,
                report.energy_saving_percent,
            ));
        }
    }
    let footprint_csv = config.out_dir.join("footprint.csv");
    write_file(&footprint_csv, footprint.as_bytes())?;

    Ok(SweepSummary {
        points: outcomes,
        summary_csv,
        footprint_csv,
    })
}
