//! Command-line front end for the pruning toolkit.
//!
//! Exit codes: `0` success (including `--help` / `--version`), `1` usage
//! error (unknown flags, unparsable flag values), `2` data or format error
//! (unreadable or malformed files, model files that lack what an operation
//! needs), `3` numeric or validation failure (mask exhaustion, decay too
//! large, dimension mismatches, a gate such as a rank or period check not
//! met).
//!
//! Every command is deterministic given its flags: rerunning one overwrites
//! output files with identical bytes. No output contains a timestamp.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lfsr_prune::codec::{self, CodecError};
use lfsr_prune::container::{ContainerError, ModelContainer, StoredLayer};
use lfsr_prune::cost::{self, CostError, CostTable};
use lfsr_prune::data::{DataError, Dataset};
use lfsr_prune::kernels::{self, AccessTrace, KernelError, TRACE_CSV_HEADER};
use lfsr_prune::lfsr::{default_taps, map_to_index, Lfsr, LfsrError, LfsrSpec};
use lfsr_prune::mask::{numerical_rank, Mask, MaskError, DEFAULT_RANK_TOL};
use lfsr_prune::matrix::Matrix;
use lfsr_prune::net::{Layer, NetError};
use lfsr_prune::sweep::{self, DataSource, ExperimentConfig, SweepError};
use lfsr_prune::train::{self, EpochRow, RegKind, TrainConfig, TrainError};

#[derive(Parser)]
#[command(
    name = "lfsr-prune",
    version,
    about = "Prune dense networks with shift-register masks, store them without index arrays, \
             and measure the storage and energy payoff"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Step a register and print its state stream; optionally verify its period
    Lfsr(LfsrCmd),
    /// Draw a sparsity mask and report its statistics
    Mask(MaskCmd),
    /// Measure numerical-rank retention of masked Gaussian matrices
    Rank(RankCmd),
    /// Train a dense model and save it
    Train(TrainCmd),
    /// Attach masks to a dense model, regularize, and hard-prune it
    Prune(PruneCmd),
    /// Fine-tune a pruned model with pruned weights pinned at zero
    Retrain(RetrainCmd),
    /// Re-encode a model container into another storage format
    Encode(EncodeCmd),
    /// Run instrumented inference and report accuracy plus access counts
    Infer(InferCmd),
    /// Compare storage bits between the two sparse formats
    Footprint(FootprintCmd),
    /// Price access traces across a sparsity x index-width grid
    Simulate(SimulateCmd),
    /// Run a full experiment grid from a config file or flags
    Sweep(SweepCmd),
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping

#[derive(Debug)]
enum AppError {
    Io { path: PathBuf, source: std::io::Error },
    Json { path: PathBuf, source: serde_json::Error },
    Csv(csv::Error),
    Container(ContainerError),
    Data(DataError),
    Codec(CodecError),
    Cost(CostError),
    Kernel(KernelError),
    Mask(MaskError),
    Spec(LfsrError),
    Train(TrainError),
    Net(NetError),
    Sweep(SweepError),
    /// A declared numeric gate was not met (rank, period, ...).
    GateFailed(String),
    /// The input file is well-formed but lacks what this operation needs.
    Unsuitable(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            AppError::Json { path, source } => write!(f, "{}: {source}", path.display()),
            AppError::Csv(e) => write!(f, "{e}"),
            AppError::Container(e) => write!(f, "{e}"),
            AppError::Data(e) => write!(f, "{e}"),
            AppError::Codec(e) => write!(f, "{e}"),
            AppError::Cost(e) => write!(f, "{e}"),
            AppError::Kernel(e) => write!(f, "{e}"),
            AppError::Mask(e) => write!(f, "{e}"),
            AppError::Spec(e) => write!(f, "{e}"),
            AppError::Train(e) => write!(f, "{e}"),
            AppError::Net(e) => write!(f, "{e}"),
            AppError::Sweep(e) => write!(f, "{e}"),
            AppError::GateFailed(m) | AppError::Unsuitable(m) => f.write_str(m),
        }
    }
}

const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

impl AppError {
    /// 2 for data/format problems, 3 for numeric/validation failures.
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Io { .. }
            | AppError::Json { .. }
            | AppError::Csv(_)
            | AppError::Container(_)
            | AppError::Data(_)
            | AppError::Unsuitable(_) => EXIT_DATA,
            AppError::GateFailed(_) | AppError::Mask(_) | AppError::Spec(_) => EXIT_NUMERIC,
            AppError::Codec(e) => codec_code(e),
            AppError::Cost(e) => match e {
                CostError::ZeroBaselineEnergy | CostError::ZeroBaselineBits => EXIT_NUMERIC,
                CostError::Mask(_) | CostError::Spec(_) => EXIT_NUMERIC,
                CostError::Kernel(k) => kernel_code(k),
                CostError::Codec(c) => codec_code(c),
                _ => EXIT_DATA, // table text problems
            },
            AppError::Kernel(e) => kernel_code(e),
            AppError::Train(e) => train_code(e),
            AppError::Net(NetError::EmptySplit) => EXIT_DATA,
            AppError::Net(_) => EXIT_NUMERIC,
            AppError::Sweep(e) => match e {
                SweepError::EmptyField(_) => EXIT_NUMERIC,
                SweepError::Io { .. } | SweepError::Data(_) | SweepError::Container(_) => EXIT_DATA,
                SweepError::Train(t) => train_code(t),
                SweepError::Codec(c) => codec_code(c),
                SweepError::Kernel(k) => kernel_code(k),
                SweepError::Cost(_) => EXIT_NUMERIC,
            },
        }
    }
}

fn codec_code(e: &CodecError) -> u8 {
    match e {
        // The model lacks embedded mask seeds or holds inconsistent structure.
        CodecError::MissingMask => EXIT_DATA,
        CodecError::Mask(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn kernel_code(e: &KernelError) -> u8 {
    match e {
        KernelError::InputDim { .. } => EXIT_NUMERIC,
        KernelError::NotQuantized(_) => EXIT_DATA,
        KernelError::Replay(_) => EXIT_NUMERIC,
        KernelError::Codec(c) => codec_code(c),
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::MissingMask { .. } => EXIT_DATA,
        TrainError::EmptyBatch => EXIT_DATA,
        TrainError::DecayTooLarge { .. } | TrainError::BadConfig(_) => EXIT_NUMERIC,
        TrainError::Net(NetError::EmptySplit) => EXIT_DATA,
        TrainError::Net(_) => EXIT_NUMERIC,
        TrainError::Mask(_) => EXIT_NUMERIC,
    }
}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for AppError {
            fn from(e: $ty) -> Self {
                AppError::$variant(e)
            }
        }
    };
}
from_err!(Container, ContainerError);
from_err!(Data, DataError);
from_err!(Codec, CodecError);
from_err!(Cost, CostError);
from_err!(Kernel, KernelError);
from_err!(Mask, MaskError);
from_err!(Spec, LfsrError);
from_err!(Train, TrainError);
from_err!(Net, NetError);
from_err!(Sweep, SweepError);
from_err!(Csv, csv::Error);

fn read_text(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| AppError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut f = fs::File::create(path).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_container(path: &Path) -> Result<ModelContainer, AppError> {
    ModelContainer::load(path).map_err(AppError::Container)
}

fn save_container(container: &ModelContainer, path: &Path) -> Result<(), AppError> {
    write_bytes(path, &container.to_bytes())
}

// ---------------------------------------------------------------------------
// Shared flag groups

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataKind {
    /// Seeded Gaussian blobs
    Synthetic,
    /// MNIST-layout IDX files from --mnist-dir
    Mnist,
}

#[derive(Args)]
struct DataOpts {
    /// Dataset source
    #[arg(long, value_enum, default_value_t = DataKind::Synthetic)]
    data: DataKind,
    /// Directory holding the four MNIST-layout IDX files
    #[arg(long, default_value = "data/mnist-subset")]
    mnist_dir: PathBuf,
    /// Truncate the training split to this many samples (mnist only)
    #[arg(long)]
    train_limit: Option<usize>,
    /// Truncate the test split to this many samples (mnist only)
    #[arg(long)]
    test_limit: Option<usize>,
    /// Generator seed (synthetic only)
    #[arg(long, default_value_t = 7)]
    data_seed: u64,
    /// Sample count (synthetic only)
    #[arg(long, default_value_t = 1500)]
    samples: usize,
    /// Feature dimension (synthetic only)
    #[arg(long, default_value_t = 16)]
    features: usize,
    /// Class count (synthetic only)
    #[arg(long, default_value_t = 4)]
    classes: usize,
}

impl DataOpts {
    fn source(&self) -> DataSource {
        match self.data {
            DataKind::Synthetic => DataSource::Synthetic {
                seed: self.data_seed,
                n_samples: self.samples,
                n_features: self.features,
                n_classes: self.classes,
            },
            DataKind::Mnist => DataSource::MnistDir {
                path: self.mnist_dir.clone(),
                train_limit: self.train_limit,
                test_limit: self.test_limit,
            },
        }
    }

    fn load(&self) -> Result<Dataset, AppError> {
        sweep::load_dataset(&self.source()).map_err(AppError::Data)
    }
}

#[derive(Args)]
struct TrainOpts {
    /// SGD learning rate
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Penalty weight applied to prune-set weights while regularizing
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    /// Penalty kind: l1 or l2
    #[arg(long, default_value = "l2", value_parser = RegKind::from_str)]
    reg: RegKind,
    /// Minibatch size
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Run seed; fixes initialization, masks, and batch order
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = self.learning_rate;
        cfg.lambda = self.lambda;
        cfg.reg_kind = self.reg;
        cfg.batch_size = self.batch_size;
        cfg.seed = self.seed;
        cfg
    }
}

fn parse_value_bits(s: &str) -> Result<u8, String> {
    match s {
        "8" => Ok(8),
        "32" => Ok(32),
        other => Err(format!("value bits must be 8 or 32, got {other}")),
    }
}

fn parse_index_bits(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        other => Err(format!("index bits must be 4 or 8, got {other}")),
    }
}

fn write_epoch_csv(rows: &[EpochRow], path: &Path) -> Result<(), AppError> {
    let mut bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| AppError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    write_bytes(path, &bytes)
}

// ---------------------------------------------------------------------------
// lfsr

#[derive(Args)]
struct LfsrCmd {
    /// Full register description, e.g. "w=8,taps=8+6+5+4,seed=0x1";
    /// overrides --width/--seed
    #[arg(long, value_parser = LfsrSpec::from_str)]
    spec: Option<LfsrSpec>,
    /// Register width in bits (uses the shipped default taps)
    #[arg(long, default_value_t = 8)]
    width: u32,
    /// Initial register state (nonzero)
    #[arg(long, default_value_t = 1)]
    seed: u32,
    /// How many states to print
    #[arg(long, default_value_t = 16)]
    count: u64,
    /// Also map each state into 0..RANGE with the high-bits map
    #[arg(long)]
    range: Option<usize>,
    /// Walk the whole cycle and fail unless the period is 2^w - 1
    #[arg(long)]
    verify: bool,
}

fn cmd_lfsr(cmd: &LfsrCmd) -> Result<(), AppError> {
    let spec = match &cmd.spec {
        Some(s) => s.clone(),
        None => LfsrSpec::new(cmd.width, default_taps(cmd.width)?, cmd.seed)?,
    };
    println!("spec = {spec}");
    let mut reg = Lfsr::from_spec(&spec);
    if let Some(range) = cmd.range {
        println!("step,state_hex,index");
        for step in 0..cmd.count {
            let state = reg.state();
            let idx = map_to_index(state, spec.width(), range);
            println!("{step},{state:x},{idx}");
            reg.step();
        }
    } else {
        println!("step,state_hex");
        for step in 0..cmd.count {
            println!("{},{:x}", step, reg.state());
            reg.step();
        }
    }
    if cmd.verify {
        let period = spec.period();
        let maximal = period == spec.max_period();
        println!("period = {period}");
        println!("maximal = {maximal}");
        if !maximal {
            return Err(AppError::GateFailed(format!(
                "period {period} falls short of the maximal {}",
                spec.max_period()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mask

#[derive(Args)]
struct MaskCmd {
    /// Matrix rows (network input dimension)
    #[arg(long)]
    rows: usize,
    /// Matrix columns (network output dimension)
    #[arg(long)]
    cols: usize,
    /// Target fraction of zeroed entries, in [0, 1)
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    /// Seed from which both register seeds are derived
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Explicit row-register description (overrides the derived default)
    #[arg(long, value_parser = LfsrSpec::from_str)]
    row_spec: Option<LfsrSpec>,
    /// Explicit column-register description (overrides the derived default)
    #[arg(long, value_parser = LfsrSpec::from_str)]
    col_spec: Option<LfsrSpec>,
    /// Write kept positions as CSV (`row,col`, generation order)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_mask(cmd: &MaskCmd) -> Result<(), AppError> {
    let (default_row, default_col) = Mask::default_specs(cmd.rows, cmd.cols, cmd.seed)?;
    let row_spec = cmd.row_spec.clone().unwrap_or(default_row);
    let col_spec = cmd.col_spec.clone().unwrap_or(default_col);
    let mask = Mask::generate(cmd.rows, cmd.cols, cmd.sparsity, row_spec, col_spec)?;
    let stats = mask.stats();
    println!("rows = {}", stats.rows);
    println!("cols = {}", stats.cols);
    println!("target_sparsity = {}", stats.target_sparsity);
    println!("nnz = {}", stats.nnz);
    println!("achieved_sparsity = {:.6}", stats.achieved_sparsity);
    println!("steps_consumed = {}", mask.steps_consumed());
    println!("row_spec = {}", mask.row_spec());
    println!("col_spec = {}", mask.col_spec());
    println!("row_kept_min = {}", stats.row_min);
    println!("row_kept_max = {}", stats.row_max);
    println!("row_kept_cv = {:.6}", stats.row_cv);
    println!("col_kept_min = {}", stats.col_min);
    println!("col_kept_max = {}", stats.col_max);
    println!("col_kept_cv = {:.6}", stats.col_cv);
    if let Some(out) = &cmd.out {
        let mut text = String::from("row,col\n");
        for &(r, c) in mask.kept() {
            let _ = writeln!(text, "{r},{c}");
        }
        write_bytes(out, text.as_bytes())?;
        println!("kept_csv = {}", out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rank

#[derive(Args)]
struct RankCmd {
    /// Matrix rows
    #[arg(long)]
    rows: usize,
    /// Matrix columns
    #[arg(long)]
    cols: usize,
    /// Mask sparsity
    #[arg(long, default_value_t = 0.9)]
    sparsity: f64,
    /// Number of seeded trials
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// Base seed; trial t uses seed + t
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Singular-value tolerance for the rank computation
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    tol: f64,
    /// Rank a trial must reach to pass [default: min(rows, cols) - 2]
    #[arg(long)]
    min_rank: Option<usize>,
    /// Trials that must pass [default: trials - 1]
    #[arg(long)]
    min_pass: Option<u64>,
}

fn cmd_rank(cmd: &RankCmd) -> Result<(), AppError> {
    use rand::SeedableRng;
    let min_dim = cmd.rows.min(cmd.cols);
    let need_rank = cmd.min_rank.unwrap_or(min_dim.saturating_sub(2));
    let need_pass = cmd.min_pass.unwrap_or(cmd.trials.saturating_sub(1));
    println!("trial,rank,min_dim,pass");
    let mut passed = 0u64;
    for t in 0..cmd.trials {
        let trial_seed = cmd.seed + t;
        let (rs, cs) = Mask::default_specs(cmd.rows, cmd.cols, trial_seed)?;
        let mask = Mask::generate(cmd.rows, cmd.cols, cmd.sparsity, rs, cs)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(trial_seed ^ 0x9E37);
        let mut m = Matrix::gaussian(cmd.rows, cmd.cols, &mut rng);
        mask.zero_pruned(&mut m);
        let rank = numerical_rank(&m, cmd.tol);
        let pass = rank >= need_rank;
        passed += pass as u64;
        println!("{t},{rank},{min_dim},{pass}");
    }
    println!("passed = {passed}/{}", cmd.trials);
    println!("required = {need_pass}");
    if passed < need_pass {
        return Err(AppError::GateFailed(format!(
            "only {passed} of {} trials reached rank {need_rank}, needed {need_pass}",
            cmd.trials
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args)]
struct TrainCmd {
    /// Layer sizes, first = input dim, last = class count, e.g. 784,64,32,10
    #[arg(long, value_delimiter = ',', required = true)]
    arch: Vec<usize>,
    /// Training epochs
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Where to write the dense model container
    #[arg(long, default_value = "model.lfsp")]
    out: PathBuf,
    /// Optional per-epoch CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
}

fn cmd_train(cmd: &TrainCmd) -> Result<(), AppError> {
    let dataset = cmd.data.load()?;
    let mut cfg = cmd.train.config();
    cfg.epochs_train = cmd.epochs;
    let (model, rows) = train::train_dense(&dataset, &cmd.arch, &cfg)?;
    let test_acc = lfsr_prune::net::evaluate(&model, &dataset.test)?;
    save_container(&ModelContainer::from_model_dense(&model), &cmd.out)?;
    if let Some(csv_path) = &cmd.csv {
        write_epoch_csv(&rows, csv_path)?;
    }
    println!("epochs = {}", cmd.epochs);
    println!("test_acc = {test_acc:.4}");
    println!("model = {}", cmd.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// prune

#[derive(Args)]
struct PruneCmd {
    /// Dense model container to start from
    #[arg(long)]
    model: PathBuf,
    /// Where to write the pruned model (seed-carrying sparse container)
    #[arg(long, default_value = "pruned.lfsp")]
    out: PathBuf,
    /// Target sparsity in [0, 1)
    #[arg(long, default_value_t = 0.7)]
    sparsity: f64,
    /// Regularization epochs before the hard prune
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Weight precision stored in the output container
    #[arg(long, default_value = "32", value_parser = parse_value_bits)]
    value_bits: u8,
    /// Optional per-epoch CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
}

fn cmd_prune(cmd: &PruneCmd) -> Result<(), AppError> {
    let dataset = cmd.data.load()?;
    let mut model = load_container(&cmd.model)?.to_model()?;
    let mut cfg = cmd.train.config();
    cfg.epochs_regularize = cmd.epochs;
    let (rows, mean_abs) = train::regularize_and_prune(&mut model, &dataset, &cfg, cmd.sparsity)?;
    let pruned_acc = rows.last().map(|r| r.test_acc).unwrap_or(f64::NAN);
    save_container(
        &ModelContainer::from_model_lfsr(&model, cmd.value_bits)?,
        &cmd.out,
    )?;
    if let Some(csv_path) = &cmd.csv {
        write_epoch_csv(&rows, csv_path)?;
    }
    println!("target_sparsity = {}", cmd.sparsity);
    println!("achieved_sparsity = {:.6}", model.achieved_sparsity());
    println!("mean_abs_pruneset_after_reg = {mean_abs:.6e}");
    println!("pruned_acc = {pruned_acc:.4}");
    println!("model = {}", cmd.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// retrain

#[derive(Args)]
struct RetrainCmd {
    /// Pruned model container (its masks replay from the stored seeds)
    #[arg(long)]
    model: PathBuf,
    /// Where to write the fine-tuned model
    #[arg(long, default_value = "final.lfsp")]
    out: PathBuf,
    /// Pinned fine-tuning epochs
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Weight precision stored in the output container
    #[arg(long, default_value = "32", value_parser = parse_value_bits)]
    value_bits: u8,
    /// Optional per-epoch CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
}

fn cmd_retrain(cmd: &RetrainCmd) -> Result<(), AppError> {
    let dataset = cmd.data.load()?;
    let mut model = load_container(&cmd.model)?.to_model()?;
    let mut cfg = cmd.train.config();
    cfg.epochs_retrain = cmd.epochs;
    let rows = train::retrain_pinned(&mut model, &dataset, &cfg)?;
    let final_acc = lfsr_prune::net::evaluate(&model, &dataset.test)?;
    save_container(
        &ModelContainer::from_model_lfsr(&model, cmd.value_bits)?,
        &cmd.out,
    )?;
    if let Some(csv_path) = &cmd.csv {
        write_epoch_csv(&rows, csv_path)?;
    }
    println!("epochs = {}", cmd.epochs);
    println!("final_acc = {final_acc:.4}");
    println!("achieved_sparsity = {:.6}", model.achieved_sparsity());
    println!("model = {}", cmd.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// encode

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Full weight matrices
    Dense,
    /// Seed-carrying sparse layers (requires embedded mask seeds)
    Lfsr,
    /// Value / relative-index / pointer sparse layers
    Baseline,
}

#[derive(Args)]
struct EncodeCmd {
    /// Model container to re-encode
    #[arg(long)]
    model: PathBuf,
    /// Where to write the re-encoded container
    #[arg(long)]
    out: PathBuf,
    /// Target storage format
    #[arg(long, value_enum, default_value_t = Format::Lfsr)]
    format: Format,
    /// Weight precision: 32 (float) or 8 (symmetric quantized)
    #[arg(long, default_value = "32", value_parser = parse_value_bits)]
    value_bits: u8,
    /// Relative-index width for the baseline format: 4 or 8
    #[arg(long, default_value = "8", value_parser = parse_index_bits)]
    index_bits: u8,
}

fn cmd_encode(cmd: &EncodeCmd) -> Result<(), AppError> {
    let model = load_container(&cmd.model)?.to_model()?;
    let container = match cmd.format {
        Format::Dense => ModelContainer::from_model_dense(&model),
        Format::Lfsr => ModelContainer::from_model_lfsr(&model, cmd.value_bits)?,
        Format::Baseline => {
            ModelContainer::from_model_baseline(&model, cmd.index_bits, cmd.value_bits)?
        }
    };
    save_container(&container, &cmd.out)?;
    let bytes = container.to_bytes().len();
    println!("format = {:?}", cmd.format);
    println!("value_bits = {}", cmd.value_bits);
    println!("bytes = {bytes}");
    println!("model = {}", cmd.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// infer

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InferMode {
    /// f64 arithmetic over the stored values
    Float,
    /// i32 accumulation over 8-bit codes (requires a quantized container)
    Int8,
}

#[derive(Args)]
struct InferCmd {
    /// Model container to run
    #[arg(long)]
    model: PathBuf,
    /// Which split to measure
    #[arg(long, default_value = "test")]
    split: SplitChoice,
    /// Arithmetic mode
    #[arg(long, value_enum, default_value_t = InferMode::Float)]
    mode: InferMode,
    /// Only run the first N samples
    #[arg(long)]
    limit: Option<usize>,
    /// Write the summed access trace as a one-row CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    data: DataOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
}

fn add_trace(total: &mut AccessTrace, t: AccessTrace) {
    total.weight_mem_reads += t.weight_mem_reads;
    total.index_mem_reads += t.index_mem_reads;
    total.pointer_mem_reads += t.pointer_mem_reads;
    total.input_buffer_reads += t.input_buffer_reads;
    total.output_buffer_reads += t.output_buffer_reads;
    total.output_buffer_writes += t.output_buffer_writes;
    total.mac_ops += t.mac_ops;
    total.lfsr_steps += t.lfsr_steps;
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn stored_matvec(
    layer: &StoredLayer,
    dense: &Layer,
    x: &[f64],
    relu: bool,
    mode: InferMode,
) -> Result<(Vec<f64>, AccessTrace), AppError> {
    let out = match (mode, layer) {
        (InferMode::Float, StoredLayer::Dense(_)) => kernels::dense_matvec(dense, x, relu)?,
        (InferMode::Float, StoredLayer::Lfsr(l)) => kernels::lfsr_sparse_matvec(l, x, relu)?,
        (InferMode::Float, StoredLayer::Baseline(b)) => {
            kernels::baseline_sparse_matvec(b, x, relu)?
        }
        (InferMode::Int8, stored) => {
            let qx = kernels::quantize_vec(x);
            match stored {
                StoredLayer::Dense(_) => kernels::dense_matvec_int(dense, &qx, relu)?,
                StoredLayer::Lfsr(l) => kernels::lfsr_sparse_matvec_int(l, &qx, relu)?,
                StoredLayer::Baseline(b) => kernels::baseline_sparse_matvec_int(b, &qx, relu)?,
            }
        }
    };
    Ok(out)
}

fn cmd_infer(cmd: &InferCmd) -> Result<(), AppError> {
    let dataset = cmd.data.load()?;
    let container = load_container(&cmd.model)?;
    if container.layers.is_empty() {
        return Err(AppError::Unsuitable("the model container is empty".into()));
    }
    // Dense views back every stored layer so each kernel has what it needs.
    let dense_layers: Vec<Layer> = container
        .layers
        .iter()
        .map(|l| l.to_layer())
        .collect::<Result<_, _>>()?;
    let split = match cmd.split {
        SplitChoice::Train => &dataset.train,
        SplitChoice::Test => &dataset.test,
    };
    let n = cmd.limit.unwrap_or(split.n()).min(split.n());
    if n == 0 {
        return Err(AppError::Unsuitable("no samples to run".into()));
    }

    let mut total = AccessTrace::default();
    let mut correct = 0usize;
    let last = container.layers.len() - 1;
    for i in 0..n {
        let mut x = split.sample(i).to_vec();
        for (li, stored) in container.layers.iter().enumerate() {
            let relu = li < last;
            let (y, t) = stored_matvec(stored, &dense_layers[li], &x, relu, cmd.mode)?;
            add_trace(&mut total, t);
            x = y;
        }
        if argmax(&x) == split.label(i) {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / n as f64;
    println!("samples = {n}");
    println!("accuracy = {accuracy:.4}");
    println!("cycles = {}", total.cycles());
    println!("mac_ops = {}", total.mac_ops);
    println!("index_mem_reads = {}", total.index_mem_reads);
    println!("lfsr_steps = {}", total.lfsr_steps);
    if let Some(trace_path) = &cmd.trace {
        let text = format!("{TRACE_CSV_HEADER}\n{}\n", total.csv_row());
        write_bytes(trace_path, text.as_bytes())?;
        println!("trace = {}", trace_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// footprint

#[derive(Args)]
struct FootprintCmd {
    /// Pruned model container to measure (or use --rows/--cols/--sparsity)
    #[arg(long, conflicts_with_all = ["rows", "cols", "sparsity"])]
    model: Option<PathBuf>,
    /// Layer rows for shape mode
    #[arg(long, requires = "cols")]
    rows: Option<usize>,
    /// Layer columns for shape mode
    #[arg(long, requires = "rows")]
    cols: Option<usize>,
    /// Mask sparsity for shape mode
    #[arg(long, default_value_t = 0.9)]
    sparsity: f64,
    /// Mask seed for shape mode
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Relative-index widths to compare
    #[arg(long, value_delimiter = ',', default_value = "4,8", value_parser = parse_index_bits)]
    index_bits: Vec<u8>,
    /// Weight precision both formats store
    #[arg(long, default_value = "32", value_parser = parse_value_bits)]
    value_bits: u8,
    /// Also write the table to a CSV file
    #[arg(long)]
    csv: Option<PathBuf>,
}

const FOOTPRINT_TABLE_HEADER: &str =
    "layer,index_bits,rows,cols,nnz,value_bits,alpha,proposed_bits,baseline_bits,\
baseline_pointer_bits,ratio";

fn placeholder_layer(rows: usize, cols: usize, sparsity: f64, seed: u64) -> Result<Layer, AppError> {
    let (rs, cs) = Mask::default_specs(rows, cols, seed)?;
    let mask = Mask::generate(rows, cols, sparsity, rs, cs)?;
    let mut weights = Matrix::zeros(rows, cols);
    for (k, &(r, c)) in mask.kept().iter().enumerate() {
        weights.set(r as usize, c as usize, 0.5 + 0.01 * (k % 17) as f64);
    }
    Ok(Layer {
        weights,
        bias: vec![0.0; cols],
        mask: Some(mask),
    })
}

fn cmd_footprint(cmd: &FootprintCmd) -> Result<(), AppError> {
    let layers: Vec<Layer> = match (&cmd.model, cmd.rows, cmd.cols) {
        (Some(path), _, _) => load_container(path)?.to_model()?.layers,
        (None, Some(rows), Some(cols)) => {
            vec![placeholder_layer(rows, cols, cmd.sparsity, cmd.seed)?]
        }
        _ => {
            return Err(AppError::Unsuitable(
                "pass --model FILE or both --rows and --cols".into(),
            ))
        }
    };

    let mut text = String::from(FOOTPRINT_TABLE_HEADER);
    text.push('\n');
    for &bits in &cmd.index_bits {
        let mut sparse_layers = Vec::new();
        let mut base_layers = Vec::new();
        for layer in &layers {
            sparse_layers.push(codec::encode_lfsr(layer, cmd.value_bits)?);
            base_layers.push(codec::encode_baseline(layer, bits, cmd.value_bits)?);
        }
        let pairs: Vec<_> = sparse_layers.iter().zip(base_layers.iter()).collect();
        let report = codec::footprint(&pairs)?;
        for (li, lf) in report.layers.iter().enumerate() {
            let _ = writeln!(
                text,
                "{li},{bits},{},{},{},{},{:.4},{},{},{},{:.4}",
                lf.rows,
                lf.cols,
                lf.nnz,
                lf.value_bits,
                lf.alpha,
                lf.proposed_bits,
                lf.baseline_bits,
                lf.baseline_pointer_bits,
                lf.ratio
            );
        }
        let _ = writeln!(
            text,
            "total,{bits},,,,,,{},{},,{:.4}",
            report.total_proposed_bits, report.total_baseline_bits, report.ratio
        );
    }
    print!("{text}");
    if let Some(csv_path) = &cmd.csv {
        write_bytes(csv_path, text.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Args)]
struct SimulateCmd {
    /// Layer rows
    #[arg(long, default_value_t = 300)]
    rows: usize,
    /// Layer columns
    #[arg(long, default_value_t = 100)]
    cols: usize,
    /// Sparsity levels (grid rows)
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.7,0.95")]
    sparsities: Vec<f64>,
    /// Relative-index widths (grid columns)
    #[arg(long, value_delimiter = ',', default_value = "4,8", value_parser = parse_index_bits)]
    index_bits: Vec<u8>,
    /// Weight precision both formats store
    #[arg(long, default_value = "32", value_parser = parse_value_bits)]
    value_bits: u8,
    /// Mask seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `key = value` cost-table file overriding the built-in defaults
    #[arg(long)]
    cost_table: Option<PathBuf>,
    /// Also write the grid as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn cmd_simulate(cmd: &SimulateCmd) -> Result<(), AppError> {
    let table = match &cmd.cost_table {
        Some(path) => read_text(path)?.parse::<CostTable>()?,
        None => CostTable::default(),
    };
    let grid = cost::savings_grid(
        cmd.rows,
        cmd.cols,
        &cmd.sparsities,
        &cmd.index_bits,
        cmd.value_bits,
        cmd.seed,
        &table,
    )?;
    print!("{}", grid.render_text());
    if let Some(csv_path) = &cmd.csv {
        write_bytes(csv_path, grid.to_csv().as_bytes())?;
        println!("\ncsv = {}", csv_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepCmd {
    /// JSON experiment config; when given, all other flags are ignored
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layer sizes, e.g. 16,12,4
    #[arg(long, value_delimiter = ',', default_value = "16,12,4")]
    arch: Vec<usize>,
    /// Sparsity grid axis
    #[arg(long, value_delimiter = ',', default_value = "0.7")]
    sparsities: Vec<f64>,
    /// Penalty-weight grid axis
    #[arg(long, value_delimiter = ',', default_value = "2")]
    lambdas: Vec<f64>,
    /// Penalty-kind grid axis (l1, l2)
    #[arg(long, value_delimiter = ',', default_value = "l2", value_parser = RegKind::from_str)]
    regs: Vec<RegKind>,
    /// Index widths for the footprint comparison
    #[arg(long, value_delimiter = ',', default_value = "4,8", value_parser = parse_index_bits)]
    index_bits: Vec<u8>,
    /// Weight precision stored in the swept models
    #[arg(long, default_value = "32", value_parser = parse_value_bits)]
    value_bits: u8,
    /// Seed grid axis
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Output directory for all sweep files
    #[arg(long, default_value = "sweep-out")]
    out_dir: PathBuf,
    /// Training epochs per point
    #[arg(long, default_value_t = 30)]
    epochs_train: usize,
    /// Regularization epochs per point
    #[arg(long, default_value_t = 15)]
    epochs_regularize: usize,
    /// Pinned fine-tuning epochs per point
    #[arg(long, default_value_t = 30)]
    epochs_retrain: usize,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
}

fn cmd_sweep(cmd: &SweepCmd) -> Result<(), AppError> {
    let config: ExperimentConfig = match &cmd.config {
        Some(path) => {
            serde_json::from_str(&read_text(path)?).map_err(|source| AppError::Json {
                path: path.clone(),
                source,
            })?
        }
        None => {
            let mut base = cmd.train.config();
            base.epochs_train = cmd.epochs_train;
            base.epochs_regularize = cmd.epochs_regularize;
            base.epochs_retrain = cmd.epochs_retrain;
            ExperimentConfig {
                arch: cmd.arch.clone(),
                dataset: cmd.data.source(),
                sparsities: cmd.sparsities.clone(),
                lambdas: cmd.lambdas.clone(),
                reg_kinds: cmd.regs.clone(),
                index_bits: cmd.index_bits.clone(),
                value_bits: cmd.value_bits,
                seeds: cmd.seeds.clone(),
                out_dir: cmd.out_dir.clone(),
                base,
            }
        }
    };
    let summary = sweep::run_sweep(&config)?;
    println!("points = {}", summary.points.len());
    for o in &summary.points {
        println!(
            "{}: final_acc = {:.4}, sparsity = {:.4}",
            o.params.stem(),
            o.report.final_acc,
            o.report.achieved_sparsity
        );
    }
    println!("summary_csv = {}", summary.summary_csv.display());
    println!("footprint_csv = {}", summary.footprint_csv.display());
    Ok(())
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<(), AppError> {
    match &cli.cmd {
        Cmd::Lfsr(c) => cmd_lfsr(c),
        Cmd::Mask(c) => cmd_mask(c),
        Cmd::Rank(c) => cmd_rank(c),
        Cmd::Train(c) => cmd_train(c),
        Cmd::Prune(c) => cmd_prune(c),
        Cmd::Retrain(c) => cmd_retrain(c),
        Cmd::Encode(c) => cmd_encode(c),
        Cmd::Infer(c) => cmd_infer(c),
        Cmd::Footprint(c) => cmd_footprint(c),
        Cmd::Simulate(c) => cmd_simulate(c),
        Cmd::Sweep(c) => cmd_sweep(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
