//! Training: plain SGD, the decay-only regularize phase targeting the prune
//! set, hard pruning, pinned retraining, and the magnitude-threshold
//! baseline. Also the end-to-end pipeline driver.
//!
//! The regularize phase follows a two-case update. Weights outside the mask
//! (the prune set) receive only decay: `w <- w * (1 - beta*lambda/m)` under
//! L2, or a sign step of size `beta*lambda/m` clamped at the zero crossing
//! under L1. Kept weights receive the plain gradient step. Biases are never
//! regularized or pinned.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::BitSet;
use crate::data::{Dataset, Split};
use crate::mask::{Mask, MaskError};
use crate::matrix::Matrix;
use crate::net::{argmax, evaluate, softmax, Model, NetError};

/// Samples per parallel gradient chunk. Chunk boundaries are fixed by index
/// position and chunk results are summed in order, so the total is
/// bit-identical no matter how many threads run.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("layer {layer} has no mask; run mask generation before this phase")]
    MissingMask { layer: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("decay beta*lambda/m = {decay} >= 1 would flip weight signs")]
    DecayTooLarge { decay: f64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Which regularizer shapes the decay applied to prune-set weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RegKind {
    L1,
    L2,
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegKind::L1 => "l1",
            RegKind::L2 => "l2",
        })
    }
}

impl FromStr for RegKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(RegKind::L1),
            "l2" => Ok(RegKind::L2),
            other => Err(format!("unknown regularizer {other:?}, expected l1 or l2")),
        }
    }
}

/// Pipeline phase; selects the update rule in [`sgd_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Regularize,
    Retrain,
}

impl Phase {
    fn id(self) -> u64 {
        match self {
            Phase::Train => 0,
            Phase::Regularize => 1,
            Phase::Retrain => 2,
        }
    }

    pub fn stage_name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Regularize => "regularize",
            Phase::Retrain => "retrain",
        }
    }
}

/// Hyperparameters for all three phases plus the experiment seed.
///
/// The seed fixes initialization, mask drawing, and batch shuffling through
/// documented derived streams, so one integer reproduces a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub reg_kind: RegKind,
    pub batch_size: usize,
    pub epochs_train: usize,
    pub epochs_regularize: usize,
    pub epochs_retrain: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            lambda: 2.0,
            reg_kind: RegKind::L2,
            batch_size: 32,
            epochs_train: 30,
            epochs_regularize: 15,
            epochs_retrain: 30,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig(format!(
                "learning rate {} must be finite and positive",
                self.learning_rate
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "lambda {} must be finite and non-negative",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size is zero".into()));
        }
        Ok(())
    }
}

/// splitmix64; used to derive independent seed streams from the run seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const STREAM_INIT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_MAGNITUDE: u64 = 4;

/// Per-layer weight and bias gradients, same shapes as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for m in &mut self.weights {
            for v in m.data_mut() {
                *v *= factor;
            }
        }
        for b in &mut self.bias {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Backprop for one sample, accumulated into `acc` (unscaled).
fn accumulate_sample(model: &Model, x: &[f64], label: usize, acc: &mut Gradients) {
    let pass = model.forward(x).expect("dimensions checked by caller");
    let n_layers = model.layers.len();

    // Output delta: softmax cross-entropy gives probs - onehot.
    let mut delta = pass.probs.clone();
    delta[label] -= 1.0;

    for l in (0..n_layers).rev() {
        let input = &pass.layer_inputs[l];
        {
            let gw = &mut acc.weights[l];
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = gw.row_mut(i);
                for (j, &dj) in delta.iter().enumerate() {
                    row[j] += xi * dj;
                }
            }
            for (j, &dj) in delta.iter().enumerate() {
                acc.bias[l][j] += dj;
            }
        }
        if l == 0 {
            break;
        }
        // delta_prev = (W delta) gated by the rectifier: input[l] > 0.
        let weights = &model.layers[l].weights;
        let mut prev = vec![0.0; weights.rows()];
        for (i, p) in prev.iter_mut().enumerate() {
            if input[i] > 0.0 {
                let row = weights.row(i);
                *p = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
            }
        }
        delta = prev;
    }
}

fn chunk_gradients(model: &Model, split: &Split, idx: &[usize]) -> Gradients {
    let mut acc = Gradients::zeros_like(model);
    for &i in idx {
        accumulate_sample(model, split.sample(i), split.label(i), &mut acc);
    }
    acc
}

fn reduce_chunks(model: &Model, chunks: Vec<Gradients>, m: usize) -> Gradients {
    let mut total = Gradients::zeros_like(model);
    for c in &chunks {
        total.add_assign(c);
    }
    total.scale(1.0 / m as f64);
    total
}

/// Mean cross-entropy gradients over the batch.
///
/// Work is split into fixed-size chunks whose partial sums are reduced in
/// index order, so the result does not depend on thread count.
pub fn data_gradients(model: &Model, split: &Split, idx: &[usize]) -> Gradients {
    #[cfg(feature = "parallel")]
    let chunks: Vec<Gradients> = {
        use rayon::prelude::*;
        idx.par_chunks(GRAD_CHUNK)
            .map(|c| chunk_gradients(model, split, c))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Gradients> = idx
        .chunks(GRAD_CHUNK)
        .map(|c| chunk_gradients(model, split, c))
        .collect();
    reduce_chunks(model, chunks, idx.len())
}

/// Single-threaded twin of [`data_gradients`]; written for benchmarks and
/// equivalence tests, produces bit-identical output.
pub fn data_gradients_seq(model: &Model, split: &Split, idx: &[usize]) -> Gradients {
    let chunks: Vec<Gradients> = idx
        .chunks(GRAD_CHUNK)
        .map(|c| chunk_gradients(model, split, c))
        .collect();
    reduce_chunks(model, chunks, idx.len())
}

/// Mean cross-entropy over the batch.
pub fn data_loss(model: &Model, split: &Split, idx: &[usize]) -> Result<f64, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = 0.0;
    for &i in idx {
        let pass = model.forward(split.sample(i))?;
        total -= pass.probs[split.label(i)].max(1e-300).ln();
    }
    Ok(total / idx.len() as f64)
}

/// The phase objective: mean cross-entropy, plus the prune-set penalty
/// during the regularize phase — `lambda/(2m) * sum w^2` (L2) or
/// `lambda/m * sum |w|` (L1), biases excluded.
pub fn objective(
    model: &Model,
    split: &Split,
    idx: &[usize],
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<f64, TrainError> {
    let ce = data_loss(model, split, idx)?;
    if phase != Phase::Regularize || cfg.lambda == 0.0 {
        return Ok(ce);
    }
    let m = idx.len() as f64;
    let mut penalty = 0.0;
    for (li, layer) in model.layers.iter().enumerate() {
        let mask = layer.mask.as_ref().ok_or(TrainError::MissingMask { layer: li })?;
        for r in 0..layer.in_dim() {
            for c in 0..layer.out_dim() {
                if !mask.is_kept(r, c) {
                    let w = layer.weights.get(r, c);
                    penalty += match cfg.reg_kind {
                        RegKind::L2 => w * w / 2.0,
                        RegKind::L1 => w.abs(),
                    };
                }
            }
        }
    }
    Ok(ce + cfg.lambda / m * penalty)
}

/// Analytic gradient of [`objective`] for the given phase.
///
/// Train: plain data gradient. Regularize: data gradient plus the penalty
/// term on prune-set weights. Retrain: data gradient with prune-set entries
/// zeroed (the projected direction actually applied).
pub fn objective_gradients(
    model: &Model,
    split: &Split,
    idx: &[usize],
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<Gradients, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut grads = data_gradients(model, split, idx);
    match phase {
        Phase::Train => {}
        Phase::Regularize => {
            let m = idx.len() as f64;
            for (li, layer) in model.layers.iter().enumerate() {
                let mask = layer.mask.as_ref().ok_or(TrainError::MissingMask { layer: li })?;
                let gw = &mut grads.weights[li];
                for r in 0..layer.in_dim() {
                    for c in 0..layer.out_dim() {
                        if !mask.is_kept(r, c) {
                            let w = layer.weights.get(r, c);
                            let term = match cfg.reg_kind {
                                RegKind::L2 => cfg.lambda / m * w,
                                RegKind::L1 => cfg.lambda / m * w.signum(),
                            };
                            gw.set(r, c, gw.get(r, c) + term);
                        }
                    }
                }
            }
        }
        Phase::Retrain => {
            for (li, layer) in model.layers.iter().enumerate() {
                let mask = layer.mask.as_ref().ok_or(TrainError::MissingMask { layer: li })?;
                let gw = &mut grads.weights[li];
                for r in 0..layer.in_dim() {
                    for c in 0..layer.out_dim() {
                        if !mask.is_kept(r, c) {
                            gw.set(r, c, 0.0);
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// One mini-batch update under the phase's rule.
pub fn sgd_step(
    model: &mut Model,
    split: &Split,
    idx: &[usize],
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<(), TrainError> {
    if idx.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    cfg.validate()?;
    let m = idx.len() as f64;
    let beta = cfg.learning_rate;
    let decay = beta * cfg.lambda / m;
    if phase == Phase::Regularize && decay >= 1.0 {
        return Err(TrainError::DecayTooLarge { decay });
    }
    // Masks must be in place before gradients are spent on a doomed update.
    if phase != Phase::Train {
        for (li, layer) in model.layers.iter().enumerate() {
            if layer.mask.is_none() {
                return Err(TrainError::MissingMask { layer: li });
            }
        }
    }

    let grads = data_gradients(model, split, idx);
    for (li, layer) in model.layers.iter_mut().enumerate() {
        let gw = &grads.weights[li];
        match phase {
            Phase::Train => {
                for (w, g) in layer.weights.data_mut().iter_mut().zip(gw.data()) {
                    *w -= beta * g;
                }
            }
            Phase::Regularize => {
                let mask = layer.mask.as_ref().unwrap();
                let cols = gw.cols();
                for (k, (w, g)) in layer
                    .weights
                    .data_mut()
                    .iter_mut()
                    .zip(gw.data())
                    .enumerate()
                {
                    if mask.is_kept(k / cols, k % cols) {
                        *w -= beta * g;
                    } else {
                        match cfg.reg_kind {
                            RegKind::L2 => *w *= 1.0 - decay,
                            RegKind::L1 => {
                                // Sign step clamped at the zero crossing; a
                                // weight at zero stays at zero.
                                *w = if *w > decay {
                                    *w - decay
                                } else if *w < -decay {
                                    *w + decay
                                } else {
                                    0.0
                                };
                            }
                        }
                    }
                }
            }
            Phase::Retrain => {
                let mask = layer.mask.as_ref().unwrap();
                let cols = gw.cols();
                for (k, (w, g)) in layer
                    .weights
                    .data_mut()
                    .iter_mut()
                    .zip(gw.data())
                    .enumerate()
                {
                    if mask.is_kept(k / cols, k % cols) {
                        *w -= beta * g;
                    }
                }
            }
        }
        for (b, g) in layer.bias.iter_mut().zip(&grads.bias[li]) {
            *b -= beta * g;
        }
    }
    Ok(())
}

/// Zeroes every prune-set weight exactly. Idempotent.
pub fn prune(model: &mut Model) -> Result<(), TrainError> {
    for li in 0..model.layers.len() {
        let layer = &mut model.layers[li];
        let mask = layer.mask.take().ok_or(TrainError::MissingMask { layer: li })?;
        mask.zero_pruned(&mut layer.weights);
        layer.mask = Some(mask);
    }
    Ok(())
}

/// Mean |weight| over all prune-set entries; 0 when the prune set is empty.
pub fn mean_abs_pruneset(model: &Model) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (li, layer) in model.layers.iter().enumerate() {
        let mask = layer.mask.as_ref().ok_or(TrainError::MissingMask { layer: li })?;
        for r in 0..layer.in_dim() {
            for c in 0..layer.out_dim() {
                if !mask.is_kept(r, c) {
                    sum += layer.weights.get(r, c).abs();
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Runs one epoch: shuffles sample indices with a seed derived from
/// (config seed, phase, epoch), then steps over batches in order.
pub fn run_epoch(
    model: &mut Model,
    split: &Split,
    cfg: &TrainConfig,
    phase: Phase,
    epoch: usize,
) -> Result<(), TrainError> {
    if split.n() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let stream = STREAM_SHUFFLE
        .wrapping_add(phase.id().wrapping_mul(1 << 40))
        .wrapping_add((epoch as u64).wrapping_mul(1 << 20));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
    let mut order: Vec<usize> = (0..split.n()).collect();
    order.shuffle(&mut rng);
    for batch in order.chunks(cfg.batch_size) {
        sgd_step(model, split, batch, cfg, phase)?;
    }
    Ok(())
}

/// One per-epoch record; also emitted for the single post-prune row.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRow {
    pub stage: String,
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub sparsity: f64,
    pub mean_abs_pruneset_weight: Option<f64>,
}

/// Shape, specs, and outcome for one masked layer.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub sparsity: f64,
    pub row_spec: String,
    pub col_spec: String,
    pub steps_consumed: u64,
}

/// Everything a pipeline run produces besides the model itself.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub target_sparsity: f64,
    pub dense_acc: f64,
    pub pruned_acc: f64,
    pub final_acc: f64,
    pub achieved_sparsity: f64,
    pub compression_rate: f64,
    pub mean_abs_pruneset_after_reg: f64,
    pub layers: Vec<LayerReport>,
    pub rows: Vec<EpochRow>,
}

impl PipelineReport {
    /// Per-epoch CSV with the fixed header
    /// `stage,epoch,train_acc,test_acc,sparsity,mean_abs_pruneset_weight`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn record_row(
    rows: &mut Vec<EpochRow>,
    model: &Model,
    dataset: &Dataset,
    stage: &str,
    epoch: usize,
    with_prune_stat: bool,
) -> Result<(f64, f64), TrainError> {
    let train_acc = evaluate(model, &dataset.train)?;
    let test_acc = evaluate(model, &dataset.test)?;
    let mean_abs = if with_prune_stat {
        Some(mean_abs_pruneset(model)?)
    } else {
        None
    };
    rows.push(EpochRow {
        stage: stage.to_string(),
        epoch,
        train_acc,
        test_acc,
        sparsity: model.achieved_sparsity(),
        mean_abs_pruneset_weight: mean_abs,
    });
    Ok((train_acc, test_acc))
}

/// Attaches generated masks to every layer, drawn from per-layer seeds
/// derived from the config seed.
pub fn attach_masks(model: &mut Model, sparsity: f64, cfg: &TrainConfig) -> Result<(), TrainError> {
    for (li, layer) in model.layers.iter_mut().enumerate() {
        let seed = derive_seed(cfg.seed, STREAM_MASK.wrapping_add((li as u64) << 32));
        let (rs, cs) = Mask::default_specs(layer.in_dim(), layer.out_dim(), seed)
            .map_err(MaskError::from)?;
        layer.mask = Some(Mask::generate(
            layer.in_dim(),
            layer.out_dim(),
            sparsity,
            rs,
            cs,
        )?);
    }
    Ok(())
}

/// Trains a fresh dense model. Initialization and the epoch schedule match
/// the first stage of [`run_pipeline`], so equal seeds give equal models.
///
/// `arch` must start at the dataset dimension and end at the class count.
pub fn train_dense(
    dataset: &Dataset,
    arch: &[usize],
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochRow>), TrainError> {
    cfg.validate()?;
    if arch.first() != Some(&dataset.dim()) {
        return Err(TrainError::BadConfig(format!(
            "architecture input {:?} does not match dataset dimension {}",
            arch.first(),
            dataset.dim()
        )));
    }
    if arch.last() != Some(&dataset.n_classes) {
        return Err(TrainError::BadConfig(format!(
            "architecture output {:?} does not match class count {}",
            arch.last(),
            dataset.n_classes
        )));
    }
    let mut model = Model::init(arch, derive_seed(cfg.seed, STREAM_INIT))?;
    let mut rows = Vec::new();
    for epoch in 0..cfg.epochs_train {
        run_epoch(&mut model, &dataset.train, cfg, Phase::Train, epoch)?;
        record_row(&mut rows, &model, dataset, "train", epoch, false)?;
    }
    Ok((model, rows))
}

/// Attaches fresh masks, runs the decay epochs, then hard-zeroes the prune
/// set. Returns the stage's per-epoch rows — ending with the single
/// post-prune row — and the mean |prune-set weight| measured just before
/// the hard zero.
pub fn regularize_and_prune(
    model: &mut Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    sparsity: f64,
) -> Result<(Vec<EpochRow>, f64), TrainError> {
    cfg.validate()?;
    attach_masks(model, sparsity, cfg)?;
    let mut rows = Vec::new();
    for epoch in 0..cfg.epochs_regularize {
        run_epoch(model, &dataset.train, cfg, Phase::Regularize, epoch)?;
        record_row(&mut rows, model, dataset, "regularize", epoch, true)?;
    }
    let mean_abs = mean_abs_pruneset(model)?;
    prune(model)?;
    record_row(&mut rows, model, dataset, "prune", 0, true)?;
    Ok((rows, mean_abs))
}

/// Fine-tunes with pruned weights pinned at zero. Every layer must already
/// carry a mask.
pub fn retrain_pinned(
    model: &mut Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRow>, TrainError> {
    cfg.validate()?;
    for (li, layer) in model.layers.iter().enumerate() {
        if layer.mask.is_none() {
            return Err(TrainError::MissingMask { layer: li });
        }
    }
    let mut rows = Vec::new();
    for epoch in 0..cfg.epochs_retrain {
        run_epoch(model, &dataset.train, cfg, Phase::Retrain, epoch)?;
        record_row(&mut rows, model, dataset, "retrain", epoch, true)?;
    }
    Ok(rows)
}

/// The full pipeline: train, mask, regularize, prune, retrain.
///
/// `arch` must start at the dataset dimension and end at the class count.
/// Every stage appends per-epoch rows; the report carries stage accuracies,
/// per-layer mask records, and the compression rate
/// (weight count / kept weight count, biases excluded).
pub fn run_pipeline(
    dataset: &Dataset,
    arch: &[usize],
    cfg: &TrainConfig,
    sparsity: f64,
) -> Result<(Model, PipelineReport), TrainError> {
    let (mut model, mut rows) = train_dense(dataset, arch, cfg)?;
    let dense_acc = evaluate(&model, &dataset.test)?;

    let (stage_rows, mean_abs_pruneset_after_reg) =
        regularize_and_prune(&mut model, dataset, cfg, sparsity)?;
    let pruned_acc = stage_rows
        .last()
        .map(|r| r.test_acc)
        .expect("the post-prune row is always recorded");
    rows.extend(stage_rows);

    rows.extend(retrain_pinned(&mut model, dataset, cfg)?);
    let final_acc = evaluate(&model, &dataset.test)?;

    let layers = model
        .layers
        .iter()
        .map(|l| {
            let mask = l.mask.as_ref().unwrap();
            LayerReport {
                rows: l.in_dim(),
                cols: l.out_dim(),
                nnz: mask.nnz(),
                sparsity: l.achieved_sparsity(),
                row_spec: mask.row_spec().to_string(),
                col_spec: mask.col_spec().to_string(),
                steps_consumed: mask.steps_consumed(),
            }
        })
        .collect();

    let report = PipelineReport {
        target_sparsity: sparsity,
        dense_acc,
        pruned_acc,
        final_acc,
        mean_abs_pruneset_after_reg,
        achieved_sparsity: model.achieved_sparsity(),
        compression_rate: model.weight_count() as f64 / model.weight_nonzero().max(1) as f64,
        layers,
        rows,
    };
    Ok((model, report))
}

/// Magnitude-threshold baseline outcome.
#[derive(Debug, Clone, Serialize)]
pub struct MagnitudeReport {
    pub final_acc: f64,
    pub achieved_sparsity: f64,
    pub rows: Vec<EpochRow>,
}

/// Iterative magnitude pruning with pinned retraining.
///
/// The sparsity schedule ramps linearly to `target_sparsity` over
/// `iterations`. Each iteration zeroes the smallest-magnitude weights per
/// layer (ties broken by index, already-zero entries sort first so pins only
/// grow), then runs `retrain_epochs` pinned epochs.
pub fn magnitude_prune_baseline(
    model: &mut Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    target_sparsity: f64,
    iterations: usize,
    retrain_epochs: usize,
) -> Result<MagnitudeReport, TrainError> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(TrainError::BadConfig(format!(
            "target sparsity {target_sparsity} outside [0, 1)"
        )));
    }
    if iterations == 0 {
        return Err(TrainError::BadConfig("iterations is zero".into()));
    }

    let mut rows = Vec::new();
    let mut pins: Vec<BitSet> = model
        .layers
        .iter()
        .map(|l| BitSet::new(l.in_dim() * l.out_dim()))
        .collect();

    for it in 1..=iterations {
        let frac = target_sparsity * it as f64 / iterations as f64;
        for (layer, pin) in model.layers.iter_mut().zip(&mut pins) {
            let data = layer.weights.data_mut();
            let zero_count = (frac * data.len() as f64).round() as usize;
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.sort_by(|&a, &b| {
                data[a]
                    .abs()
                    .partial_cmp(&data[b].abs())
                    .expect("weights are finite")
                    .then(a.cmp(&b))
            });
            for &k in &order[..zero_count] {
                data[k] = 0.0;
                pin.set(k);
            }
        }

        for epoch in 0..retrain_epochs {
            let stream = STREAM_MAGNITUDE
                .wrapping_add((it as u64) << 40)
                .wrapping_add((epoch as u64) << 20);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
            let mut order: Vec<usize> = (0..dataset.train.n()).collect();
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let grads = data_gradients(model, &dataset.train, batch);
                for (li, layer) in model.layers.iter_mut().enumerate() {
                    let gw = &grads.weights[li];
                    for (k, (w, g)) in layer
                        .weights
                        .data_mut()
                        .iter_mut()
                        .zip(gw.data())
                        .enumerate()
                    {
                        if !pins[li].get(k) {
                            *w -= cfg.learning_rate * g;
                        }
                    }
                    for (b, g) in layer.bias.iter_mut().zip(&grads.bias[li]) {
                        *b -= cfg.learning_rate * g;
                    }
                }
            }
            let train_acc = evaluate(model, &dataset.train)?;
            let test_acc = evaluate(model, &dataset.test)?;
            rows.push(EpochRow {
                stage: format!("magnitude_{it}"),
                epoch,
                train_acc,
                test_acc,
                sparsity: model.achieved_sparsity(),
                mean_abs_pruneset_weight: None,
            });
        }
    }

    Ok(MagnitudeReport {
        final_acc: evaluate(model, &dataset.test)?,
        achieved_sparsity: model.achieved_sparsity(),
        rows,
    })
}

/// Quick argmax accuracy of raw logits on a feature slice; used by tests.
#[allow(dead_code)]
pub(crate) fn predict_class(model: &Model, x: &[f64]) -> usize {
    let pass = model.forward(x).unwrap();
    argmax(&softmax(&pass.logits))
}
