//! Fully-connected network: layers, forward pass, accuracy evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Split;
use crate::mask::Mask;
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("architecture needs at least an input and an output size")]
    ArchTooShort,
    #[error("architecture dimension {position} is zero")]
    ZeroDim { position: usize },
    #[error("layer {layer} expects {expected} inputs, previous layer emits {got}")]
    DimChainMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("input has {got} features, model expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("evaluation split is empty")]
    EmptySplit,
}

/// One dense layer; weights are input-major (rows = inputs, cols = outputs).
/// A mask appears once the layer enters the regularize/prune phases.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub mask: Option<Mask>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Fraction of weight entries that are exactly zero.
    pub fn achieved_sparsity(&self) -> f64 {
        let total = self.weights.rows() * self.weights.cols();
        1.0 - self.weights.count_nonzero() as f64 / total as f64
    }
}

/// Computes `ReLU?(W^T x + b)` for one layer.
pub(crate) fn layer_forward(layer: &Layer, x: &[f64], relu: bool) -> Vec<f64> {
    debug_assert_eq!(x.len(), layer.in_dim());
    let mut z = layer.bias.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = layer.weights.row(i);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj += row[j] * xi;
        }
    }
    if relu {
        for v in &mut z {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    z
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Everything the forward pass produces: the input to each layer (index 0
/// is the sample itself), the final pre-activation, and the softmax output.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub layer_inputs: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Ordered layers; hidden layers use the rectifier, the output softmax.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    /// Builds a model with scaled-uniform weights in
    /// `±sqrt(6 / (fan_in + fan_out))` and zero biases. Entries are drawn
    /// layer by layer in row-major order, so a seed fixes every weight.
    pub fn init(arch: &[usize], seed: u64) -> Result<Model, NetError> {
        check_arch(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Matrix::from_fn(fan_in, fan_out, |_, _| {
                        rng.random_range(-limit..=limit)
                    }),
                    bias: vec![0.0; fan_out],
                    mask: None,
                }
            })
            .collect();
        Ok(Model { layers })
    }

    /// Wraps explicit layers after checking the dimension chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Model, NetError> {
        if layers.is_empty() {
            return Err(NetError::ArchTooShort);
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(NetError::DimChainMismatch {
                    layer: i + 1,
                    expected: pair[1].in_dim(),
                    got: pair[0].out_dim(),
                });
            }
        }
        Ok(Model { layers })
    }

    pub fn arch(&self) -> Vec<usize> {
        let mut arch = vec![self.layers[0].in_dim()];
        arch.extend(self.layers.iter().map(|l| l.out_dim()));
        arch
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Total weight entries (biases not counted).
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols())
            .sum()
    }

    /// Nonzero weight entries (biases not counted).
    pub fn weight_nonzero(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.count_nonzero())
            .sum()
    }

    /// Fraction of weight entries that are exactly zero.
    pub fn achieved_sparsity(&self) -> f64 {
        1.0 - self.weight_nonzero() as f64 / self.weight_count() as f64
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass, NetError> {
        if x.len() != self.in_dim() {
            return Err(NetError::InputDimMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        layer_inputs.push(x.to_vec());
        for layer in &self.layers[..n_layers - 1] {
            let a = layer_forward(layer, layer_inputs.last().unwrap(), true);
            layer_inputs.push(a);
        }
        let logits = layer_forward(
            &self.layers[n_layers - 1],
            layer_inputs.last().unwrap(),
            false,
        );
        let probs = softmax(&logits);
        Ok(ForwardPass {
            layer_inputs,
            logits,
            probs,
        })
    }

    /// Top-1 class: index of the largest logit, first on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize, NetError> {
        let pass = self.forward(x)?;
        Ok(argmax(&pass.logits))
    }
}

fn check_arch(arch: &[usize]) -> Result<(), NetError> {
    if arch.len() < 2 {
        return Err(NetError::ArchTooShort);
    }
    for (position, &d) in arch.iter().enumerate() {
        if d == 0 {
            return Err(NetError::ZeroDim { position });
        }
    }
    Ok(())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy over a split. Sample order cannot matter: the result is
/// an integer count divided by n.
pub fn evaluate(model: &Model, split: &Split) -> Result<f64, NetError> {
    if split.n() == 0 {
        return Err(NetError::EmptySplit);
    }
    let hit = |i: usize| -> Result<u64, NetError> {
        Ok((model.predict(split.sample(i))? == split.label(i)) as u64)
    };
    #[cfg(feature = "parallel")]
    let correct: u64 = {
        use rayon::prelude::*;
        (0..split.n())
            .into_par_iter()
            .map(hit)
            .try_reduce(|| 0, |a, b| Ok(a + b))?
    };
    #[cfg(not(feature = "parallel"))]
    let correct: u64 = {
        let mut sum = 0;
        for i in 0..split.n() {
            sum += hit(i)?;
        }
        sum
    };
    Ok(correct as f64 / split.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn plain_layer(weights: Matrix) -> Layer {
        let bias = vec![0.0; weights.cols()];
        Layer {
            weights,
            bias,
            mask: None,
        }
    }

    #[test]
    fn identity_layer_rectifies() {
        let layer = plain_layer(Matrix::identity(2));
        assert_eq!(layer_forward(&layer, &[1.0, -1.0], true), vec![1.0, 0.0]);
        assert_eq!(layer_forward(&layer, &[1.0, -1.0], false), vec![1.0, -1.0]);
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let model = Model::from_layers(vec![plain_layer(Matrix::zeros(3, 4))]).unwrap();
        let pass = model.forward(&[0.5, -2.0, 3.0]).unwrap();
        for &p in &pass.probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = Model::init(&[6, 5, 4], 11).unwrap();
        let x: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) / 3.0).collect();
        let pass = model.forward(&x).unwrap();
        let sum: f64 = pass.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert_eq!(pass.layer_inputs.len(), 2);
        assert_eq!(pass.layer_inputs[0], x);
    }

    #[test]
    fn forward_matches_triple_loop_oracle() {
        let model = Model::init(&[7, 5, 3], 23).unwrap();
        let x: Vec<f64> = (0..7).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();

        // Straightforward reference: explicit loops, no shortcuts.
        let mut a = x.clone();
        for (li, layer) in model.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim()];
            #[allow(clippy::needless_range_loop)]
            for j in 0..layer.out_dim() {
                z[j] = layer.bias[j];
                for i in 0..layer.in_dim() {
                    z[j] += layer.weights.get(i, j) * a[i];
                }
            }
            if li + 1 < model.layers.len() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            a = z;
        }

        let pass = model.forward(&x).unwrap();
        for (got, want) in pass.logits.iter().zip(&a) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors_are_reported() {
        assert_eq!(Model::init(&[5], 1).unwrap_err(), NetError::ArchTooShort);
        assert_eq!(
            Model::init(&[5, 0, 3], 1).unwrap_err(),
            NetError::ZeroDim { position: 1 }
        );
        let bad = Model::from_layers(vec![
            plain_layer(Matrix::zeros(4, 3)),
            plain_layer(Matrix::zeros(2, 5)),
        ]);
        assert_eq!(
            bad.unwrap_err(),
            NetError::DimChainMismatch {
                layer: 1,
                expected: 2,
                got: 3
            }
        );
        let model = Model::init(&[4, 3], 1).unwrap();
        assert_eq!(
            model.forward(&[1.0, 2.0]).unwrap_err(),
            NetError::InputDimMismatch {
                expected: 4,
                got: 2
            }
        );
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let a = Model::init(&[8, 6, 3], 5).unwrap();
        let b = Model::init(&[8, 6, 3], 5).unwrap();
        let c = Model::init(&[8, 6, 3], 6).unwrap();
        assert_eq!(a.layers[0].weights, b.layers[0].weights);
        assert_ne!(a.layers[0].weights, c.layers[0].weights);
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(a.layers[0].weights.data().iter().all(|v| v.abs() <= limit));
        assert!(a.layers[0].bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.arch(), vec![8, 6, 3]);
        assert_eq!(a.weight_count(), 8 * 6 + 6 * 3);
    }

    #[test]
    fn evaluate_counts_exact_matches() {
        // A model that always answers class 1 via the bias.
        let mut layer = plain_layer(Matrix::zeros(2, 3));
        layer.bias[1] = 5.0;
        let model = Model::from_layers(vec![layer]).unwrap();
        let all_ones = Split::from_parts(2, vec![0.0; 8], vec![1, 1, 1, 1]).unwrap();
        assert_eq!(evaluate(&model, &all_ones).unwrap(), 1.0);
        let half = Split::from_parts(2, vec![0.0; 8], vec![1, 0, 1, 0]).unwrap();
        assert_eq!(evaluate(&model, &half).unwrap(), 0.5);
        let empty = Split::from_parts(2, vec![], vec![]).unwrap();
        assert_eq!(evaluate(&model, &empty).unwrap_err(), NetError::EmptySplit);
    }

    #[test]
    fn evaluate_is_order_invariant() {
        let model = Model::init(&[4, 5, 3], 7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let features: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let split = Split::from_parts(4, features.clone(), labels.clone()).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut shuffled_features = Vec::with_capacity(n * 4);
        let mut shuffled_labels = Vec::with_capacity(n);
        for &i in &order {
            shuffled_features.extend_from_slice(&features[i * 4..(i + 1) * 4]);
            shuffled_labels.push(labels[i]);
        }
        let shuffled = Split::from_parts(4, shuffled_features, shuffled_labels).unwrap();

        assert_eq!(
            evaluate(&model, &split).unwrap(),
            evaluate(&model, &shuffled).unwrap()
        );
    }

    #[test]
    fn random_model_on_random_labels_is_near_chance() {
        let model = Model::init(&[8, 6, 10], 41).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 1000;
        let features: Vec<f64> = (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let split = Split::from_parts(8, features, labels).unwrap();
        let acc = evaluate(&model, &split).unwrap();
        assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
    }
}
