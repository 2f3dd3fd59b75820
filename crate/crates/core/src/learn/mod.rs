//! Small native classifiers: softmax regression and tanh MLPs trained with
//! categorical cross-entropy.

mod metrics;
mod train;

pub use metrics::{binary_auc, evaluate, macro_auc, macro_f1, Metrics};
pub use train::{train_until_converged, write_loss_trace_csv, Optimizer, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::LabeledDataset;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("input has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("flat parameter vector has {found} entries, architecture needs {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyData,
    #[error("model has {model} classes, data has {data}")]
    ClassMismatch { model: usize, data: usize },
}

pub type Result<T, E = LearnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn softmax(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: Vec::new(),
            classes,
        }
    }

    pub fn mlp(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: vec![hidden],
            classes,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend_from_slice(&self.hidden);
        w.push(self.classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(LearnError::Architecture(format!(
                "zero-width layer in {self:?}"
            )));
        }
        if self.classes < 2 {
            return Err(LearnError::Architecture("need at least two classes".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Dense layer, `weights` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.n_in).zip(&self.bias) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .widths()
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            Layer {
                n_in,
                n_out,
                weights: (0..n_in * n_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect(),
                bias: vec![0.0; n_out],
            }
        })
        .collect();
    Ok(ModelParams {
        arch: arch.clone(),
        layers,
    })
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        Self::unflatten(arch, &vec![0.0; arch.n_params()])
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params()
    }

    /// Layer by layer: weights (row-major) then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.n_params() {
            return Err(LearnError::ParamCount {
                expected: arch.n_params(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        let layers = arch
            .widths()
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let weights = flat[offset..offset + n_in * n_out].to_vec();
                offset += n_in * n_out;
                let bias = flat[offset..offset + n_out].to_vec();
                offset += n_out;
                Layer {
                    n_in,
                    n_out,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    /// Activations of every layer; the last entry holds raw logits.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.apply(&acts[i], &mut out);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input {
            return Err(LearnError::DimensionMismatch {
                expected: self.arch.input,
                found: x.len(),
            });
        }
        Ok(self.activations(x).pop().expect("output layer"))
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(argmax(&logits))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln softmax(logits)[class]`, computed without forming the probabilities.
fn log_prob(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[class] - max - lse
}

pub(crate) fn check_data(model: &ModelParams, data: &LabeledDataset) -> Result<()> {
    if data.dim() != model.arch.input {
        return Err(LearnError::DimensionMismatch {
            expected: model.arch.input,
            found: data.dim(),
        });
    }
    if data.n_classes() > model.arch.classes {
        return Err(LearnError::ClassMismatch {
            model: model.arch.classes,
            data: data.n_classes(),
        });
    }
    Ok(())
}

/// Mean cross-entropy over the given rows.
pub fn mean_loss(model: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> Result<f64> {
    check_data(model, data)?;
    if indices.is_empty() {
        return Err(LearnError::EmptyData);
    }
    let total: f64 = indices
        .iter()
        .map(|&i| {
            -log_prob(
                &model.activations(data.row(i)).pop().expect("logits"),
                data.label(i),
            )
        })
        .sum();
    Ok(total / indices.len() as f64)
}

/// Mean cross-entropy over the given rows and its gradient with respect to
/// the flattened parameters.
pub fn loss_and_grad(
    model: &ModelParams,
    data: &LabeledDataset,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_data(model, data)?;
    if indices.is_empty() {
        return Err(LearnError::EmptyData);
    }
    let n_layers = model.layers.len();
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = model
        .layers
        .iter()
        .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
        .collect();
    let mut loss = 0.0;

    for &i in indices {
        let acts = model.activations(data.row(i));
        let logits = &acts[n_layers];
        let y = data.label(i);
        loss -= log_prob(logits, y);

        // dL/dlogits = p - onehot(y)
        let mut delta = softmax(logits);
        delta[y] -= 1.0;
        for l in (0..n_layers).rev() {
            let layer = &model.layers[l];
            let input = &acts[l];
            let (gw, gb) = &mut grads[l];
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let mut back = vec![0.0; layer.n_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                // tanh'(z) = 1 - tanh(z)^2
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= 1.0 - a * a;
                }
                delta = back;
            }
        }
    }

    let scale = 1.0 / indices.len() as f64;
    let mut flat = Vec::with_capacity(model.n_params());
    for (gw, gb) in grads {
        flat.extend(gw.into_iter().map(|g| g * scale));
        flat.extend(gb.into_iter().map(|g| g * scale));
    }
    Ok((loss * scale, flat))
}
