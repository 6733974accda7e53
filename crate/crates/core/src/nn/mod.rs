//! Dense feed-forward networks trained by backpropagation.

mod checkpoint;
mod matrix;
mod optim;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub(crate) use checkpoint::atomic_write;
pub use matrix::Matrix;
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};

/// Clip applied to predicted probabilities inside the cross-entropy.
pub const XENT_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Softmax => 2,
            Activation::Identity => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Softmax,
            3 => Activation::Identity,
            _ => return None,
        })
    }

    fn apply(self, z: &mut Matrix) {
        match self {
            Activation::Relu => z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => z.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Identity => {}
            Activation::Softmax => {
                for i in 0..z.rows() {
                    let row = z.row_mut(i);
                    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - top).exp();
                        sum += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
        }
    }

    /// Turn `grad` (dL/da) into dL/dz in place, given the activations `a`.
    fn backprop(self, a: &Matrix, grad: &mut Matrix) {
        match self {
            Activation::Relu => grad
                .as_mut_slice()
                .iter_mut()
                .zip(a.as_slice())
                .for_each(|(g, &v)| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }),
            Activation::Sigmoid => grad
                .as_mut_slice()
                .iter_mut()
                .zip(a.as_slice())
                .for_each(|(g, &v)| *g *= v * (1.0 - v)),
            Activation::Identity => {}
            Activation::Softmax => {
                for i in 0..a.rows() {
                    let ar = a.row(i);
                    let gr = grad.row_mut(i);
                    let dot: f64 = ar.iter().zip(gr.iter()).map(|(x, y)| x * y).sum();
                    gr.iter_mut().zip(ar).for_each(|(g, &x)| *g = x * (*g - dot));
                }
            }
        }
    }
}

/// Logistic function, kept strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared Euclidean distance per item, averaged over the batch.
    L2,
    /// Mean squared difference over the outputs, averaged over the batch.
    Dist,
    /// `-sum p log p_hat` per item, averaged over the batch.
    CrossEntropy,
}

/// Squared Euclidean distance.
pub fn loss_l2(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// Mean squared difference between a soft pattern and a binary pattern.
pub fn loss_dist(pred: &[f64], target: &[f64]) -> f64 {
    loss_l2(pred, target) / pred.len().max(1) as f64
}

/// Cross-entropy of `pred` against `target` with log clipping.
pub fn loss_xent(pred: &[f64], target: &[f64]) -> f64 {
    -pred
        .iter()
        .zip(target)
        .map(|(&q, &p)| if p == 0.0 { 0.0 } else { p * q.max(XENT_CLIP).ln() })
        .sum::<f64>()
}

impl Loss {
    pub fn item(self, pred: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::L2 => loss_l2(pred, target),
            Loss::Dist => loss_dist(pred, target),
            Loss::CrossEntropy => loss_xent(pred, target),
        }
    }

    pub fn batch(self, pred: &Matrix, target: &Matrix) -> f64 {
        let b = pred.rows();
        (0..b).map(|i| self.item(pred.row(i), target.row(i))).sum::<f64>() / b.max(1) as f64
    }

    /// dL/d(output) of the batch-averaged loss.
    fn grad(self, pred: &Matrix, target: &Matrix) -> Matrix {
        let scale = 1.0 / pred.rows().max(1) as f64;
        let mut g = Matrix::zeros(pred.rows(), pred.cols());
        let width = pred.cols().max(1) as f64;
        for ((gv, &p), &t) in g
            .as_mut_slice()
            .iter_mut()
            .zip(pred.as_slice())
            .zip(target.as_slice())
        {
            *gv = match self {
                Loss::L2 => 2.0 * (p - t) * scale,
                Loss::Dist => 2.0 * (p - t) * scale / width,
                Loss::CrossEntropy => {
                    if p > XENT_CLIP {
                        -t / p * scale
                    } else {
                        0.0
                    }
                }
            };
        }
        g
    }
}

/// One fully connected layer: `a = act(x W + b)` with `W` stored
/// `inputs x outputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

/// Architecture: layer widths (input first) and one activation per layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl ModelSpec {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return invalid(format!(
                "{} layer widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            ));
        }
        if dims.contains(&0) {
            return invalid("layer widths must be positive");
        }
        Ok(Self { dims, activations })
    }

    /// Hidden ReLU layers with the given output activation.
    pub fn relu_stack(dims: &[usize], output: Activation) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let mut acts = vec![Activation::Relu; n];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::new(dims.to_vec(), acts)
    }
}

/// Per-layer activations of a forward pass, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds the input at least")
    }
}

/// Gradients laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Fan-in scaled Gaussian initialization: variance `2 / fan_in` ahead of a
/// ReLU, `1 / fan_in` otherwise; zero biases.
pub fn init(spec: &ModelSpec, seed: u64) -> MlpModel {
    let mut rng = rng_from_seed(seed);
    let layers = spec
        .dims
        .windows(2)
        .zip(&spec.activations)
        .map(|(w, &act)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let var = if act == Activation::Relu { 2.0 } else { 1.0 } / fan_in as f64;
            let dist = Normal::new(0.0, var.sqrt()).expect("positive variance");
            Dense {
                inputs: fan_in,
                outputs: fan_out,
                weights: (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect(),
                biases: vec![0.0; fan_out],
                activation: act,
            }
        })
        .collect();
    MlpModel { layers }
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("model needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return invalid(format!("layer {i} parameter shapes do not match its widths"));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return invalid(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    w[0].outputs,
                    i + 1,
                    w[1].inputs
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn spec(&self) -> ModelSpec {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        ModelSpec {
            dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.input_width() {
            return invalid(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_width()
            ));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for l in &self.layers {
            let x = acts.last().expect("non-empty");
            let rows = x.rows();
            let mut z = Matrix::zeros(rows, l.outputs);
            for i in 0..rows {
                z.row_mut(i).copy_from_slice(&l.biases);
            }
            matrix::gemm(
                rows,
                l.inputs,
                l.outputs,
                x.as_slice(),
                false,
                &l.weights,
                false,
                1.0,
                z.as_mut_slice(),
            );
            l.activation.apply(&mut z);
            acts.push(z);
        }
        Ok(ForwardCache { activations: acts })
    }

    /// Forward pass keeping only the output, in chunks of `chunk` rows.
    pub fn predict(&self, batch: &Matrix, chunk: usize) -> Result<Matrix> {
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(batch.rows() * self.output_width());
        let mut start = 0;
        while start < batch.rows() {
            let end = (start + chunk).min(batch.rows());
            let idx: Vec<usize> = (start..end).collect();
            let part = self.forward(&batch.select_rows(&idx))?;
            out.extend_from_slice(part.output().as_slice());
            start = end;
        }
        Matrix::from_vec(batch.rows(), self.output_width(), out)
    }

    /// Exact gradients of the batch-averaged `loss` from a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, targets: &Matrix, loss: Loss) -> Result<Gradients> {
        let out = cache.output();
        if cache.activations.len() != self.layers.len() + 1 {
            return invalid("forward cache does not belong to this model");
        }
        if targets.rows() != out.rows() || targets.cols() != out.cols() {
            return invalid(format!(
                "targets are {}x{}, outputs are {}x{}",
                targets.rows(),
                targets.cols(),
                out.rows(),
                out.cols()
            ));
        }
        let last = self.layers.last().expect("non-empty");
        let mut delta = if last.activation == Activation::Softmax && loss == Loss::CrossEntropy {
            // Fused softmax + cross-entropy: (p_hat - p) / B.
            let scale = 1.0 / out.rows().max(1) as f64;
            let mut d = out.clone();
            d.as_mut_slice()
                .iter_mut()
                .zip(targets.as_slice())
                .for_each(|(v, t)| *v = (*v - t) * scale);
            d
        } else {
            let mut g = loss.grad(out, targets);
            last.activation.backprop(out, &mut g);
            g
        };

        let n = self.layers.len();
        let mut gw = vec![Vec::new(); n];
        let mut gb = vec![Vec::new(); n];
        for li in (0..n).rev() {
            let l = &self.layers[li];
            let x = &cache.activations[li];
            let rows = x.rows();
            let mut w = vec![0.0; l.inputs * l.outputs];
            matrix::gemm(
                l.inputs,
                rows,
                l.outputs,
                x.as_slice(),
                true,
                delta.as_slice(),
                false,
                0.0,
                &mut w,
            );
            let mut b = vec![0.0; l.outputs];
            for i in 0..rows {
                b.iter_mut().zip(delta.row(i)).for_each(|(acc, d)| *acc += d);
            }
            gw[li] = w;
            gb[li] = b;
            if li > 0 {
                let mut prev = Matrix::zeros(rows, l.inputs);
                matrix::gemm(
                    rows,
                    l.outputs,
                    l.inputs,
                    delta.as_slice(),
                    false,
                    &l.weights,
                    true,
                    0.0,
                    prev.as_mut_slice(),
                );
                self.layers[li - 1]
                    .activation
                    .backprop(&cache.activations[li], &mut prev);
                delta = prev;
            }
        }
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }

    /// Batch loss and gradients in one call.
    pub fn loss_and_grad(&self, x: &Matrix, y: &Matrix, loss: Loss) -> Result<(f64, Gradients)> {
        let cache = self.forward(x)?;
        let value = loss.batch(cache.output(), y);
        let grads = self.backward(&cache, y, loss)?;
        Ok((value, grads))
    }

    /// Forward, backward and one optimizer update; returns the pre-update loss.
    pub fn train_step(
        &mut self,
        state: &mut OptimizerState,
        x: &Matrix,
        y: &Matrix,
        loss: Loss,
    ) -> Result<f64> {
        let (value, grads) = self.loss_and_grad(x, y, loss)?;
        if !value.is_finite() {
            return Err(Error::Divergence {
                step: state.steps(),
                detail: format!("loss became {value}"),
            });
        }
        state.step(self, &grads)?;
        Ok(value)
    }
}
