use serde::{Deserialize, Serialize};

use super::{Gradients, MlpModel};
use crate::error::{invalid, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    #[serde(alias = "rmsprop")]
    RmsProp,
    Sgd,
}

impl OptimizerKind {
    pub fn tag(self) -> u8 {
        match self {
            OptimizerKind::Adam => 0,
            OptimizerKind::RmsProp => 1,
            OptimizerKind::Sgd => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::RmsProp,
            2 => OptimizerKind::Sgd,
            _ => return None,
        })
    }

    fn moments(self) -> usize {
        match self {
            OptimizerKind::Adam => 2,
            OptimizerKind::RmsProp => 1,
            OptimizerKind::Sgd => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        let cfg = Self { kind, learning_rate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return invalid(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// Optimizer accumulators. `moments[k][t]` mirrors parameter tensor `t`,
/// tensors ordered per layer as weights then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub moments: Vec<Vec<Vec<f64>>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, model: &MlpModel) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<usize> = model
            .layers()
            .iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect();
        let moments = (0..config.kind.moments())
            .map(|_| shapes.iter().map(|&n| vec![0.0; n]).collect())
            .collect();
        Ok(Self {
            config,
            step: 0,
            moments,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub(crate) fn shapes_match(&self, model: &MlpModel) -> bool {
        let shapes: Vec<usize> = model
            .layers()
            .iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect();
        self.moments.len() == self.config.kind.moments()
            && self
                .moments
                .iter()
                .all(|m| m.len() == shapes.len() && m.iter().zip(&shapes).all(|(t, &n)| t.len() == n))
    }

    /// Apply one update. Non-finite gradients or parameters abort with
    /// [`Error::Divergence`] and leave the model untouched.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        let layers = model.layers();
        if grads.weights.len() != layers.len()
            || grads.biases.len() != layers.len()
            || layers.iter().zip(&grads.weights).any(|(l, g)| l.weights.len() != g.len())
            || layers.iter().zip(&grads.biases).any(|(l, g)| l.biases.len() != g.len())
        {
            return invalid("gradient shapes do not match the model");
        }
        if !self.shapes_match(model) {
            return invalid("optimizer state does not match the model");
        }
        if !grads.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: "non-finite gradient".into(),
            });
        }
        let mut next = model.clone();
        let t = self.step + 1;
        let lr = self.config.learning_rate;
        let kind = self.config.kind;
        let bc1 = 1.0 - ADAM_BETA1.powf(t as f64);
        let bc2 = 1.0 - ADAM_BETA2.powf(t as f64);
        let mut moments = self.moments.clone();
        for (li, layer) in next.layers_mut().iter_mut().enumerate() {
            let tensors = [
                (&mut layer.weights, &grads.weights[li], 2 * li),
                (&mut layer.biases, &grads.biases[li], 2 * li + 1),
            ];
            for (params, g, ti) in tensors {
                match kind {
                    OptimizerKind::Sgd => {
                        params.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                    }
                    OptimizerKind::RmsProp => {
                        let v = &mut moments[0][ti];
                        for ((p, &g), v) in params.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                            *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
                            *p -= lr * g / (v.sqrt() + RMSPROP_EPS);
                        }
                    }
                    OptimizerKind::Adam => {
                        let (head, tail) = moments.split_at_mut(1);
                        let (m, v) = (&mut head[0][ti], &mut tail[0][ti]);
                        for (((p, &g), m), v) in
                            params.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                        {
                            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
        if !next.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: "non-finite parameter after update".into(),
            });
        }
        self.moments = moments;
        self.step = t;
        *model = next;
        Ok(())
    }
}
