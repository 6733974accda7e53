#![allow(dead_code)]

use ncofdm_lpe::nn::{Activation, Dense, Loss, Matrix, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest |z| allowed at a ReLU input so a 1e-6 nudge never crosses the kink.
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor for relative gradient error.
pub const REL_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-6;

pub struct GradCase {
    pub model: MlpModel,
    pub x: Matrix,
    pub y: Matrix,
    pub loss: Loss,
}

/// Straight-line forward pass returning every pre-activation and the output.
pub fn naive_forward(model: &MlpModel, x: &Matrix) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let mut pre = Vec::new();
    let mut out = Vec::new();
    for r in 0..x.rows() {
        let mut a = x.row(r).to_vec();
        let mut zs = Vec::new();
        for l in model.layers() {
            let mut z = l.biases.clone();
            for (i, ai) in a.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += ai * l.weights[i * l.outputs + j];
                }
            }
            zs.push(z.clone());
            a = match l.activation {
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::Sigmoid => z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                Activation::Identity => z,
                Activation::Softmax => {
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
            };
        }
        pre.push(zs);
        out.push(a);
    }
    (pre, out)
}

pub fn naive_loss(model: &MlpModel, x: &Matrix, y: &Matrix, loss: Loss) -> f64 {
    let (_, out) = naive_forward(model, x);
    let b = out.len() as f64;
    out.iter()
        .enumerate()
        .map(|(r, p)| {
            let t = y.row(r);
            match loss {
                Loss::L2 => p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                Loss::Dist => {
                    p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
                }
                Loss::CrossEntropy => -p
                    .iter()
                    .zip(t)
                    .map(|(q, pt)| pt * q.max(1e-12).ln())
                    .sum::<f64>(),
            }
        })
        .sum::<f64>()
        / b
}

pub fn kinks_clear(model: &MlpModel, x: &Matrix) -> bool {
    let (pre, _) = naive_forward(model, x);
    pre.iter().all(|zs| {
        zs.iter()
            .zip(model.layers())
            .filter(|(_, l)| l.activation == Activation::Relu)
            .all(|(z, _)| z.iter().all(|v| v.abs() > KINK_MARGIN))
    })
}

/// Random network and batch for one (hidden activation, head, loss) combo.
pub fn random_case(
    seed: u64,
    dims: &[usize],
    hidden: Activation,
    output: Activation,
    loss: Loss,
    batch: usize,
) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<Dense> = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| Dense {
            inputs: w[0],
            outputs: w[1],
            weights: (0..w[0] * w[1]).map(|_| rng.random_range(-1.0..1.0)).collect(),
            biases: (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
            activation: if i + 2 == dims.len() { output } else { hidden },
        })
        .collect();
    let model = MlpModel::from_layers(layers).unwrap();
    let n_in = dims[0];
    let n_out = *dims.last().unwrap();
    let x = Matrix::from_vec(
        batch,
        n_in,
        (0..batch * n_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut yv = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        match loss {
            Loss::L2 => yv.extend((0..n_out).map(|_| rng.random_range(-1.0..1.0))),
            Loss::Dist => yv.extend((0..n_out).map(|_| f64::from(u8::from(rng.random::<bool>())))),
            Loss::CrossEntropy => {
                let raw: Vec<f64> = (0..n_out).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                yv.extend(raw.iter().map(|v| v / s));
            }
        }
    }
    let y = Matrix::from_vec(batch, n_out, yv).unwrap();
    GradCase { model, x, y, loss }
}

/// Worst per-coordinate relative error between backprop and central differences.
pub fn worst_grad_error(case: &GradCase) -> f64 {
    let (_, g) = case.model.loss_and_grad(&case.x, &case.y, case.loss).unwrap();
    let mut worst: f64 = 0.0;
    let n = case.model.layers().len();
    for li in 0..n {
        for which in 0..2 {
            let len = if which == 0 {
                case.model.layers()[li].weights.len()
            } else {
                case.model.layers()[li].biases.len()
            };
            for k in 0..len {
                let eval = |delta: f64| {
                    let mut m = case.model.clone();
                    let l = &mut m.layers_mut()[li];
                    if which == 0 {
                        l.weights[k] += delta;
                    } else {
                        l.biases[k] += delta;
                    }
                    naive_loss(&m, &case.x, &case.y, case.loss)
                };
                let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                let analytic = if which == 0 { g.weights[li][k] } else { g.biases[li][k] };
                let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    worst
}

/// Combos exercised by the heads in this crate plus the remaining pairings.
pub const GRAD_COMBOS: &[(Activation, Activation, Loss)] = &[
    (Activation::Relu, Activation::Relu, Loss::L2),
    (Activation::Relu, Activation::Identity, Loss::L2),
    (Activation::Relu, Activation::Sigmoid, Loss::Dist),
    (Activation::Relu, Activation::Softmax, Loss::CrossEntropy),
    (Activation::Sigmoid, Activation::Identity, Loss::L2),
    (Activation::Sigmoid, Activation::Sigmoid, Loss::L2),
    (Activation::Sigmoid, Activation::Sigmoid, Loss::CrossEntropy),
    (Activation::Identity, Activation::Softmax, Loss::L2),
    (Activation::Relu, Activation::Identity, Loss::Dist),
];

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
