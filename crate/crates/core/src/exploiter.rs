//! The adversary's networks: label encodings, training and inference.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alloc::LABEL_WIDTH;
use crate::caf::Example1Case;
use crate::dataset::Record;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    init, load_checkpoint, save_checkpoint, Activation, Loss, Matrix, MlpModel, ModelSpec,
    OptimizerConfig, OptimizerKind, OptimizerState,
};
use crate::rng::{derived_rng, rng_from_seed};
use crate::signal::Frame;

pub const FRAME_WIDTH: usize = 192;
pub const EXAMPLE1_WIDTH: usize = 768;
pub const LABEL_ENCODING_VERSION: u32 = 1;

/// Subcarrier widths the transmitter chooses from.
pub const DF_GRID_HZ: [f64; 4] = [15e3, 20e3, 25e3, 30e3];
pub const DF_SCALE_HZ: f64 = 30e3;
pub const Q_SCALE: f64 = 5.0;
pub const T_U_SCALE: f64 = 320e-6;

/// Elementwise `g(x) = 1` for `x > 0.5`, else 0.
pub fn threshold_pattern(raw: &[f64]) -> Result<Vec<u8>> {
    if let Some(v) = raw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return invalid(format!("pattern output {v} lies outside [0, 1]"));
    }
    Ok(raw.iter().map(|&v| u8::from(v > 0.5)).collect())
}

pub fn encode_df(delta_f: f64) -> f64 {
    delta_f / DF_SCALE_HZ
}

pub fn decode_df(y: f64) -> f64 {
    y * DF_SCALE_HZ
}

/// Nearest grid value.
pub fn snap_df(delta_f: f64) -> f64 {
    DF_GRID_HZ
        .iter()
        .copied()
        .min_by(|a, b| (a - delta_f).abs().total_cmp(&(b - delta_f).abs()))
        .expect("non-empty grid")
}

pub fn encode_example1(q: f64, t_u: f64) -> [f64; 2] {
    [q / Q_SCALE, t_u / T_U_SCALE]
}

pub fn decode_example1(y: [f64; 2]) -> (f64, f64) {
    (y[0] * Q_SCALE, y[1] * T_U_SCALE)
}

pub fn encode_case(case: Example1Case) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[usize::from(case.index()) - 1] = 1.0;
    p
}

/// Arg-max class.
pub fn decode_case(probs: &[f64]) -> Example1Case {
    let best = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    Example1Case::ALL[best.min(2)]
}

/// Which network is being trained or queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    DeltaF,
    Pattern,
    Example1Regressor,
    Example1Classifier,
}

impl Head {
    pub const ALL: [Head; 4] = [
        Head::DeltaF,
        Head::Pattern,
        Head::Example1Regressor,
        Head::Example1Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Head::DeltaF => "delta_f",
            Head::Pattern => "pattern",
            Head::Example1Regressor => "example1_regressor",
            Head::Example1Classifier => "example1_classifier",
        }
    }

    pub fn input_width(self) -> usize {
        match self {
            Head::DeltaF | Head::Pattern => FRAME_WIDTH,
            _ => EXAMPLE1_WIDTH,
        }
    }

    pub fn output_width(self) -> usize {
        match self {
            Head::DeltaF => 1,
            Head::Pattern => LABEL_WIDTH,
            Head::Example1Regressor => 2,
            Head::Example1Classifier => 3,
        }
    }

    pub fn default_hidden(self) -> Vec<usize> {
        match self {
            Head::DeltaF => vec![100, 50],
            Head::Pattern => vec![350, 600, 400, 200],
            _ => vec![500, 250, 50],
        }
    }

    fn output_activation(self) -> Activation {
        match self {
            Head::DeltaF => Activation::Relu,
            Head::Pattern => Activation::Sigmoid,
            Head::Example1Regressor => Activation::Identity,
            Head::Example1Classifier => Activation::Softmax,
        }
    }

    pub fn model_spec(self, hidden: &[usize]) -> Result<ModelSpec> {
        let mut dims = vec![self.input_width()];
        dims.extend_from_slice(hidden);
        dims.push(self.output_width());
        ModelSpec::relu_stack(&dims, self.output_activation())
    }

    pub fn loss(self) -> Loss {
        match self {
            Head::DeltaF | Head::Example1Regressor => Loss::L2,
            Head::Pattern => Loss::Dist,
            Head::Example1Classifier => Loss::CrossEntropy,
        }
    }

    pub fn default_optimizer(self) -> OptimizerConfig {
        let (kind, lr) = match self {
            Head::DeltaF => (OptimizerKind::Adam, 5e-4),
            Head::Pattern => (OptimizerKind::RmsProp, 1e-3),
            Head::Example1Regressor => (OptimizerKind::Adam, 1e-4),
            Head::Example1Classifier => (OptimizerKind::Sgd, 5e-4),
        };
        OptimizerConfig {
            kind,
            learning_rate: lr,
        }
    }

    /// Held-out metric reported during training.
    pub fn metric(self) -> Metric {
        match self {
            Head::DeltaF => Metric::DeltaFRelError,
            Head::Pattern => Metric::BitError,
            Head::Example1Regressor => Metric::MeanL2,
            Head::Example1Classifier => Metric::Accuracy,
        }
    }

    /// Encoded training target for one record.
    pub fn target(self, r: &Record) -> Result<Vec<f64>> {
        Ok(match self {
            Head::DeltaF => vec![encode_df(r.delta_f)],
            Head::Pattern => r.label_bits().into_iter().map(f64::from).collect(),
            Head::Example1Regressor => {
                let case = r
                    .example1_case()
                    .ok_or_else(|| Error::InvalidInput("record has no Example 1 case".into()))?;
                encode_example1(case.q() as f64, case.t_u()).to_vec()
            }
            Head::Example1Classifier => {
                let case = r
                    .example1_case()
                    .ok_or_else(|| Error::InvalidInput("record has no Example 1 case".into()))?;
                encode_case(case).to_vec()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean `|df_hat - df| / df` before snapping.
    DeltaFRelError,
    /// Fraction of thresholded pattern bits that disagree with the label.
    BitError,
    /// Mean Euclidean distance between normalized label and estimate.
    MeanL2,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::DeltaFRelError => "delta_f_rel_error",
            Metric::BitError => "bit_error",
            Metric::MeanL2 => "mean_l2",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }
}

/// Network inputs and encoded targets as dense matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub x: Matrix,
    pub y: Matrix,
}

impl TrainData {
    pub fn from_records<'a>(head: Head, records: impl IntoIterator<Item = &'a Record>) -> Result<Self> {
        let (mut xs, mut ys, mut n) = (Vec::new(), Vec::new(), 0);
        for r in records {
            if r.frame.width() != head.input_width() {
                return invalid(format!(
                    "{} head expects width {}, record has {}",
                    head.name(),
                    head.input_width(),
                    r.frame.width()
                ));
            }
            xs.extend_from_slice(r.frame.values());
            ys.extend(head.target(r)?);
            n += 1;
        }
        Ok(Self {
            x: Matrix::from_vec(n, head.input_width(), xs)?,
            y: Matrix::from_vec(n, head.output_width(), ys)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic 80/20 train/validation split.
pub fn split_validation<T>(items: &[T], val_fraction: f64, seed: u64) -> (Vec<&T>, Vec<&T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let mut rng = derived_rng(seed, "validation-split", 0);
    for i in (1..idx.len()).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let n_val = (items.len() as f64 * val_fraction).round() as usize;
    let (val, train) = idx.split_at(n_val.min(items.len()));
    (
        train.iter().map(|&i| &items[i]).collect(),
        val.iter().map(|&i| &items[i]).collect(),
    )
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub steps: u64,
    pub batch_size: usize,
    /// Validation metric cadence in steps; 0 evaluates only at the end.
    #[serde(default)]
    pub eval_every: u64,
    /// Cap on validation rows per evaluation; 0 uses all.
    #[serde(default)]
    pub eval_limit: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    pub train_loss: f64,
    /// NaN where no validation ran at this step.
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub optimizer: OptimizerState,
    pub trace: Vec<TracePoint>,
    pub final_metric: f64,
}

/// Metric of `model` on `data`.
pub fn evaluate(head: Head, model: &MlpModel, data: &TrainData) -> Result<f64> {
    if data.is_empty() {
        return invalid("cannot evaluate on an empty set");
    }
    let out = model.predict(&data.x, 512)?;
    let n = data.len() as f64;
    Ok(match head.metric() {
        Metric::DeltaFRelError => {
            (0..data.len())
                .map(|i| (decode_df(out.row(i)[0]) - decode_df(data.y.row(i)[0])).abs() / decode_df(data.y.row(i)[0]))
                .sum::<f64>()
                / n
        }
        Metric::BitError => {
            let mut wrong = 0usize;
            for i in 0..data.len() {
                let bits = threshold_pattern(out.row(i))?;
                wrong += bits
                    .iter()
                    .zip(data.y.row(i))
                    .filter(|(b, t)| f64::from(**b) != **t)
                    .count();
            }
            wrong as f64 / (n * head.output_width() as f64)
        }
        Metric::MeanL2 => {
            (0..data.len())
                .map(|i| {
                    out.row(i)
                        .iter()
                        .zip(data.y.row(i))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / n
        }
        Metric::Accuracy => {
            (0..data.len())
                .filter(|&i| decode_case(out.row(i)) == decode_case(data.y.row(i)))
                .count() as f64
                / n
        }
    })
}

fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = derived_rng(seed, "minibatch", step);
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

/// Run `model` forward to `schedule.steps` total updates, continuing from
/// `optimizer.step`. Mini-batches depend only on (seed, step), so a resumed
/// run retraces an uninterrupted one exactly.
pub fn train(
    head: Head,
    mut model: MlpModel,
    mut optimizer: OptimizerState,
    train: &TrainData,
    val: Option<&TrainData>,
    schedule: &Schedule,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train.is_empty() {
        return invalid("training set is empty");
    }
    if model.input_width() != head.input_width() || model.output_width() != head.output_width() {
        return invalid(format!("model shape does not fit the {} head", head.name()));
    }
    let val = match (val, schedule.eval_limit) {
        (Some(v), lim) if lim > 0 && v.len() > lim => {
            let idx: Vec<usize> = (0..lim).collect();
            Some(TrainData {
                x: v.x.select_rows(&idx),
                y: v.y.select_rows(&idx),
            })
        }
        (v, _) => v.cloned(),
    };
    let mut trace = Vec::new();
    while optimizer.step < schedule.steps {
        let step = optimizer.step;
        let idx = batch_indices(schedule.seed, step, train.len(), schedule.batch_size);
        let (bx, by) = (train.x.select_rows(&idx), train.y.select_rows(&idx));
        let loss = model.train_step(&mut optimizer, &bx, &by, head.loss())?;
        let done = optimizer.step;
        let evaluate_now = schedule.eval_every > 0 && done % schedule.eval_every == 0 || done == schedule.steps;
        let val_metric = match (&val, evaluate_now) {
            (Some(v), true) => evaluate(head, &model, v)?,
            _ => f64::NAN,
        };
        trace.push(TracePoint {
            step: done,
            train_loss: loss,
            val_metric,
        });
    }
    let final_metric = match &val {
        Some(v) => evaluate(head, &model, v)?,
        None => f64::NAN,
    };
    Ok(TrainOutcome {
        model,
        optimizer,
        trace,
        final_metric,
    })
}

/// Fresh model and optimizer for `head`.
pub fn fresh(head: Head, hidden: &[usize], optimizer: OptimizerConfig, seed: u64) -> Result<(MlpModel, OptimizerState)> {
    let model = init(&head.model_spec(hidden)?, seed);
    let state = OptimizerState::new(optimizer, &model)?;
    Ok((model, state))
}

/// Parameters recovered from one observed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    /// Decoded regression output before snapping, Hz.
    pub delta_f_raw: f64,
    /// Snapped to [`DF_GRID_HZ`].
    pub delta_f_hat: f64,
    pub alloc_hat: Vec<u8>,
}

impl ParamEstimate {
    pub fn active_indices(&self) -> Vec<usize> {
        self.alloc_hat
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == 1).then_some(i))
            .collect()
    }
}

/// The subcarrier-width regressor and the allocation-pattern estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploiterHeads {
    pub df_model: MlpModel,
    pub pattern_model: MlpModel,
}

impl ExploiterHeads {
    pub fn new(df_model: MlpModel, pattern_model: MlpModel) -> Result<Self> {
        for (m, head) in [(&df_model, Head::DeltaF), (&pattern_model, Head::Pattern)] {
            if m.input_width() != head.input_width() || m.output_width() != head.output_width() {
                return invalid(format!(
                    "{} head must map {} inputs to {} outputs",
                    head.name(),
                    head.input_width(),
                    head.output_width()
                ));
            }
        }
        Ok(Self { df_model, pattern_model })
    }

    pub fn init(seed: u64) -> Self {
        let df = init(&Head::DeltaF.model_spec(&Head::DeltaF.default_hidden()).expect("valid"), seed);
        let pat = init(
            &Head::Pattern.model_spec(&Head::Pattern.default_hidden()).expect("valid"),
            seed ^ 0x5A5A_5A5A,
        );
        Self {
            df_model: df,
            pattern_model: pat,
        }
    }

    pub fn infer_params(&self, frame: &Frame) -> Result<ParamEstimate> {
        let x = Matrix::from_vec(1, frame.width(), frame.values().to_vec())?;
        Ok(self.infer_batch(&x)?.pop().expect("one row"))
    }

    pub fn infer_batch(&self, frames: &Matrix) -> Result<Vec<ParamEstimate>> {
        if frames.cols() != FRAME_WIDTH {
            return invalid(format!("frames must have width {FRAME_WIDTH}, got {}", frames.cols()));
        }
        let df = self.df_model.predict(frames, 512)?;
        let pat = self.pattern_model.predict(frames, 512)?;
        (0..frames.rows())
            .map(|i| {
                let raw = decode_df(df.row(i)[0]);
                Ok(ParamEstimate {
                    delta_f_raw: raw,
                    delta_f_hat: snap_df(raw),
                    alloc_hat: threshold_pattern(pat.row(i))?,
                })
            })
            .collect()
    }
}

/// The two Example 1 networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Example1Heads {
    pub regressor: MlpModel,
    pub classifier: MlpModel,
}

impl Example1Heads {
    pub fn new(regressor: MlpModel, classifier: MlpModel) -> Result<Self> {
        if regressor.input_width() != EXAMPLE1_WIDTH
            || classifier.input_width() != EXAMPLE1_WIDTH
            || regressor.output_width() != 2
            || classifier.output_width() != 3
        {
            return invalid("Example 1 heads take 768 inputs and emit 2 and 3 outputs");
        }
        Ok(Self { regressor, classifier })
    }

    /// `(q_hat, t_u_hat, class)` for one frame.
    pub fn infer(&self, frame: &Frame) -> Result<(f64, f64, Example1Case)> {
        let x = Matrix::from_vec(1, frame.width(), frame.values().to_vec())?;
        let r = self.regressor.forward(&x)?;
        let c = self.classifier.forward(&x)?;
        let (q, t) = decode_example1([r.output().row(0)[0], r.output().row(0)[1]]);
        Ok((q, t, decode_case(c.output().row(0))))
    }
}

/// Sidecar stored next to every trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadMetadata {
    pub head: Head,
    pub label_encoding_version: u32,
    pub recipe_hash: String,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub steps: u64,
    pub metric: Metric,
    pub final_metric: Option<f64>,
}

/// Hex SHA-256 of a recipe's canonical bytes.
pub fn recipe_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Save the checkpoint (with optimizer state) and its sidecar.
pub fn save_head(path: &Path, model: &MlpModel, optimizer: Option<&OptimizerState>, meta: &HeadMetadata) -> Result<()> {
    save_checkpoint(path, model, optimizer)?;
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    crate::nn::atomic_write(&sidecar_path(path), &json)
}

/// Load a checkpoint and check its sidecar matches `head` and this label
/// encoding.
pub fn load_head(path: &Path, head: Head) -> Result<(MlpModel, Option<OptimizerState>, HeadMetadata)> {
    if !path.exists() {
        return Err(Error::Config(format!("missing checkpoint {}", path.display())));
    }
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::Config(format!("missing sidecar {}: {e}", side.display())))?;
    let meta: HeadMetadata =
        serde_json::from_slice(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
    if meta.head != head {
        return Err(Error::Config(format!(
            "{} holds a {} head, expected {}",
            path.display(),
            meta.head.name(),
            head.name()
        )));
    }
    if meta.label_encoding_version != LABEL_ENCODING_VERSION {
        return Err(Error::Version {
            what: "label encoding",
            found: meta.label_encoding_version,
            expected: LABEL_ENCODING_VERSION,
        });
    }
    let (model, opt) = load_checkpoint(path)?;
    if model.input_width() != head.input_width() || model.output_width() != head.output_width() {
        return Err(Error::Config(format!("{} does not fit the {} head", path.display(), head.name())));
    }
    Ok((model, opt, meta))
}

/// Seed for a model initialization derived from a recipe seed and head.
pub fn init_seed(seed: u64, head: Head) -> u64 {
    rng_from_seed(crate::rng::derive_seed(seed, head.name(), 0)).random()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::AllocSpec;
    use crate::dataset::{generate_records, Example1Sweep, Split, SweepSpec};

    #[test]
    fn threshold_boundary() {
        assert_eq!(threshold_pattern(&[0.2, 0.5, 0.51]).unwrap(), vec![0, 0, 1]);
        assert_eq!(threshold_pattern(&[0.0; 64]).unwrap(), vec![0; 64]);
        assert!(threshold_pattern(&[1.01]).is_err());
        assert!(threshold_pattern(&[-0.1]).is_err());
        let mut rng = rng_from_seed(1);
        let v: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let t = threshold_pattern(&v).unwrap();
        for (a, b) in v.iter().zip(&t) {
            assert_eq!(*b == 1, *a > 0.5);
        }
    }

    #[test]
    fn label_roundtrips() {
        for df in DF_GRID_HZ {
            assert_eq!(snap_df(decode_df(encode_df(df))), df);
            assert!((decode_df(encode_df(df)) - df).abs() < 1e-9);
        }
        assert_eq!(snap_df(17_400.0), 15e3);
        assert_eq!(snap_df(17_600.0), 20e3);
        for case in Example1Case::ALL {
            let (q, t) = decode_example1(encode_example1(case.q() as f64, case.t_u()));
            assert!((q - case.q() as f64).abs() < 1e-12 && (t - case.t_u()).abs() < 1e-18);
            assert_eq!(decode_case(&encode_case(case)), case);
            let y = encode_example1(case.q() as f64, case.t_u());
            assert!(y.iter().all(|v| *v > 0.0 && *v <= 1.0));
        }
    }

    #[test]
    fn head_shapes() {
        let h = ExploiterHeads::init(3);
        assert_eq!(h.df_model.spec().dims, vec![192, 100, 50, 1]);
        assert!(h.df_model.spec().activations.iter().all(|&a| a == Activation::Relu));
        assert_eq!(h.pattern_model.spec().dims, vec![192, 350, 600, 400, 200, 64]);
        assert_eq!(h.pattern_model.spec().activations[4], Activation::Sigmoid);
        assert!(ExploiterHeads::new(h.pattern_model.clone(), h.df_model.clone()).is_err());
        let spec = Head::Example1Classifier.model_spec(&[50]).unwrap();
        assert_eq!(spec.dims, vec![768, 50, 3]);
    }

    #[test]
    fn inference_is_deterministic_and_binary() {
        let spec = SweepSpec {
            train: 4,
            test: 0,
            ..SweepSpec::default()
        };
        let recs = generate_records(&spec, Split::Train, 1).unwrap();
        let heads = ExploiterHeads::init(9);
        for r in &recs {
            let a = heads.infer_params(&r.frame).unwrap();
            assert_eq!(a, heads.infer_params(&r.frame).unwrap());
            assert_eq!(a.alloc_hat.len(), 64);
            assert!(a.alloc_hat.iter().all(|&b| b <= 1));
            assert!(DF_GRID_HZ.contains(&a.delta_f_hat));
        }
    }

    #[test]
    fn single_example_is_memorized() {
        let spec = SweepSpec {
            train: 1,
            test: 0,
            families: vec![AllocSpec::struct1()],
            ..SweepSpec::default()
        };
        let recs = generate_records(&spec, Split::Train, 1).unwrap();
        let data = TrainData::from_records(Head::DeltaF, &recs).unwrap();
        let (m, s) = fresh(Head::DeltaF, &[100, 50], Head::DeltaF.default_optimizer(), 4).unwrap();
        let sched = Schedule {
            steps: 500,
            batch_size: 1,
            eval_every: 0,
            eval_limit: 0,
            seed: 1,
        };
        let out = train(Head::DeltaF, m, s, &data, None, &sched).unwrap();
        assert!(out.trace.last().unwrap().train_loss < 1e-4);
        assert_eq!(out.trace.len(), 500);
    }

    #[test]
    fn resume_retraces_the_run() {
        let spec = Example1Sweep {
            train: 64,
            test: 0,
            ..Example1Sweep::default()
        };
        let recs = generate_records(&spec, Split::Train, 1).unwrap();
        let data = TrainData::from_records(Head::Example1Classifier, &recs).unwrap();
        let opt = OptimizerConfig::new(OptimizerKind::Adam, 1e-3).unwrap();
        let (m, s) = fresh(Head::Example1Classifier, &[20], opt, 2).unwrap();
        let mut sched = Schedule {
            steps: 30,
            batch_size: 8,
            eval_every: 0,
            eval_limit: 0,
            seed: 5,
        };
        let full = train(Head::Example1Classifier, m.clone(), s.clone(), &data, None, &sched).unwrap();
        sched.steps = 12;
        let part = train(Head::Example1Classifier, m, s, &data, None, &sched).unwrap();
        sched.steps = 30;
        let rest = train(Head::Example1Classifier, part.model, part.optimizer, &data, None, &sched).unwrap();
        assert_eq!(rest.model, full.model);
        let stitched: Vec<u64> = part.trace.iter().chain(&rest.trace).map(|t| t.train_loss.to_bits()).collect();
        let whole: Vec<u64> = full.trace.iter().map(|t| t.train_loss.to_bits()).collect();
        assert_eq!(stitched, whole);
    }

    #[test]
    fn untrained_classifier_is_near_chance() {
        let spec = Example1Sweep {
            train: 0,
            test: 3000,
            ..Example1Sweep::default()
        };
        let recs = generate_records(&spec, Split::Test, 1).unwrap();
        let data = TrainData::from_records(Head::Example1Classifier, &recs).unwrap();
        let mut accs = Vec::new();
        for seed in 0..5 {
            let (m, _) = fresh(Head::Example1Classifier, &[50], Head::Example1Classifier.default_optimizer(), seed).unwrap();
            accs.push(evaluate(Head::Example1Classifier, &m, &data).unwrap());
        }
        // A random network can favour one class; averaged over inits it sits at chance.
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.1, "{accs:?}");
    }

    #[test]
    fn constant_label_regressor_converges() {
        let spec = Example1Sweep {
            train: 200,
            test: 0,
            ..Example1Sweep::default()
        };
        let mut recs = generate_records(&spec, Split::Train, 1).unwrap();
        for r in &mut recs {
            r.case_index = 2;
        }
        let data = TrainData::from_records(Head::Example1Regressor, &recs).unwrap();
        let (m, s) = fresh(Head::Example1Regressor, &[50], OptimizerConfig::new(OptimizerKind::Adam, 1e-3).unwrap(), 1).unwrap();
        let sched = Schedule {
            steps: 400,
            batch_size: 50,
            eval_every: 0,
            eval_limit: 0,
            seed: 2,
        };
        let out = train(Head::Example1Regressor, m, s, &data, Some(&data), &sched).unwrap();
        assert!(out.final_metric < 0.02, "{}", out.final_metric);
    }

    #[test]
    fn sidecar_roundtrip_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("df.ckpt");
        let (m, s) = fresh(Head::DeltaF, &[100, 50], Head::DeltaF.default_optimizer(), 1).unwrap();
        let meta = HeadMetadata {
            head: Head::DeltaF,
            label_encoding_version: LABEL_ENCODING_VERSION,
            recipe_hash: recipe_hash(b"recipe"),
            hidden: vec![100, 50],
            optimizer: Head::DeltaF.default_optimizer(),
            steps: 0,
            metric: Metric::DeltaFRelError,
            final_metric: None,
        };
        save_head(&path, &m, Some(&s), &meta).unwrap();
        let (m2, s2, meta2) = load_head(&path, Head::DeltaF).unwrap();
        assert_eq!((m2, s2.unwrap(), meta2), (m, s, meta));
        assert!(matches!(load_head(&path, Head::Pattern), Err(Error::Config(_))));
        assert!(matches!(load_head(&dir.path().join("nope"), Head::DeltaF), Err(Error::Config(_))));
        assert_eq!(recipe_hash(b"").len(), 64);
    }

    #[test]
    fn validation_split_is_80_20_and_disjoint() {
        let items: Vec<u32> = (0..1000).collect();
        let (tr, va) = split_validation(&items, DEFAULT_VAL_FRACTION, 7);
        assert_eq!((tr.len(), va.len()), (800, 200));
        let mut all: Vec<u32> = tr.iter().chain(&va).map(|&&v| v).collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split_validation(&items, 0.2, 7), (tr, va));
    }
}
