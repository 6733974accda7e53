//! Config-driven experiment runs: datasets, head training, CAF tables and
//! attack suites, all rooted under one output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{default_ebn0_grid, run_scenario_threaded, BerCurve, BerMethod, Estimator, ScenarioSpec};
use crate::caf::{
    caf_resolve_example1, estimate_caf, example1_signal, Example1Case, Example1Config, Verdict,
};
use crate::dataset::{generate, load, Example1Sweep, GeneratedFiles, Record, SweepSpec};
use crate::error::{Error, Result};
use crate::exploiter::{
    evaluate, fresh, init_seed, load_head, recipe_hash, save_head, split_validation, train, ExploiterHeads, Head,
    HeadMetadata, Schedule, TracePoint, TrainData, DEFAULT_VAL_FRACTION, LABEL_ENCODING_VERSION,
};
use crate::nn::{atomic_write, OptimizerConfig};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Sweep(SweepSpec),
    Example1(Example1Sweep),
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Sweep(s) => s.validate(),
            DatasetConfig::Example1(s) => s.validate(),
        }
    }

    fn width(&self) -> usize {
        match self {
            DatasetConfig::Sweep(s) => s.width,
            DatasetConfig::Example1(s) => s.width,
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            DatasetConfig::Sweep(s) => s.seed = seed,
            DatasetConfig::Example1(s) => s.seed = seed,
        }
        out
    }

    fn seed(&self) -> u64 {
        match self {
            DatasetConfig::Sweep(s) => s.seed,
            DatasetConfig::Example1(s) => s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub head: Head,
    /// Name of the dataset in `[datasets]` to train on.
    pub dataset: String,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default)]
    pub eval_limit: usize,
    /// Save a resumable checkpoint every this many steps; 0 only at the end.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_val_fraction() -> f64 {
    DEFAULT_VAL_FRACTION
}

impl HeadConfig {
    pub fn hidden(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| self.head.default_hidden())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or_else(|| self.head.default_optimizer())
    }
}

/// A pair of trained heads used together as one exploiter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploiterConfig {
    pub delta_f: String,
    pub pattern: String,
}

pub const ORACLE: &str = "oracle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// `"oracle"` or a name from `[exploiters]`.
    pub exploiter: String,
    /// CSV stem; scenarios sharing a stem are written to one file.
    #[serde(default)]
    pub file: Option<String>,
    pub frames: SweepSpec,
    #[serde(default = "default_ebn0_grid")]
    pub ebn0_db: Vec<f64>,
    #[serde(default = "default_min_bits")]
    pub min_bits: usize,
    #[serde(default = "default_max_bits")]
    pub max_bits: usize,
    #[serde(default)]
    pub method: BerMethod,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_bits() -> usize {
    crate::attack::MIN_BITS_PER_POINT
}

fn default_max_bits() -> usize {
    4 * crate::attack::MIN_BITS_PER_POINT
}

impl ScenarioConfig {
    pub fn file_stem(&self) -> &str {
        self.file.as_deref().unwrap_or(&self.name)
    }

    fn spec(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            name: self.name.clone(),
            frames: self.frames.clone(),
            ebn0_db: self.ebn0_db.clone(),
            min_bits: self.min_bits,
            max_bits: self.max_bits,
            method: self.method,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CafConfig {
    #[serde(default = "all_cases")]
    pub cases: Vec<Example1Case>,
    #[serde(default)]
    pub alpha: f64,
    /// Noise realizations per case.
    #[serde(default = "default_caf_trials")]
    pub trials: u64,
    #[serde(default)]
    pub example1: Example1Config,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CafConfig {
    fn default() -> Self {
        Self {
            cases: all_cases(),
            alpha: 0.0,
            trials: default_caf_trials(),
            example1: Example1Config::default(),
            seed: 0,
        }
    }
}

fn all_cases() -> Vec<Example1Case> {
    Example1Case::ALL.to_vec()
}

fn default_caf_trials() -> u64 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    #[serde(default)]
    pub heads: BTreeMap<String, HeadConfig>,
    #[serde(default)]
    pub exploiters: BTreeMap<String, ExploiterConfig>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub caf: Option<CafConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl ExperimentConfig {
    /// Strict parse; unknown keys and type errors report their line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the resolved config text, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        recipe_hash(c.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, d) in &self.datasets {
            d.validate().map_err(|e| Error::Config(format!("dataset {name}: {e}")))?;
        }
        for (name, h) in &self.heads {
            let Some(d) = self.datasets.get(&h.dataset) else {
                return bad(format!("head {name} names unknown dataset {}", h.dataset));
            };
            if d.width() != h.head.input_width() {
                return bad(format!(
                    "head {name} takes width {} but dataset {} has width {}",
                    h.head.input_width(),
                    h.dataset,
                    d.width()
                ));
            }
            let example1 = matches!(h.head, Head::Example1Classifier | Head::Example1Regressor);
            if example1 != matches!(d, DatasetConfig::Example1(_)) {
                return bad(format!("head {name} does not fit the kind of dataset {}", h.dataset));
            }
            if !(0.0..1.0).contains(&h.val_fraction) {
                return bad(format!("head {name}: val_fraction must lie in [0, 1)"));
            }
            if h.batch_size == 0 || h.steps == 0 {
                return bad(format!("head {name}: steps and batch_size must be positive"));
            }
            h.optimizer().validate()?;
            h.head.model_spec(&h.hidden())?;
        }
        for (name, e) in &self.exploiters {
            for (want, head) in [(Head::DeltaF, &e.delta_f), (Head::Pattern, &e.pattern)] {
                match self.heads.get(head) {
                    Some(h) if h.head == want => {}
                    Some(_) => return bad(format!("exploiter {name}: head {head} is not a {} head", want.name())),
                    None => return bad(format!("exploiter {name} names unknown head {head}")),
                }
            }
        }
        let mut seen = BTreeMap::new();
        for s in &self.scenarios {
            if seen.insert(s.name.clone(), ()).is_some() {
                return bad(format!("duplicate scenario {}", s.name));
            }
            if s.exploiter != ORACLE && !self.exploiters.contains_key(&s.exploiter) {
                return bad(format!("scenario {} names unknown exploiter {}", s.name, s.exploiter));
            }
            s.spec(0).validate().map_err(|e| Error::Config(format!("scenario {}: {e}", s.name)))?;
        }
        if let Some(c) = &self.caf {
            if c.cases.is_empty() || c.trials == 0 {
                return bad("caf needs at least one case and one trial".into());
            }
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("datasets")
    }

    pub fn dataset_paths(&self, name: &str) -> (PathBuf, PathBuf) {
        let d = self.dataset_dir();
        (d.join(format!("{name}-train.ncds")), d.join(format!("{name}-test.ncds")))
    }

    pub fn checkpoint_path(&self, head: &str) -> PathBuf {
        self.out.join("heads").join(format!("{head}.nclp"))
    }

    pub fn trace_path(&self, head: &str) -> PathBuf {
        self.out.join("heads").join(format!("{head}-trace.csv"))
    }

    pub fn curve_dir(&self) -> PathBuf {
        self.out.join("curves")
    }

    pub fn caf_dir(&self) -> PathBuf {
        self.out.join("caf")
    }

    /// Seed of dataset `name` after mixing in the global seed.
    pub fn dataset_seed(&self, name: &str) -> u64 {
        let local = self.datasets.get(name).map_or(0, DatasetConfig::seed);
        derive_seed(self.seed, &format!("dataset/{name}"), local)
    }

    pub fn head_seed(&self, name: &str) -> u64 {
        let local = self.heads.get(name).map_or(0, |h| h.seed);
        derive_seed(self.seed, &format!("head/{name}"), local)
    }

    pub fn scenario_seed(&self, s: &ScenarioConfig) -> u64 {
        derive_seed(self.seed, &format!("scenario/{}", s.name), s.seed)
    }

    /// Write the resolved config next to the outputs.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join("resolved-config.toml");
        atomic_write(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }

    fn head(&self, name: &str) -> Result<&HeadConfig> {
        self.heads
            .get(name)
            .ok_or_else(|| Error::Config(format!("no head named {name}")))
    }
}

pub fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn resolve_threads(threads: usize) -> usize {
    if threads == 0 {
        available_threads()
    } else {
        threads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub name: String,
    pub files: GeneratedFiles,
    /// Both files existed beforehand with identical bytes.
    pub reproduced: bool,
}

/// Generate every dataset (or only `only`).
pub fn run_generate(cfg: &ExperimentConfig, only: Option<&str>, threads: usize) -> Result<Vec<GenerateReport>> {
    let threads = resolve_threads(threads);
    if let Some(n) = only {
        if !cfg.datasets.contains_key(n) {
            return Err(Error::Config(format!("no dataset named {n}")));
        }
    }
    let mut out = Vec::new();
    for (name, d) in &cfg.datasets {
        if only.is_some_and(|n| n != name) {
            continue;
        }
        let (tr, te) = cfg.dataset_paths(name);
        let before: Option<(String, String)> = match (sha256_file(&tr), sha256_file(&te)) {
            (Ok(a), Ok(b)) => Some((a, b)),
            _ => None,
        };
        let seeded = d.with_seed(cfg.dataset_seed(name));
        let files = match &seeded {
            DatasetConfig::Sweep(s) => generate(s, &cfg.dataset_dir(), name, threads)?,
            DatasetConfig::Example1(s) => generate(s, &cfg.dataset_dir(), name, threads)?,
        };
        let after = (sha256_file(&files.train)?, sha256_file(&files.test)?);
        out.push(GenerateReport {
            name: name.clone(),
            files,
            reproduced: before.as_ref() == Some(&after),
        });
    }
    Ok(out)
}

fn load_split(path: &Path) -> Result<Vec<Record>> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "dataset {} not found; run generate first",
            path.display()
        )));
    }
    Ok(load(path)?.1)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub name: String,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub steps: u64,
    /// Head metric on the held-out test split.
    pub test_metric: f64,
    pub val_metric: f64,
}

fn trace_header(head: Head) -> String {
    format!("step,train_loss,val_{}\n", head.metric().name())
}

/// Validation is reported only at `eval_every` multiples and the final
/// step, so the trace does not depend on where a run was checkpointed.
fn is_eval_step(h: &HeadConfig, step: u64) -> bool {
    (h.eval_every > 0 && step % h.eval_every == 0) || step == h.steps
}

fn trace_rows(h: &HeadConfig, points: &[TracePoint]) -> String {
    let mut s = String::new();
    for p in points {
        if p.val_metric.is_nan() || !is_eval_step(h, p.step) {
            writeln!(s, "{},{:e},", p.step, p.train_loss).expect("string write");
        } else {
            writeln!(s, "{},{:e},{:e}", p.step, p.train_loss, p.val_metric).expect("string write");
        }
    }
    s
}

/// Rows of an existing trace up to and including `step`.
fn trace_prefix(h: &HeadConfig, path: &Path, step: u64) -> Result<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(String::new());
    };
    let mut s = String::new();
    for line in text.lines().skip(1) {
        let mut fields = line.splitn(3, ',');
        let (Some(k), Some(loss)) = (fields.next(), fields.next()) else {
            return Err(Error::Config(format!("{}: malformed trace line {line:?}", path.display())));
        };
        let k: u64 = k
            .parse()
            .map_err(|_| Error::Config(format!("{}: malformed trace line {line:?}", path.display())))?;
        if k > step {
            break;
        }
        if is_eval_step(h, k) {
            s.push_str(line);
        } else {
            write!(s, "{k},{loss},").expect("string write");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Hash of everything that shapes the trajectory except its length, so a
/// run may be resumed with a larger step budget.
fn head_recipe(cfg: &ExperimentConfig, name: &str) -> Result<String> {
    let h = cfg.head(name)?;
    #[derive(Serialize)]
    struct Recipe {
        head: Head,
        hidden: Vec<usize>,
        optimizer: OptimizerConfig,
        batch_size: usize,
        val_fraction: f64,
        seed: u64,
        dataset: DatasetConfig,
    }
    let text = toml::to_string(&Recipe {
        head: h.head,
        hidden: h.hidden(),
        optimizer: h.optimizer(),
        batch_size: h.batch_size,
        val_fraction: h.val_fraction,
        seed: cfg.head_seed(name),
        dataset: cfg.datasets[&h.dataset].with_seed(cfg.dataset_seed(&h.dataset)),
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    Ok(recipe_hash(text.as_bytes()))
}

/// Train head `name` to its configured step count, optionally continuing
/// from a checkpoint. Checkpoints and the trace are replaced atomically.
pub fn run_train(cfg: &ExperimentConfig, name: &str, resume: Option<&Path>) -> Result<TrainReport> {
    let h = cfg.head(name)?;
    let (tr, te) = cfg.dataset_paths(&h.dataset);
    let train_records = load_split(&tr)?;
    let test_records = load_split(&te)?;
    let seed = cfg.head_seed(name);
    let (fit, val) = split_validation(&train_records, h.val_fraction, seed);
    let fit = TrainData::from_records(h.head, fit)?;
    let val = if val.is_empty() {
        None
    } else {
        Some(TrainData::from_records(h.head, val)?)
    };
    let test = TrainData::from_records(h.head, &test_records)?;
    let recipe = head_recipe(cfg, name)?;
    let (mut model, mut optimizer) = match resume {
        Some(path) => {
            let (model, opt, meta) = load_head(path, h.head)?;
            if meta.recipe_hash != recipe {
                return Err(Error::Config(format!(
                    "{} was trained from a different recipe",
                    path.display()
                )));
            }
            let opt = opt.ok_or_else(|| {
                Error::Config(format!("{} holds no optimizer state to resume from", path.display()))
            })?;
            (model, opt)
        }
        None => fresh(h.head, &h.hidden(), h.optimizer(), init_seed(seed, h.head))?,
    };
    let ckpt = cfg.checkpoint_path(name);
    let trace_path = cfg.trace_path(name);
    fs::create_dir_all(ckpt.parent().expect("checkpoint has a parent"))?;
    let mut trace = trace_header(h.head);
    if resume.is_some() {
        trace.push_str(&trace_prefix(h, &trace_path, optimizer.step)?);
    }
    let mut meta = HeadMetadata {
        head: h.head,
        label_encoding_version: LABEL_ENCODING_VERSION,
        recipe_hash: recipe,
        hidden: model.spec().dims[1..model.spec().dims.len() - 1].to_vec(),
        optimizer: optimizer.config,
        steps: optimizer.step,
        metric: h.head.metric(),
        final_metric: None,
    };
    let mut val_metric;
    loop {
        let target = if h.checkpoint_every > 0 {
            (optimizer.step / h.checkpoint_every + 1) * h.checkpoint_every
        } else {
            h.steps
        }
        .min(h.steps);
        let schedule = Schedule {
            steps: target,
            batch_size: h.batch_size,
            eval_every: h.eval_every,
            eval_limit: h.eval_limit,
            seed,
        };
        let outcome = train(h.head, model, optimizer, &fit, val.as_ref(), &schedule)?;
        model = outcome.model;
        optimizer = outcome.optimizer;
        val_metric = outcome.final_metric;
        trace.push_str(&trace_rows(h, &outcome.trace));
        meta.steps = optimizer.step;
        let done = optimizer.step >= h.steps;
        if done {
            meta.final_metric = Some(evaluate(h.head, &model, &test)?);
        }
        save_head(&ckpt, &model, Some(&optimizer), &meta)?;
        atomic_write(&trace_path, trace.as_bytes())?;
        if done {
            break;
        }
    }
    Ok(TrainReport {
        name: name.to_string(),
        checkpoint: ckpt,
        trace: trace_path,
        steps: optimizer.step,
        test_metric: meta.final_metric.unwrap_or(f64::NAN),
        val_metric,
    })
}

/// Load the trained heads of exploiter `name`.
pub fn load_exploiter(cfg: &ExperimentConfig, name: &str) -> Result<(ExploiterHeads, Vec<PathBuf>)> {
    let e = cfg
        .exploiters
        .get(name)
        .ok_or_else(|| Error::Config(format!("no exploiter named {name}")))?;
    let df = cfg.checkpoint_path(&e.delta_f);
    let pat = cfg.checkpoint_path(&e.pattern);
    let (df_model, _, _) = load_head(&df, Head::DeltaF)?;
    let (pat_model, _, _) = load_head(&pat, Head::Pattern)?;
    Ok((ExploiterHeads::new(df_model, pat_model)?, vec![df, pat]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScenario {
    pub name: String,
    pub file: String,
    pub exploiter: String,
    pub seed: u64,
    /// Checkpoint path to hex SHA-256.
    pub checkpoints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub scenarios: Vec<ManifestScenario>,
    /// CSV file name to hex SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub curves: Vec<BerCurve>,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Run every scenario (or only `only`) and write one CSV per file stem plus
/// `manifest.json`.
pub fn run_attack_eval(cfg: &ExperimentConfig, only: Option<&str>, threads: usize) -> Result<AttackReport> {
    let threads = resolve_threads(threads);
    let chosen: Vec<&ScenarioConfig> = cfg
        .scenarios
        .iter()
        .filter(|s| only.is_none_or(|n| n == s.name))
        .collect();
    if chosen.is_empty() {
        return Err(Error::Config(match only {
            Some(n) => format!("no scenario named {n}"),
            None => "config defines no scenarios".into(),
        }));
    }
    let mut loaded: BTreeMap<String, (ExploiterHeads, Vec<PathBuf>)> = BTreeMap::new();
    for s in &chosen {
        if s.exploiter != ORACLE && !loaded.contains_key(&s.exploiter) {
            loaded.insert(s.exploiter.clone(), load_exploiter(cfg, &s.exploiter)?);
        }
    }
    let mut curves = Vec::new();
    let mut grouped: BTreeMap<String, Vec<BerCurve>> = BTreeMap::new();
    let mut scenarios = Vec::new();
    for s in &chosen {
        let seed = cfg.scenario_seed(s);
        let (estimator, ckpts) = match loaded.get(&s.exploiter) {
            Some((h, paths)) => (Estimator::Heads(h), paths.clone()),
            None => (Estimator::Oracle, Vec::new()),
        };
        let curve = run_scenario_threaded(&s.spec(seed), estimator, threads)?;
        grouped.entry(s.file_stem().to_string()).or_default().push(curve.clone());
        curves.push(curve);
        let mut checkpoints = BTreeMap::new();
        for p in ckpts {
            let key = p.strip_prefix(&cfg.out).unwrap_or(&p).display().to_string();
            checkpoints.insert(key, sha256_file(&p)?);
        }
        scenarios.push(ManifestScenario {
            name: s.name.clone(),
            file: format!("{}.csv", s.file_stem()),
            exploiter: s.exploiter.clone(),
            seed,
            checkpoints,
        });
    }
    let dir = cfg.curve_dir();
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut hashes = BTreeMap::new();
    for (stem, group) in &grouped {
        let path = dir.join(format!("{stem}.csv"));
        let text = BerCurve::csv_many(group);
        atomic_write(&path, text.as_bytes())?;
        hashes.insert(format!("{stem}.csv"), hex::encode(Sha256::digest(text.as_bytes())));
        files.push(path);
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        scenarios,
        files: hashes,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    atomic_write(&manifest_path, &json)?;
    Ok(AttackReport {
        curves,
        files,
        manifest: manifest_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CafCaseReport {
    pub case: Example1Case,
    pub table: PathBuf,
    /// Peak lags of each trial.
    pub peaks: Vec<Vec<usize>>,
    pub verdicts: Vec<Verdict>,
}

/// CAF tables (lag seconds, |R|) of the first trial per case, and the peak
/// lags and ambiguity verdict of every trial.
pub fn run_caf(cfg: &ExperimentConfig) -> Result<Vec<CafCaseReport>> {
    let c = cfg
        .caf
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [caf] section".into()))?;
    let e1 = &c.example1;
    let dir = cfg.caf_dir();
    fs::create_dir_all(&dir)?;
    let seed = derive_seed(cfg.seed, "caf", c.seed);
    let mut reports = Vec::new();
    let mut summary = String::from("case,trial,peak_lags,verdict\n");
    for &case in &c.cases {
        let mut peaks = Vec::new();
        let mut verdicts = Vec::new();
        let table = dir.join(format!("case{}.csv", case.index()));
        for trial in 0..c.trials {
            let mut rng = derived_rng(seed, &format!("case{}", case.index()), trial);
            let x = example1_signal(case, e1.m, e1.snr_db, &mut rng)?;
            if trial == 0 {
                let slice = estimate_caf(&x, c.alpha, &e1.lags(), e1.ts())?;
                let mut s = String::from("lag_s,magnitude\n");
                for (t, m) in slice.table() {
                    writeln!(s, "{t:e},{m:e}").expect("string write");
                }
                atomic_write(&table, s.as_bytes())?;
            }
            let report = caf_resolve_example1(&x, e1)?;
            let lags: Vec<String> = report.observed.iter().map(usize::to_string).collect();
            let verdict = match report.verdict {
                Verdict::Ambiguous => "ambiguous".to_string(),
                Verdict::Distinguishable => "distinguishable".to_string(),
                Verdict::Resolved(k) => format!("resolved:{}", k.index()),
            };
            writeln!(summary, "{},{trial},{},{verdict}", case.index(), lags.join(" ")).expect("string write");
            peaks.push(report.observed);
            verdicts.push(report.verdict);
        }
        reports.push(CafCaseReport {
            case,
            table,
            peaks,
            verdicts,
        });
    }
    atomic_write(&dir.join("peaks.csv"), summary.as_bytes())?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
seed = 7
out = "unused"

[datasets.tiny]
kind = "sweep"
families = [{ family = "ofdm" }]
snr_db = [10.0]
train = 40
test = 10

[heads.df]
head = "delta_f"
dataset = "tiny"
hidden = [8]
steps = 6
batch_size = 4
checkpoint_every = 4

[heads.pat]
head = "pattern"
dataset = "tiny"
hidden = [8]
steps = 3
batch_size = 4

[exploiters.small]
delta_f = "df"
pattern = "pat"

[[scenarios]]
name = "attack"
exploiter = "small"
min_bits = 2000
max_bits = 2000
ebn0_db = [0.0, 10.0]
frames = { families = [{ family = "ofdm" }], snr_db = [10.0] }
"#;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::from_toml_str(SMALL).unwrap();
        c.out = dir.to_path_buf();
        c
    }

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml_str(SMALL).unwrap();
        assert_eq!(c.heads["df"].head, Head::DeltaF);
        let again = ExperimentConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = SMALL.replace("batch_size = 4\ncheckpoint_every", "batch_sise = 4\ncheckpoint_every");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 17"), "{err}");
        let err = ExperimentConfig::from_toml_str("[datasets.x]\nkind = \"sweep\"\nbogus = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn dangling_references_rejected() {
        let text = SMALL.replace("dataset = \"tiny\"\nhidden = [8]\nsteps = 3", "dataset = \"nope\"\nhidden = [8]\nsteps = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = SMALL.replace("exploiter = \"small\"", "exploiter = \"other\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = SMALL.replace("pattern = \"pat\"", "pattern = \"df\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn end_to_end_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (ca, cb) = (small(a.path()), small(b.path()));
        for c in [&ca, &cb] {
            assert!(run_attack_eval(c, None, 1).is_err());
            let g = run_generate(c, None, 2).unwrap();
            assert!(!g[0].reproduced);
            run_train(c, "df", None).unwrap();
            run_train(c, "pat", None).unwrap();
            run_attack_eval(c, None, 2).unwrap();
        }
        assert!(run_generate(&ca, None, 1).unwrap()[0].reproduced);
        for rel in [
            "datasets/tiny-train.ncds",
            "datasets/tiny-test.ncds",
            "heads/df.nclp",
            "heads/df-trace.csv",
            "curves/attack.csv",
        ] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
        let trace = fs::read_to_string(a.path().join("heads/df-trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 7);
        assert!(trace.starts_with("step,train_loss,val_"));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let a = tempfile::tempdir().unwrap();
        let c = small(a.path());
        run_generate(&c, Some("tiny"), 1).unwrap();
        run_train(&c, "df", None).unwrap();
        let full = fs::read(c.checkpoint_path("df")).unwrap();
        let full_trace = fs::read_to_string(c.trace_path("df")).unwrap();

        let b = tempfile::tempdir().unwrap();
        let mut c_b = c.clone();
        c_b.out = b.path().to_path_buf();
        run_generate(&c_b, Some("tiny"), 1).unwrap();
        let mut short = c_b.clone();
        short.heads.get_mut("df").unwrap().steps = 4;
        assert_eq!(run_train(&short, "df", None).unwrap().steps, 4);
        let resumed = run_train(&c_b, "df", Some(&c_b.checkpoint_path("df"))).unwrap();
        assert_eq!(resumed.steps, 6);
        assert_eq!(fs::read(c_b.checkpoint_path("df")).unwrap(), full);
        assert_eq!(fs::read_to_string(c_b.trace_path("df")).unwrap(), full_trace);

        let mut other = c_b.clone();
        other.heads.get_mut("df").unwrap().batch_size = 5;
        assert!(run_train(&other, "df", Some(&c_b.checkpoint_path("df"))).is_err());
    }

    #[test]
    fn missing_dataset_is_stated() {
        let a = tempfile::tempdir().unwrap();
        let err = run_train(&small(a.path()), "df", None).unwrap_err().to_string();
        assert!(err.contains("run generate first"), "{err}");
    }

    #[test]
    fn caf_tables_written() {
        let a = tempfile::tempdir().unwrap();
        let mut c = small(a.path());
        c.caf = Some(CafConfig {
            cases: vec![Example1Case::Case1],
            alpha: 0.0,
            trials: 2,
            example1: Example1Config {
                m: 1024,
                ..Example1Config::default()
            },
            seed: 0,
        });
        let r = run_caf(&c).unwrap();
        assert_eq!(r[0].peaks.len(), 2);
        let table = fs::read_to_string(&r[0].table).unwrap();
        assert!(table.starts_with("lag_s,magnitude\n"));
        assert_eq!(table.lines().count(), 130);
        assert!(a.path().join("caf/peaks.csv").exists());
    }
}
