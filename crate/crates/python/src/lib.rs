//! Python bindings: allocations, waveforms, the CAF estimator, trained
//! exploiter heads and config-driven experiments.

use std::path::PathBuf;

use lpe::alloc::{self, BandAllocation};
use lpe::caf::{caf_peaks, estimate_caf};
use lpe::channel::{add_awgn, ebn0_to_snr, qpsk_ber, NoiseSpec};
use lpe::exploiter::{load_head, ExploiterHeads, Head};
use lpe::experiment::{run_attack_eval, run_caf, run_generate, run_train, ExperimentConfig};
use lpe::nn::{load_checkpoint, Matrix, MlpModel};
use lpe::rng::{derive_seed, rng_from_seed};
use lpe::signal::{sample_frame, Frame, SamplingClock, SymbolGrid, TxParams};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: lpe::Error) -> PyErr {
    match e {
        lpe::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn complex(re: &[f64], im: &[f64]) -> PyResult<Vec<Complex64>> {
    if re.len() != im.len() {
        return Err(PyValueError::new_err("real and imaginary parts differ in length"));
    }
    Ok(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
}

/// Subcarrier occupancy pattern.
#[pyclass(name = "BandAllocation", from_py_object)]
#[derive(Clone)]
struct PyAllocation {
    inner: BandAllocation,
}

#[pymethods]
impl PyAllocation {
    #[new]
    fn new(bits: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: BandAllocation::from_bits(&bits).map_err(err)?,
        })
    }

    #[staticmethod]
    fn ofdm(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: alloc::gen_ofdm(n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn struct1(n: usize, q: usize, c: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: alloc::gen_struct1(n, q, c, &mut rng_from_seed(seed)).map_err(err)?,
        })
    }

    #[staticmethod]
    fn struct2(n: usize, c: usize, q1: usize, q2: usize, q3: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: alloc::gen_struct2(n, c, q1, q2, q3, &mut rng_from_seed(seed)).map_err(err)?,
        })
    }

    #[staticmethod]
    fn random(n: usize, k_min: usize, k_max: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: alloc::gen_random(n, k_min, k_max, &mut rng_from_seed(seed)).map_err(err)?,
        })
    }

    #[staticmethod]
    fn interleaved(n: usize, q: usize) -> PyResult<Self> {
        Ok(Self {
            inner: alloc::gen_interleaved(n, q).map_err(err)?,
        })
    }

    fn bits(&self) -> Vec<u32> {
        self.inner.to_bits().into_iter().map(u32::from).collect()
    }

    fn active_indices(&self) -> Vec<usize> {
        self.inner.active_indices()
    }

    fn rate(&self) -> f64 {
        self.inner.rate()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let s: String = self.inner.to_bits().iter().map(|b| if *b == 1 { '1' } else { '0' }).collect();
        format!("BandAllocation('{s}')")
    }
}

/// One observed frame (reals then imaginaries) of a random-QPSK symbol on
/// the exploiter's fixed clock.
#[pyfunction]
#[pyo3(signature = (allocation, delta_f, t0=0.0, snr_db=None, seed=0, width=192))]
fn observe_frame(
    allocation: &PyAllocation,
    delta_f: f64,
    t0: f64,
    snr_db: Option<f64>,
    seed: u64,
    width: usize,
) -> PyResult<Vec<f64>> {
    let n = allocation.inner.len();
    let params = TxParams::new(delta_f, allocation.inner.clone(), t0, n).map_err(err)?;
    let mut rng = rng_from_seed(seed);
    let grid = SymbolGrid::random(&allocation.inner, 1, &mut rng);
    let noise = snr_db.map(|s| NoiseSpec::new(s, derive_seed(seed, "noise", 0)));
    Ok(sample_frame(&params, &grid, SamplingClock::default(), width, noise.as_ref())
        .map_err(err)?
        .into_values())
}

/// Add complex AWGN at `snr_db` (unit signal power reference).
#[pyfunction]
fn awgn(re: Vec<f64>, im: Vec<f64>, snr_db: f64, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let x = complex(&re, &im)?;
    let y = add_awgn(&x, &NoiseSpec::new(snr_db, seed));
    Ok((y.iter().map(|v| v.re).collect(), y.iter().map(|v| v.im).collect()))
}

#[pyfunction]
fn ebn0_to_snr_db(ebn0_db: f64, n_total: usize, n_active: usize, bits_per_symbol: usize) -> PyResult<f64> {
    ebn0_to_snr(ebn0_db, n_total, n_active, bits_per_symbol).map_err(err)
}

#[pyfunction]
fn qpsk_ber_theory(ebn0_db: f64) -> f64 {
    qpsk_ber(ebn0_db)
}

/// `[(lag seconds, |R|)]` of the cyclic autocorrelation at `alpha`.
#[pyfunction]
fn caf(re: Vec<f64>, im: Vec<f64>, alpha: f64, lags: Vec<usize>, ts: f64) -> PyResult<Vec<(f64, f64)>> {
    let x = complex(&re, &im)?;
    Ok(estimate_caf(&x, alpha, &lags, ts).map_err(err)?.table())
}

/// Peak lags (in samples, lag 0 excluded) of the CAF slice at `alpha`.
#[pyfunction]
#[pyo3(signature = (re, im, alpha, max_lag, ts, rel_threshold=0.3))]
fn caf_peak_lags(re: Vec<f64>, im: Vec<f64>, alpha: f64, max_lag: usize, ts: f64, rel_threshold: f64) -> PyResult<Vec<usize>> {
    let x = complex(&re, &im)?;
    let lags: Vec<usize> = (0..=max_lag).collect();
    let slice = estimate_caf(&x, alpha, &lags, ts).map_err(err)?;
    caf_peaks(&slice, rel_threshold).map_err(err)
}

/// A dense network loaded from a checkpoint.
#[pyclass(name = "MlpModel")]
struct PyModel {
    inner: MlpModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(err)?.0,
        })
    }

    fn dims(&self) -> Vec<usize> {
        self.inner.spec().dims
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = Matrix::from_rows(&rows).map_err(err)?;
        let y = self.inner.predict(&x, 512).map_err(err)?;
        Ok((0..y.rows()).map(|i| y.row(i).to_vec()).collect())
    }
}

/// Subcarrier-width and allocation-pattern heads used together.
#[pyclass(name = "Exploiter")]
struct PyExploiter {
    inner: ExploiterHeads,
}

#[pymethods]
impl PyExploiter {
    #[staticmethod]
    fn load(delta_f: PathBuf, pattern: PathBuf) -> PyResult<Self> {
        let (df, _, _) = load_head(&delta_f, Head::DeltaF).map_err(err)?;
        let (pat, _, _) = load_head(&pattern, Head::Pattern).map_err(err)?;
        Ok(Self {
            inner: ExploiterHeads::new(df, pat).map_err(err)?,
        })
    }

    #[staticmethod]
    fn untrained(seed: u64) -> Self {
        Self {
            inner: ExploiterHeads::init(seed),
        }
    }

    /// `(delta_f_hat, alloc_hat)` for one frame.
    fn infer(&self, frame: Vec<f64>) -> PyResult<(f64, Vec<u32>)> {
        let f = Frame::from_values(frame).map_err(err)?;
        let e = self.inner.infer_params(&f).map_err(err)?;
        Ok((e.delta_f_hat, e.alloc_hat.into_iter().map(u32::from).collect()))
    }
}

/// A parsed experiment config with its run steps.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    #[pyo3(signature = (path, out=None, seed=None))]
    fn load(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        Self::with_overrides(ExperimentConfig::load(&path).map_err(err)?, out, seed)
    }

    #[staticmethod]
    #[pyo3(signature = (text, out=None, seed=None))]
    fn from_toml(text: &str, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        Self::with_overrides(ExperimentConfig::from_toml_str(text).map_err(err)?, out, seed)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn heads(&self) -> Vec<String> {
        self.inner.heads.keys().cloned().collect()
    }

    /// `[(name, train_path, test_path, reproduced)]`
    #[pyo3(signature = (threads=0))]
    fn generate(&self, threads: usize) -> PyResult<Vec<(String, PathBuf, PathBuf, bool)>> {
        self.inner.write_snapshot().map_err(err)?;
        Ok(run_generate(&self.inner, None, threads)
            .map_err(err)?
            .into_iter()
            .map(|r| (r.name, r.files.train, r.files.test, r.reproduced))
            .collect())
    }

    /// Train one head; returns its held-out metric.
    #[pyo3(signature = (head, resume=None))]
    fn train(&self, head: &str, resume: Option<PathBuf>) -> PyResult<f64> {
        Ok(run_train(&self.inner, head, resume.as_deref()).map_err(err)?.test_metric)
    }

    /// `{scenario: [(ebn0_db, ber, trials, ci_halfwidth)]}`
    #[pyo3(signature = (threads=0))]
    fn attack_eval(&self, threads: usize) -> PyResult<Vec<(String, Vec<(f64, f64, usize, f64)>)>> {
        let report = run_attack_eval(&self.inner, None, threads).map_err(err)?;
        Ok(report
            .curves
            .into_iter()
            .map(|c| {
                let pts = c.points.iter().map(|p| (p.ebn0_db, p.ber, p.trials, p.ci_halfwidth)).collect();
                (c.scenario, pts)
            })
            .collect())
    }

    /// `[(case index, peak lags of each trial)]`
    fn caf(&self) -> PyResult<Vec<(u8, Vec<Vec<usize>>)>> {
        Ok(run_caf(&self.inner)
            .map_err(err)?
            .into_iter()
            .map(|r| (r.case.index(), r.peaks))
            .collect())
    }
}

impl PyExperiment {
    fn with_overrides(mut inner: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        if let Some(o) = out {
            inner.out = o;
        }
        if let Some(s) = seed {
            inner.seed = s;
        }
        Ok(Self { inner })
    }
}

#[pymodule(name = "ncofdm_lpe")]
fn ncofdm_lpe_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAllocation>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyExploiter>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(observe_frame, m)?)?;
    m.add_function(wrap_pyfunction!(awgn, m)?)?;
    m.add_function(wrap_pyfunction!(ebn0_to_snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(qpsk_ber_theory, m)?)?;
    m.add_function(wrap_pyfunction!(caf, m)?)?;
    m.add_function(wrap_pyfunction!(caf_peak_lags, m)?)?;
    Ok(())
}
