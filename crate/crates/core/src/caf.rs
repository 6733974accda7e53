//! Cyclic autocorrelation estimates and the interleaved-allocation ambiguity.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::alloc::gen_interleaved;
use crate::channel::add_awgn_in_place;
use crate::error::{invalid, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::signal::{synthesize, ComplexSample, Frame, SymbolGrid, TxParams};

/// CAF values over a set of lags at one cyclic frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CafSlice {
    pub alpha: f64,
    pub lags: Vec<usize>,
    pub values: Vec<Complex64>,
    pub ts: f64,
}

impl CafSlice {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    /// `(lag in seconds, |R|)` rows.
    pub fn table(&self) -> Vec<(f64, f64)> {
        self.lags
            .iter()
            .zip(&self.values)
            .map(|(&l, v)| (l as f64 * self.ts, v.norm()))
            .collect()
    }
}

/// `R(alpha, tau Ts) = 1/M sum_{n=1}^{M} r[n] r*[n - tau] exp(-j 2 pi alpha n Ts)`
/// with `r` zero before its first sample.
pub fn estimate_caf(samples: &[ComplexSample], alpha: f64, lags: &[usize], ts: f64) -> Result<CafSlice> {
    let m = samples.len();
    if m == 0 {
        return invalid("cannot estimate a CAF from an empty sequence");
    }
    if !(ts.is_finite() && ts > 0.0) || !alpha.is_finite() {
        return invalid("sample period must be positive and alpha finite");
    }
    if let Some(&bad) = lags.iter().find(|&&l| l >= m) {
        return invalid(format!("lag {bad} is not below the sample count {m}"));
    }
    let rotated: Vec<Complex64> = if alpha == 0.0 {
        samples.to_vec()
    } else {
        samples
            .iter()
            .enumerate()
            .map(|(i, &r)| r * Complex64::cis(-2.0 * PI * alpha * (i + 1) as f64 * ts))
            .collect()
    };
    let values = lags
        .iter()
        .map(|&tau| {
            let acc: Complex64 = rotated[tau..]
                .iter()
                .zip(&samples[..m - tau])
                .map(|(a, b)| a * b.conj())
                .sum();
            acc / m as f64
        })
        .collect();
    Ok(CafSlice {
        alpha,
        lags: lags.to_vec(),
        values,
        ts,
    })
}

/// All cyclic frequencies `k / (M Ts)`, `k = 0..M`, at one lag via an FFT.
/// Returns `(alpha, R)` pairs in `k` order.
pub fn caf_over_alpha(samples: &[ComplexSample], lag: usize, ts: f64) -> Result<Vec<(f64, Complex64)>> {
    let m = samples.len();
    if m == 0 || lag >= m {
        return invalid(format!("lag {lag} is not below the sample count {m}"));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return invalid("sample period must be positive");
    }
    let mut buf: Vec<Complex64> = (0..m)
        .map(|i| {
            if i >= lag {
                samples[i] * samples[i - lag].conj()
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    Ok(buf
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            // The sum runs over n = i + 1, one step past the FFT's index origin.
            let shift = Complex64::cis(-2.0 * PI * k as f64 / m as f64);
            (k as f64 / (m as f64 * ts), v * shift / m as f64)
        })
        .collect())
}

/// Interior local maxima of `|R|` above `rel_threshold * max |R|`, never lag 0.
pub fn caf_peaks(slice: &CafSlice, rel_threshold: f64) -> Result<Vec<usize>> {
    if slice.values.is_empty() {
        return invalid("empty CAF slice");
    }
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return invalid(format!("threshold must lie in (0, 1), got {rel_threshold}"));
    }
    let mag = slice.magnitudes();
    let top = mag.iter().copied().fold(0.0, f64::max);
    let floor = rel_threshold * top;
    Ok((1..mag.len().saturating_sub(1))
        .filter(|&i| slice.lags[i] != 0 && mag[i] > floor && mag[i] > mag[i - 1] && mag[i] >= mag[i + 1])
        .map(|i| slice.lags[i])
        .collect())
}

/// True when both sets have the same size and pair up within `tol` lags.
pub fn peak_sets_coincide(a: &[usize], b: &[usize], tol: usize) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.abs_diff(*y) <= tol)
}

pub const EXAMPLE1_N: usize = 256;
/// Common sample rate: Nyquist for the widest case (`T_u = 192 us`).
pub const EXAMPLE1_RATE_HZ: f64 = EXAMPLE1_N as f64 / 192e-6;

/// The three interleaved parameter sets that share a CAF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example1Case {
    Case1,
    Case2,
    Case3,
}

impl Example1Case {
    pub const ALL: [Example1Case; 3] = [Example1Case::Case1, Example1Case::Case2, Example1Case::Case3];

    /// 1-based case number.
    pub fn index(self) -> u8 {
        match self {
            Example1Case::Case1 => 1,
            Example1Case::Case2 => 2,
            Example1Case::Case3 => 3,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(usize::from(i).checked_sub(1)?).copied()
    }

    pub fn t_u(self) -> f64 {
        match self {
            Example1Case::Case1 => 320e-6,
            Example1Case::Case2 => 256e-6,
            Example1Case::Case3 => 192e-6,
        }
    }

    pub fn q(self) -> usize {
        match self {
            Example1Case::Case1 => 5,
            Example1Case::Case2 => 4,
            Example1Case::Case3 => 3,
        }
    }

    pub fn params(self) -> TxParams {
        interleaved_params(self.q(), self.t_u())
    }
}

fn interleaved_params(q: usize, t_u: f64) -> TxParams {
    let alloc = gen_interleaved(EXAMPLE1_N, q).expect("q divides into the band");
    TxParams::new(1.0 / t_u, alloc, 0.0, EXAMPLE1_N).expect("valid interleaved parameters")
}

/// Noiseless unit-power interleaved waveform: back-to-back symbols of fresh
/// QPSK data, `m` samples at [`EXAMPLE1_RATE_HZ`].
pub fn interleaved_clean(params: &TxParams, m: usize, rng: &mut Rng) -> Result<Vec<ComplexSample>> {
    let duration = m as f64 / EXAMPLE1_RATE_HZ;
    let slots = (duration / params.t_o()).ceil() as usize + 1;
    let grid = SymbolGrid::random(params.alloc(), slots, rng);
    let mut s = synthesize(params, &grid, EXAMPLE1_RATE_HZ, duration)?;
    s.resize(m, ComplexSample::new(0.0, 0.0));
    Ok(s)
}

/// [`interleaved_clean`] plus AWGN at `snr_db` from the same stream.
pub fn interleaved_signal(params: &TxParams, m: usize, snr_db: f64, rng: &mut Rng) -> Result<Vec<ComplexSample>> {
    let mut s = interleaved_clean(params, m, rng)?;
    add_awgn_in_place(&mut s, snr_db, rng);
    Ok(s)
}

pub fn example1_signal(case: Example1Case, m: usize, snr_db: f64, rng: &mut Rng) -> Result<Vec<ComplexSample>> {
    interleaved_signal(&case.params(), m, snr_db, rng)
}

/// Network input for the Example 1 heads: the first `width / 2` samples.
pub fn example1_frame(case: Example1Case, width: usize, snr_db: f64, rng: &mut Rng) -> Result<Frame> {
    if width == 0 || width % 2 != 0 {
        return invalid(format!("frame width must be even and positive, got {width}"));
    }
    Ok(Frame::from_samples(&example1_signal(case, width / 2, snr_db, rng)?))
}

/// Plain OFDM over the same band (`q = 1`), used as a control.
pub fn ofdm_control_params(t_u: f64) -> TxParams {
    interleaved_params(1, t_u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example1Config {
    pub m: usize,
    pub snr_db: f64,
    pub max_lag: usize,
    pub rel_threshold: f64,
    pub lag_tolerance: usize,
}

impl Default for Example1Config {
    fn default() -> Self {
        Self {
            m: 8192,
            snr_db: 5.0,
            max_lag: 128,
            rel_threshold: 0.3,
            lag_tolerance: 1,
        }
    }
}

impl Example1Config {
    pub fn ts(&self) -> f64 {
        1.0 / EXAMPLE1_RATE_HZ
    }

    pub fn lags(&self) -> Vec<usize> {
        (0..=self.max_lag).collect()
    }

    pub fn peaks(&self, samples: &[ComplexSample]) -> Result<Vec<usize>> {
        let slice = estimate_caf(samples, 0.0, &self.lags(), self.ts())?;
        caf_peaks(&slice, self.rel_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// More than one hypothesis explains the observed peaks.
    Ambiguous,
    Resolved(Example1Case),
    /// No hypothesis matches.
    Distinguishable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub observed: Vec<usize>,
    pub hypotheses: Vec<(Example1Case, Vec<usize>)>,
    pub matches: Vec<Example1Case>,
    pub verdict: Verdict,
}

/// Compare the observed alpha = 0 peak lags with those of a noiseless
/// realization of every candidate parameter set.
pub fn caf_resolve_example1(samples: &[ComplexSample], cfg: &Example1Config) -> Result<AmbiguityReport> {
    let observed = cfg.peaks(samples)?;
    let mut hypotheses = Vec::with_capacity(3);
    for case in Example1Case::ALL {
        let mut rng = rng_from_seed(u64::from(case.index()));
        let reference = example1_signal(case, samples.len(), f64::INFINITY, &mut rng)?;
        hypotheses.push((case, cfg.peaks(&reference)?));
    }
    let matches: Vec<Example1Case> = hypotheses
        .iter()
        .filter(|(_, p)| peak_sets_coincide(&observed, p, cfg.lag_tolerance))
        .map(|(c, _)| *c)
        .collect();
    let verdict = match matches.as_slice() {
        [] => Verdict::Distinguishable,
        [one] => Verdict::Resolved(*one),
        _ => Verdict::Ambiguous,
    };
    Ok(AmbiguityReport {
        observed,
        hypotheses,
        matches,
        verdict,
    })
}
