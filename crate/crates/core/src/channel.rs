//! Additive white Gaussian noise and SNR / Eb/N0 bookkeeping.
//!
//! SNR is per complex sample against a unit-power signal, so the noise
//! variance is `10^(-snr_db / 10)`, split equally between the I and Q rails.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self { snr_db, seed }
    }

    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    /// Total complex noise variance.
    pub fn variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }
}

pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Add circularly-symmetric complex Gaussian noise drawn from `spec.seed`.
pub fn add_awgn(signal: &[Complex64], spec: &NoiseSpec) -> Vec<Complex64> {
    let mut out = signal.to_vec();
    let mut rng = rng_from_seed(spec.seed);
    add_awgn_in_place(&mut out, spec.snr_db, &mut rng);
    out
}

/// In-place variant drawing from a caller-owned stream.
pub fn add_awgn_in_place(signal: &mut [Complex64], snr_db: f64, rng: &mut Rng) {
    let var = noise_variance(snr_db);
    if var == 0.0 {
        return;
    }
    let sigma = (var / 2.0).sqrt();
    for v in signal.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
}

fn rate_offset_db(n_total: usize, n_active: usize, bits_per_symbol: usize) -> Result<f64> {
    if n_active == 0 {
        return invalid("Eb/N0 conversion needs at least one active subcarrier");
    }
    if n_total == 0 || bits_per_symbol == 0 {
        return invalid("Eb/N0 conversion needs positive band size and bits per symbol");
    }
    Ok(10.0 * (n_total as f64 / (n_active * bits_per_symbol) as f64).log10())
}

/// `Eb/N0 = SNR + 10 log10(n_total / (n_active * bits_per_symbol))`, for a
/// receiver sampling at `n_total` samples per useful symbol.
pub fn snr_to_ebn0(
    snr_db: f64,
    n_total: usize,
    n_active: usize,
    bits_per_symbol: usize,
) -> Result<f64> {
    Ok(snr_db + rate_offset_db(n_total, n_active, bits_per_symbol)?)
}

pub fn ebn0_to_snr(
    ebn0_db: f64,
    n_total: usize,
    n_active: usize,
    bits_per_symbol: usize,
) -> Result<f64> {
    Ok(ebn0_db - rate_offset_db(n_total, n_active, bits_per_symbol)?)
}

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Closed-form Gray-coded QPSK bit error rate over AWGN.
pub fn qpsk_ber(ebn0_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(ebn0_db / 10.0)).sqrt())
}
