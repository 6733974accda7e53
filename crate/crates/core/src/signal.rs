//! NC-OFDM baseband synthesis, QPSK mapping and exploiter frame sampling.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::alloc::BandAllocation;
use crate::channel::{add_awgn, NoiseSpec};
use crate::error::{invalid, Result};
use crate::rng::Rng;

/// One complex baseband sample.
pub type ComplexSample = Complex64;

/// Transmission parameters of a (NC-)OFDM waveform. The cyclic prefix is
/// always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TxParams {
    delta_f: f64,
    alloc: BandAllocation,
    t0: f64,
    n_total: usize,
}

impl TxParams {
    pub fn new(delta_f: f64, alloc: BandAllocation, t0: f64, n_total: usize) -> Result<Self> {
        if !(delta_f.is_finite() && delta_f > 0.0) {
            return invalid(format!("subcarrier width must be positive, got {delta_f}"));
        }
        if !(t0.is_finite() && t0 >= 0.0) {
            return invalid(format!("sampling offset must be >= 0, got {t0}"));
        }
        if let Some(last) = alloc.active_indices().last() {
            if *last >= n_total {
                return invalid(format!(
                    "active subcarrier {last} outside the {n_total}-subcarrier band"
                ));
            }
        }
        Ok(Self {
            delta_f,
            alloc,
            t0,
            n_total,
        })
    }

    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    pub fn alloc(&self) -> &BandAllocation {
        &self.alloc
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Useful symbol duration `1 / delta_f`.
    pub fn t_u(&self) -> f64 {
        1.0 / self.delta_f
    }

    pub fn t_cp(&self) -> f64 {
        0.0
    }

    /// Symbol period `T_u + T_cp`.
    pub fn t_o(&self) -> f64 {
        self.t_u() + self.t_cp()
    }
}

/// QPSK symbols indexed by (time slot, subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    n_subcarriers: usize,
    slots: usize,
    symbols: Vec<ComplexSample>,
}

impl SymbolGrid {
    /// Map `bits` onto the active subcarriers of `alloc`, slot by slot, in
    /// ascending subcarrier order. Needs exactly `2 * slots * |alloc|` bits.
    pub fn from_bits(alloc: &BandAllocation, slots: usize, bits: &[u8]) -> Result<Self> {
        let active = alloc.active_indices();
        let need = 2 * slots * active.len();
        if bits.len() != need {
            return invalid(format!("grid needs {need} bits, got {}", bits.len()));
        }
        let mapped = qpsk_modulate(bits)?;
        let n = alloc.len();
        let mut symbols = vec![ComplexSample::new(0.0, 0.0); slots * n];
        let mut it = mapped.into_iter();
        for m in 0..slots {
            for &k in &active {
                symbols[m * n + k] = it.next().expect("bit count checked");
            }
        }
        Ok(Self {
            n_subcarriers: n,
            slots,
            symbols,
        })
    }

    /// Fresh uniformly random QPSK payload on every active subcarrier.
    pub fn random(alloc: &BandAllocation, slots: usize, rng: &mut Rng) -> Self {
        let bits = random_bits(2 * slots * alloc.count_active(), rng);
        Self::from_bits(alloc, slots, &bits).expect("bit count matches by construction")
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn get(&self, slot: usize, subcarrier: usize) -> ComplexSample {
        self.symbols[slot * self.n_subcarriers + subcarrier]
    }

    pub fn row(&self, slot: usize) -> &[ComplexSample] {
        &self.symbols[slot * self.n_subcarriers..(slot + 1) * self.n_subcarriers]
    }

    pub fn as_slice(&self) -> &[ComplexSample] {
        &self.symbols
    }
}

pub fn random_bits(n: usize, rng: &mut Rng) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<bool>())).collect()
}

/// Gray-mapped QPSK: `(b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<ComplexSample>> {
    if bits.len() % 2 != 0 {
        return invalid(format!("QPSK needs an even bit count, got {}", bits.len()));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return invalid(format!("bit values must be 0 or 1, got {b}"));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|p| {
            ComplexSample::new(
                (1.0 - 2.0 * f64::from(p[0])) * FRAC_1_SQRT_2,
                (1.0 - 2.0 * f64::from(p[1])) * FRAC_1_SQRT_2,
            )
        })
        .collect())
}

/// Minimum-distance (quadrant) QPSK decisions.
pub fn qpsk_demodulate(symbols: &[ComplexSample]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

/// Evaluate the unnormalized waveform at `n_samples` instants `k / sample_rate`.
///
/// Slot `m` occupies `[m T_o, (m + 1) T_o)` (rectangular pulse); instants past
/// the last slot are silent. `symbols` is row-major (slot, subcarrier) over
/// `params.n_total()` columns.
pub fn synthesize_raw(
    params: &TxParams,
    symbols: &[ComplexSample],
    slots: usize,
    sample_rate: f64,
    n_samples: usize,
) -> Result<Vec<ComplexSample>> {
    let n = params.n_total();
    if symbols.len() != slots * n {
        return invalid(format!(
            "symbol matrix has {} entries, expected {slots} x {n}",
            symbols.len()
        ));
    }
    check_rate(params, sample_rate)?;
    let active = params.alloc().active_indices();
    let t_o = params.t_o();
    let mut out = vec![ComplexSample::new(0.0, 0.0); n_samples];
    // Tone n completes exactly n cycles per slot (no cyclic prefix), so
    // exp(j 2 pi f_n (t - m T_o)) = exp(j 2 pi f_n t) and one running phasor
    // per tone serves every slot. It is re-anchored periodically to bound drift.
    const REANCHOR: usize = 256;
    let slot_of: Vec<usize> = (0..n_samples)
        .map(|k| ((k as f64 / sample_rate) / t_o).floor() as usize)
        .collect();
    for &i in &active {
        let w = 2.0 * PI * i as f64 * params.delta_f() / sample_rate;
        let step = ComplexSample::cis(w);
        let mut phasor = ComplexSample::new(1.0, 0.0);
        for (k, v) in out.iter_mut().enumerate() {
            if k % REANCHOR == 0 {
                phasor = ComplexSample::cis(w * k as f64);
            }
            let m = slot_of[k];
            if m < slots {
                *v += symbols[m * n + i] * phasor;
            }
            phasor *= step;
        }
    }
    Ok(out)
}

fn check_rate(params: &TxParams, sample_rate: f64) -> Result<()> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return invalid(format!("sample rate must be positive, got {sample_rate}"));
    }
    let f_max = params
        .alloc()
        .active_indices()
        .last()
        .map_or(0.0, |&i| i as f64 * params.delta_f());
    if f_max > 0.0 && sample_rate <= f_max {
        return invalid(format!(
            "sample rate {sample_rate} Hz aliases the highest active tone at {f_max} Hz"
        ));
    }
    Ok(())
}

/// Synthesize the waveform over `duration` seconds and scale it to unit mean
/// power over the samples that fall inside the transmitted slots.
pub fn synthesize(
    params: &TxParams,
    grid: &SymbolGrid,
    sample_rate: f64,
    duration: f64,
) -> Result<Vec<ComplexSample>> {
    if grid.n_subcarriers() != params.n_total() {
        return invalid(format!(
            "grid has {} subcarriers, parameters describe {}",
            grid.n_subcarriers(),
            params.n_total()
        ));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return invalid(format!("duration must be positive, got {duration}"));
    }
    let n_samples = (duration * sample_rate).round() as usize;
    let mut s = synthesize_raw(params, grid.as_slice(), grid.slots(), sample_rate, n_samples)?;
    let active_end = grid.slots() as f64 * params.t_o();
    let in_slots = s
        .iter()
        .enumerate()
        .take_while(|(k, _)| (*k as f64) / sample_rate < active_end)
        .count();
    let power = s[..in_slots].iter().map(|v| v.norm_sqr()).sum::<f64>() / in_slots.max(1) as f64;
    if power > 0.0 {
        let scale = power.sqrt().recip();
        s.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(s)
}

/// How the exploiter's sampling instants are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingClock {
    /// Sample period tied to the transmitter's own subcarrier width:
    /// `T = span / (delta_f * width / 2)`, so the frame covers `span` of one
    /// useful symbol. `span = 0.5` gives `T = 1 / (delta_f * width)`.
    SymbolLocked { span: f64 },
    /// Free-running exploiter clock at a fixed rate.
    Fixed { rate_hz: f64 },
}

impl SamplingClock {
    /// Fixed clock at the complex Nyquist rate of 64 subcarriers at 30 kHz.
    pub const EXPLOITER_DEFAULT: SamplingClock = SamplingClock::Fixed { rate_hz: 1.92e6 };

    pub fn period(&self, delta_f: f64, input_width: usize) -> f64 {
        match *self {
            SamplingClock::SymbolLocked { span } => span / (delta_f * (input_width / 2) as f64),
            SamplingClock::Fixed { rate_hz } => 1.0 / rate_hz,
        }
    }
}

impl Default for SamplingClock {
    fn default() -> Self {
        Self::EXPLOITER_DEFAULT
    }
}

/// Real-valued network input: real parts of `width / 2` samples followed by
/// their imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    values: Vec<f64>,
}

impl Frame {
    pub fn from_samples(samples: &[ComplexSample]) -> Self {
        let mut values = Vec::with_capacity(2 * samples.len());
        values.extend(samples.iter().map(|s| s.re));
        values.extend(samples.iter().map(|s| s.im));
        Self { values }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() % 2 != 0 {
            return invalid(format!("frame width must be even, got {}", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("frame contains a non-finite value");
        }
        Ok(Self { values })
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn samples(&self) -> Vec<ComplexSample> {
        let h = self.values.len() / 2;
        (0..h)
            .map(|k| ComplexSample::new(self.values[k], self.values[k + h]))
            .collect()
    }
}

/// Noiseless exploiter observation of the first slot of `grid`:
/// `r(kT) = a * sum_{n in S} s_n exp(j 2 pi f_n (kT - t0))`, `k < width / 2`,
/// with `a = 1 / sqrt(|S|)` so the expected sample power is one.
pub fn observe(
    params: &TxParams,
    grid: &SymbolGrid,
    clock: SamplingClock,
    input_width: usize,
) -> Result<Vec<ComplexSample>> {
    if input_width == 0 || input_width % 2 != 0 {
        return invalid(format!("input width must be even and positive, got {input_width}"));
    }
    if grid.n_subcarriers() != params.n_total() || grid.slots() == 0 {
        return invalid("symbol grid does not match the transmission parameters");
    }
    let period = clock.period(params.delta_f(), input_width);
    if let SamplingClock::Fixed { .. } = clock {
        check_rate(params, 1.0 / period)?;
    }
    let active = params.alloc().active_indices();
    let half = input_width / 2;
    let mut out = vec![ComplexSample::new(0.0, 0.0); half];
    if active.is_empty() {
        return Ok(out);
    }
    let amp = (active.len() as f64).sqrt().recip();
    let row = grid.row(0);
    for &n in &active {
        let f = n as f64 * params.delta_f();
        let mut phasor = row[n] * amp * ComplexSample::cis(-2.0 * PI * f * params.t0());
        let step = ComplexSample::cis(2.0 * PI * f * period);
        for v in out.iter_mut() {
            *v += phasor;
            phasor *= step;
        }
    }
    Ok(out)
}

/// Sample one exploiter frame, optionally adding channel noise.
pub fn sample_frame(
    params: &TxParams,
    grid: &SymbolGrid,
    clock: SamplingClock,
    input_width: usize,
    noise: Option<&NoiseSpec>,
) -> Result<Frame> {
    let clean = observe(params, grid, clock, input_width)?;
    let noisy = match noise {
        Some(spec) => add_awgn(&clean, spec),
        None => clean,
    };
    Ok(Frame::from_samples(&noisy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn full(n: usize) -> BandAllocation {
        BandAllocation::from_bools(vec![true; n]).unwrap()
    }

    #[test]
    fn qpsk_first_point_and_antipode() {
        let s = qpsk_modulate(&[0, 0]).unwrap();
        assert!((s[0].re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((s[0].im - FRAC_1_SQRT_2).abs() < 1e-15);
        let s = qpsk_modulate(&[0, 0, 1, 1]).unwrap();
        assert!((s[0] + s[1]).norm() < 1e-15);
    }

    #[test]
    fn qpsk_rejects_odd_bits() {
        assert!(qpsk_modulate(&[0, 1, 1]).is_err());
        assert!(qpsk_modulate(&[0, 2]).is_err());
    }

    #[test]
    fn qpsk_roundtrip_all_pairs() {
        for pair in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            let s = qpsk_modulate(&pair).unwrap();
            assert_eq!(qpsk_demodulate(&s), pair.to_vec());
        }
    }

    #[test]
    fn qpsk_quadrant_decision() {
        let off = ComplexSample::new(0.9 * FRAC_1_SQRT_2, 1.1 * FRAC_1_SQRT_2);
        assert_eq!(qpsk_demodulate(&[off]), vec![0, 0]);
    }

    #[test]
    fn qpsk_mean_energy_is_one() {
        let mut rng = rng_from_seed(11);
        let bits = random_bits(1_000_000, &mut rng);
        let s = qpsk_modulate(&bits).unwrap();
        let e = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / s.len() as f64;
        assert!((e - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_out_of_band_subcarrier() {
        let alloc = BandAllocation::from_bools(vec![false, false, false, true]).unwrap();
        assert!(TxParams::new(15e3, alloc, 0.0, 3).is_err());
    }

    #[test]
    fn dc_subcarrier_is_constant() {
        let alloc = BandAllocation::from_bools(vec![true, false, false, false]).unwrap();
        let p = TxParams::new(15e3, alloc.clone(), 0.0, 4).unwrap();
        let grid = SymbolGrid::from_bits(&alloc, 1, &[0, 0]).unwrap();
        let s = synthesize(&p, &grid, 4.0 * 15e3, 1.0 / 15e3).unwrap();
        assert_eq!(s.len(), 4);
        for v in &s {
            assert!((v - s[0]).norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_tone_lands_in_bin_one() {
        let n = 16;
        let mut occ = vec![false; n];
        occ[1] = true;
        let alloc = BandAllocation::from_bools(occ).unwrap();
        let p = TxParams::new(20e3, alloc.clone(), 0.0, n).unwrap();
        let grid = SymbolGrid::from_bits(&alloc, 1, &[1, 0]).unwrap();
        let s = synthesize(&p, &grid, n as f64 * 20e3, 1.0 / 20e3).unwrap();
        // Naive DFT oracle.
        let bins: Vec<f64> = (0..n)
            .map(|b| {
                s.iter()
                    .enumerate()
                    .map(|(k, v)| v * ComplexSample::cis(-2.0 * PI * (b * k) as f64 / n as f64))
                    .sum::<ComplexSample>()
                    .norm_sqr()
            })
            .collect();
        let total: f64 = bins.iter().sum();
        assert!((bins[1] / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_band_matches_inverse_dft() {
        let n = 32;
        let alloc = full(n);
        let p = TxParams::new(25e3, alloc.clone(), 0.0, n).unwrap();
        let grid = SymbolGrid::random(&alloc, 1, &mut rng_from_seed(3));
        let s = synthesize_raw(&p, grid.as_slice(), 1, n as f64 * 25e3, n).unwrap();
        for (k, v) in s.iter().enumerate() {
            let idft: ComplexSample = (0..n)
                .map(|i| grid.get(0, i) * ComplexSample::cis(2.0 * PI * (i * k) as f64 / n as f64))
                .sum();
            assert!((v - idft).norm() < 1e-10);
        }
        // Parseval
        let et: f64 = s.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        let ef: f64 = grid.row(0).iter().map(|v| v.norm_sqr()).sum();
        assert!((et - ef).abs() / ef < 1e-10);
    }

    #[test]
    fn aliasing_rate_rejected() {
        let alloc = full(8);
        let p = TxParams::new(15e3, alloc.clone(), 0.0, 8).unwrap();
        let grid = SymbolGrid::random(&alloc, 1, &mut rng_from_seed(1));
        assert!(synthesize(&p, &grid, 7.0 * 15e3, 1e-4).is_err());
    }

    #[test]
    fn frame_layout_and_dc() {
        let alloc = BandAllocation::from_bools(vec![true, false]).unwrap();
        let p = TxParams::new(15e3, alloc.clone(), 0.0, 2).unwrap();
        let grid = SymbolGrid::from_bits(&alloc, 1, &[0, 1]).unwrap();
        let f = sample_frame(&p, &grid, SamplingClock::SymbolLocked { span: 0.5 }, 192, None)
            .unwrap();
        assert_eq!(f.width(), 192);
        let v = f.values();
        assert!(v[..96].iter().all(|x| (x - v[0]).abs() < 1e-12));
        assert!(v[96..].iter().all(|x| (x - v[96]).abs() < 1e-12));
        assert!(v[0] > 0.0 && v[96] < 0.0);
        let samples = f.samples();
        for (k, s) in samples.iter().enumerate() {
            assert_eq!(s.re, v[k]);
            assert_eq!(s.im, v[k + 96]);
        }
    }

    #[test]
    fn odd_width_rejected() {
        let alloc = full(4);
        let p = TxParams::new(15e3, alloc.clone(), 0.0, 4).unwrap();
        let grid = SymbolGrid::random(&alloc, 1, &mut rng_from_seed(1));
        assert!(sample_frame(&p, &grid, SamplingClock::default(), 191, None).is_err());
    }
}
