//! Closed-loop attack: the exploiter rebuilds the waveform from its estimate
//! and injects its own payload; the receiver, knowing the true parameters,
//! decodes and the bit error rate is measured against Eb/N0.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alloc::{BandAllocation, Family, LABEL_WIDTH};
use crate::channel::{ebn0_to_snr, noise_variance, q_function};
use crate::dataset::{generate_records, Record, RecordSource, Split, SweepSpec};
use crate::error::{invalid, Error, Result};
use crate::exploiter::{ExploiterHeads, ParamEstimate, FRAME_WIDTH};
use crate::nn::Matrix;
use crate::rng::{derive_seed, derived_rng, Rng};
use crate::signal::{qpsk_modulate, random_bits, synthesize_raw, ComplexSample, TxParams};

/// Receiver samples per true useful symbol.
pub const RX_SAMPLES: usize = 128;
pub const BITS_PER_SYMBOL: usize = 2;
pub const MIN_BITS_PER_POINT: usize = 200_000;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub fn default_ebn0_grid() -> Vec<f64> {
    (0..=7).map(|i| 2.0 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerMethod {
    /// Exact per-bit error probability given the noiseless received symbol.
    #[default]
    SemiAnalytic,
    /// Draw receiver noise and count decision errors.
    MonteCarlo,
}

/// Expected (or counted) bit errors of one attacked frame at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub bits: usize,
    pub errors: Vec<f64>,
    /// Decoded bits at each grid point (Monte-Carlo only).
    pub decoded: Vec<Vec<u8>>,
}

/// Receiver matched filter: `Y_n = sqrt(|S|) / K * sum_k x[k] exp(-j 2 pi n k / K)`
/// for each true-active `n`, so the legitimate symbol comes out unscaled.
fn demodulate(x: &[ComplexSample], active: &[usize]) -> Vec<ComplexSample> {
    let k = x.len() as f64;
    let gain = (active.len() as f64).sqrt() / k;
    active
        .iter()
        .map(|&n| {
            let step = Complex64::cis(-2.0 * PI * n as f64 / k);
            let mut w = Complex64::new(1.0, 0.0);
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                if i % 32 == 0 {
                    w = Complex64::cis(-2.0 * PI * (n * i) as f64 / k);
                }
                acc += v * w;
                w *= step;
            }
            acc * gain
        })
        .collect()
}

/// Exploiter waveform as seen over one true symbol at the receiver's
/// sampling instants. Slot 0 puts payload bits `2n, 2n + 1` on each
/// estimated-active subcarrier `n`; later slots carry fresh random data.
fn exploiter_waveform(
    truth: &TxParams,
    estimate: &ParamEstimate,
    payload: &[u8],
    rng: &mut Rng,
) -> Result<Vec<ComplexSample>> {
    let rate = RX_SAMPLES as f64 * truth.delta_f();
    let active = estimate.active_indices();
    if active.is_empty() {
        return Ok(vec![Complex64::new(0.0, 0.0); RX_SAMPLES]);
    }
    if !(estimate.delta_f_hat.is_finite() && estimate.delta_f_hat > 0.0) {
        return invalid(format!("estimated subcarrier width {} is not positive", estimate.delta_f_hat));
    }
    let width = estimate.alloc_hat.len();
    let alloc = BandAllocation::from_bits(&estimate.alloc_hat)?;
    let params = TxParams::new(estimate.delta_f_hat, alloc, 0.0, width)?;
    let slots = (truth.t_u() / params.t_u()).ceil() as usize + 1;
    let amp = (active.len() as f64).sqrt().recip();
    let mut symbols = vec![Complex64::new(0.0, 0.0); slots * width];
    for &n in &active {
        symbols[n] = qpsk_modulate(&payload[BITS_PER_SYMBOL * n..BITS_PER_SYMBOL * (n + 1)])?[0] * amp;
    }
    for m in 1..slots {
        let extra = qpsk_modulate(&random_bits(BITS_PER_SYMBOL * active.len(), rng))?;
        for (&n, s) in active.iter().zip(extra) {
            symbols[m * width + n] = s * amp;
        }
    }
    synthesize_raw(&params, &symbols, slots, rate, RX_SAMPLES)
}

/// Attack one frame. `payload` holds two bits per subcarrier index, covering
/// both the true band and the estimate. Subcarrier `n` is always scored
/// against bits `2n, 2n + 1`, so a missed subcarrier decodes from noise and
/// leakage while correctly placed ones are unaffected by other misses.
pub fn attack_once(
    truth: &TxParams,
    estimate: &ParamEstimate,
    payload: &[u8],
    ebn0_db: &[f64],
    method: BerMethod,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let true_active = truth.alloc().active_indices();
    let need = BITS_PER_SYMBOL * truth.n_total().max(estimate.alloc_hat.len());
    if payload.len() < need {
        return invalid(format!("payload has {} bits, attack needs {need}", payload.len()));
    }
    let tx = exploiter_waveform(truth, estimate, payload, rng)?;
    let n_true = true_active.len();
    let bits = BITS_PER_SYMBOL * n_true;
    let intended: Vec<u8> = true_active
        .iter()
        .flat_map(|&n| [payload[BITS_PER_SYMBOL * n], payload[BITS_PER_SYMBOL * n + 1]])
        .collect();
    let mut errors = Vec::with_capacity(ebn0_db.len());
    let mut decoded = Vec::new();
    for &e in ebn0_db {
        let snr = ebn0_to_snr(e, RX_SAMPLES, n_true, BITS_PER_SYMBOL)?;
        let var = noise_variance(snr);
        match method {
            BerMethod::SemiAnalytic => {
                let y = demodulate(&tx, &true_active);
                let sigma = (var * n_true as f64 / (2.0 * RX_SAMPLES as f64)).sqrt();
                let mut sum = 0.0;
                for (j, v) in y.iter().enumerate() {
                    for (b, comp) in [(intended[2 * j], v.re), (intended[2 * j + 1], v.im)] {
                        let margin = if b == 0 { comp } else { -comp };
                        sum += if sigma > 0.0 {
                            q_function(margin / sigma)
                        } else if margin > 0.0 {
                            0.0
                        } else if margin < 0.0 {
                            1.0
                        } else {
                            0.5
                        };
                    }
                }
                errors.push(sum);
            }
            BerMethod::MonteCarlo => {
                let s = (var / 2.0).sqrt();
                let noisy: Vec<ComplexSample> = tx
                    .iter()
                    .map(|v| {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        v + Complex64::new(re * s, im * s)
                    })
                    .collect();
                let y = demodulate(&noisy, &true_active);
                let mut out = Vec::with_capacity(bits);
                for v in &y {
                    // Exact zero is a coin flip.
                    for comp in [v.re, v.im] {
                        out.push(if comp < 0.0 {
                            1
                        } else if comp > 0.0 {
                            0
                        } else {
                            u8::from(rand::Rng::random::<bool>(rng))
                        });
                    }
                }
                errors.push(out.iter().zip(&intended).filter(|(a, b)| a != b).count() as f64);
                decoded.push(out);
            }
        }
    }
    Ok(AttackOutcome { bits, errors, decoded })
}

/// Where the exploiter's parameter estimates come from.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    /// Perfect knowledge: the baseline transmission.
    Oracle,
    Heads(&'a ExploiterHeads),
}

pub fn oracle_estimate(record: &Record) -> ParamEstimate {
    ParamEstimate {
        delta_f_raw: record.delta_f,
        delta_f_hat: record.delta_f,
        alloc_hat: record.label_bits(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Attacked frames; `snr_db` is the exploiter's observation SNR.
    pub frames: SweepSpec,
    #[serde(default = "default_ebn0_grid")]
    pub ebn0_db: Vec<f64>,
    #[serde(default = "default_min_bits")]
    pub min_bits: usize,
    /// Upper bound on bits per point when extending for confidence.
    #[serde(default = "default_max_bits")]
    pub max_bits: usize,
    #[serde(default)]
    pub method: BerMethod,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_bits() -> usize {
    MIN_BITS_PER_POINT
}

fn default_max_bits() -> usize {
    4 * MIN_BITS_PER_POINT
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, frames: SweepSpec) -> Self {
        Self {
            name: name.into(),
            frames,
            ebn0_db: default_ebn0_grid(),
            min_bits: MIN_BITS_PER_POINT,
            max_bits: 4 * MIN_BITS_PER_POINT,
            method: BerMethod::SemiAnalytic,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frames.validate()?;
        if self.frames.width != FRAME_WIDTH {
            return Err(Error::Config(format!("attacked frames must have width {FRAME_WIDTH}")));
        }
        if self.ebn0_db.is_empty() || self.ebn0_db.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("Eb/N0 grid must be non-empty and finite".into()));
        }
        if self.min_bits == 0 || self.max_bits < self.min_bits {
            return Err(Error::Config("need 0 < min_bits <= max_bits".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub ebn0_db: f64,
    pub ber: f64,
    /// Scored payload bits.
    pub trials: usize,
    pub frames: usize,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub observation_snr_db: Vec<f64>,
    pub families: Vec<Family>,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerCurve {
    pub scenario: String,
    pub points: Vec<BerPoint>,
    pub meta: CurveMeta,
}

impl BerCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("scenario,ebn0_db,ber,trials,ci_halfwidth\n");
        for p in &self.points {
            writeln!(s, "{},{},{:e},{},{:e}", self.scenario, p.ebn0_db, p.ber, p.trials, p.ci_halfwidth)
                .expect("writing to a String");
        }
        s
    }

    /// Combine several curves into one CSV with a single header.
    pub fn csv_many(curves: &[BerCurve]) -> String {
        let mut s = String::from("scenario,ebn0_db,ber,trials,ci_halfwidth\n");
        for c in curves {
            s.push_str(c.csv().split_once('\n').map_or("", |(_, rest)| rest));
        }
        s
    }
}

/// Ratio estimate `sum e / sum b` with a 95% half-width from per-frame
/// residuals.
fn ratio_ci(errors: &[f64], bits: &[usize]) -> (f64, f64) {
    let total_b: f64 = bits.iter().map(|&b| b as f64).sum();
    let total_e: f64 = errors.iter().sum();
    let ber = total_e / total_b;
    let f = errors.len() as f64;
    if f < 2.0 {
        return (ber, f64::INFINITY);
    }
    let ss: f64 = errors
        .iter()
        .zip(bits)
        .map(|(e, &b)| (e - ber * b as f64).powi(2))
        .sum();
    let var = f / (f - 1.0) * ss / (total_b * total_b);
    (ber, Z95 * var.sqrt())
}

const CHUNK: usize = 256;

/// Attack freshly generated frames until every grid point has at least
/// `min_bits` scored bits and a 95% half-width below `max(0.1 ber, 1e-3)`,
/// or `max_bits` is reached.
pub fn run_scenario(spec: &ScenarioSpec, estimator: Estimator<'_>) -> Result<BerCurve> {
    run_scenario_threaded(spec, estimator, 1)
}

/// Per-frame (errors per grid point, scored bits).
fn attack_frame(r: &Record, est: &ParamEstimate, spec: &ScenarioSpec) -> Result<(Vec<f64>, usize)> {
    let truth = r.tx_params()?;
    let mut rng = derived_rng(r.seed, "attack", 0);
    let n = BITS_PER_SYMBOL * truth.n_total().max(est.alloc_hat.len());
    let payload = random_bits(n, &mut rng);
    let out = attack_once(&truth, est, &payload, &spec.ebn0_db, spec.method, &mut rng)?;
    Ok((out.errors, out.bits))
}

/// [`run_scenario`] with each chunk of frames split over `threads` workers.
/// Frames carry their own seeds, so the curve does not depend on `threads`.
pub fn run_scenario_threaded(spec: &ScenarioSpec, estimator: Estimator<'_>, threads: usize) -> Result<BerCurve> {
    spec.validate()?;
    let frames = SweepSpec {
        seed: derive_seed(spec.seed, "attack-frames", 0),
        ..spec.frames.clone()
    };
    let n_points = spec.ebn0_db.len();
    let mut per_frame_errors: Vec<Vec<f64>> = vec![Vec::new(); n_points];
    let mut per_frame_bits: Vec<usize> = Vec::new();
    let mut total_bits = 0usize;
    let mut next = 0u64;
    let threads = threads.max(1);
    loop {
        let chunk: Vec<Record> = (next..next + CHUNK as u64)
            .map(|i| frames.record(Split::Test, i))
            .collect::<Result<_>>()?;
        next += CHUNK as u64;
        let estimates: Vec<ParamEstimate> = match estimator {
            Estimator::Oracle => chunk.iter().map(oracle_estimate).collect(),
            Estimator::Heads(h) => {
                let mut xs = Vec::with_capacity(chunk.len() * FRAME_WIDTH);
                for r in &chunk {
                    xs.extend_from_slice(r.frame.values());
                }
                h.infer_batch(&Matrix::from_vec(chunk.len(), FRAME_WIDTH, xs)?)?
            }
        };
        let per = chunk.len().div_ceil(threads);
        let results: Vec<Result<Vec<(Vec<f64>, usize)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .chunks(per)
                .zip(estimates.chunks(per))
                .map(|(rs, es)| {
                    scope.spawn(move || rs.iter().zip(es).map(|(r, e)| attack_frame(r, e, spec)).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("attack worker panicked")).collect()
        });
        for part in results {
            for (errors, bits) in part? {
                for (acc, e) in per_frame_errors.iter_mut().zip(errors) {
                    acc.push(e);
                }
                per_frame_bits.push(bits);
                total_bits += bits;
            }
        }
        if total_bits < spec.min_bits {
            continue;
        }
        let precise = per_frame_errors.iter().all(|errs| {
            let (ber, ci) = ratio_ci(errs, &per_frame_bits);
            ci < (0.1 * ber).max(1e-3)
        });
        if precise || total_bits >= spec.max_bits {
            break;
        }
    }
    let points = spec
        .ebn0_db
        .iter()
        .zip(&per_frame_errors)
        .map(|(&e, errs)| {
            let (ber, ci) = ratio_ci(errs, &per_frame_bits);
            BerPoint {
                ebn0_db: e,
                ber,
                trials: total_bits,
                frames: per_frame_bits.len(),
                ci_halfwidth: ci,
            }
        })
        .collect();
    let rate = match &spec.frames.families[..] {
        [crate::alloc::AllocSpec::Struct1 { rate: Some(r), .. }] => Some(*r),
        _ => None,
    };
    Ok(BerCurve {
        scenario: spec.name.clone(),
        points,
        meta: CurveMeta {
            observation_snr_db: spec.frames.snr_db.clone(),
            families: spec.frames.families.iter().map(|f| f.family()).collect(),
            rate,
        },
    })
}

/// Closed-form QPSK-over-AWGN BER at each grid point.
pub fn baseline_theory(ebn0_db: &[f64]) -> Vec<f64> {
    ebn0_db.iter().map(|&e| crate::channel::qpsk_ber(e)).collect()
}

/// Per-bit pattern error of `heads` over generated frames, as used for the
/// head-level orderings.
pub fn pattern_bit_error(heads: &ExploiterHeads, frames: &SweepSpec, split: Split) -> Result<f64> {
    let recs = generate_records(frames, split, 1)?;
    if recs.is_empty() {
        return invalid("no frames to evaluate");
    }
    let mut xs = Vec::with_capacity(recs.len() * FRAME_WIDTH);
    for r in &recs {
        xs.extend_from_slice(r.frame.values());
    }
    let est = heads.infer_batch(&Matrix::from_vec(recs.len(), FRAME_WIDTH, xs)?)?;
    let wrong: usize = recs
        .iter()
        .zip(&est)
        .map(|(r, e)| r.label_bits().iter().zip(&e.alloc_hat).filter(|(a, b)| a != b).count())
        .sum();
    Ok(wrong as f64 / (recs.len() * LABEL_WIDTH) as f64)
}
