//! Monte-Carlo link simulation over the phase-noise channel
//! `r_k = w_k e^{jθ_k} + n_k`, with `θ_k ~ N(0, σ_p²)` and `n_k ~ CN(0, N0)`
//! drawn independently per resource and per frame.

mod detect;

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{superimpose, CodebookSet};
use crate::error::{Error, Result};
use crate::pnmetrics::PnChannelParams;

pub use detect::{
    detect_ml, detect_mpa, Detector, Metric, MlDetector, MpaDetector, MpaOutput, DEFAULT_ML_BUDGET,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// One realization of the channel impairments.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// Per-resource phase error in rad.
    pub theta: Vec<f64>,
    /// Per-resource complex noise, `N0/2` per real dimension.
    pub noise: Vec<Complex64>,
}

impl ChannelDraw {
    /// Draws `K` phases followed by `K` noise samples. The underlying
    /// standard normals depend only on the RNG state, so two operating points
    /// sharing a seed see the same scaled realizations.
    pub fn sample<R: Rng + ?Sized>(resources: usize, p: &PnChannelParams, rng: &mut R) -> Self {
        let sp = p.sigma_p2.sqrt();
        let sn = p.half_n0().sqrt();
        let theta = (0..resources)
            .map(|_| sp * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise = (0..resources)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(sn * re, sn * im)
            })
            .collect();
        Self { theta, noise }
    }

    pub fn apply(&self, w: &[Complex64]) -> Vec<Complex64> {
        w.iter()
            .zip(&self.theta)
            .zip(&self.noise)
            .map(|((&wk, &t), &n)| wk * Complex64::from_polar(1.0, t) + n)
            .collect()
    }
}

/// Superimposes the users' codewords and passes the result through one
/// channel draw.
pub fn transmit<R: Rng + ?Sized>(
    cbs: &CodebookSet,
    labels: &[usize],
    p: &PnChannelParams,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let w = superimpose(cbs, labels)?;
    Ok(ChannelDraw::sample(cbs.resources(), p, rng).apply(&w))
}

/// When to stop a BER run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub min_errors: u64,
    pub max_bits: u64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            min_errors: 400,
            max_bits: 20_000_000,
        }
    }
}

/// Frames per batch; each batch owns an independent RNG stream.
pub const BATCH_FRAMES: u64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MinErrors,
    MaxBits,
}

/// Counters and estimates of one BER run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub detector: String,
    pub rng_seed: u64,
    pub sigma_p2: f64,
    pub n0: f64,
    pub eb_n0_db: Option<f64>,
    pub frames: u64,
    pub bits_simulated: u64,
    pub bit_errors: u64,
    pub user_bit_errors: Vec<u64>,
    /// Frames whose superimposed codeword was detected wrongly.
    pub symbol_errors: u64,
    pub stop: StopReason,
    /// Set when no bit error occurred; the estimate is then only an upper
    /// bound.
    pub censored: bool,
    pub wall_time_s: f64,
}

/// `(lower, upper)` 95% interval for a binomial proportion. Zero successes
/// give `(0, 1 − 0.05^{1/n})`.
pub fn proportion_ci(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    if successes == 0 {
        return (0.0, 1.0 - 0.05f64.powf(1.0 / n));
    }
    let p = successes as f64 / n;
    let h = Z95 * (p * (1.0 - p) / n).sqrt();
    ((p - h).max(0.0), (p + h).min(1.0))
}

impl SimResult {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits_simulated as f64
    }

    pub fn ser(&self) -> f64 {
        self.symbol_errors as f64 / self.frames as f64
    }

    pub fn user_ber(&self) -> Vec<f64> {
        let per_user = self.bits_simulated as f64 / self.user_bit_errors.len() as f64;
        self.user_bit_errors
            .iter()
            .map(|&e| e as f64 / per_user)
            .collect()
    }

    pub fn ber_ci(&self) -> (f64, f64) {
        proportion_ci(self.bit_errors, self.bits_simulated)
    }

    pub fn ser_ci(&self) -> (f64, f64) {
        proportion_ci(self.symbol_errors, self.frames)
    }

    /// Counters only, for reproducibility checks that must ignore timing.
    pub fn counters(&self) -> (u64, u64, u64, &[u64], u64) {
        (
            self.frames,
            self.bits_simulated,
            self.bit_errors,
            &self.user_bit_errors,
            self.symbol_errors,
        )
    }
}

enum Engine {
    Ml(MlDetector, Metric),
    Mpa(MpaDetector, Metric, usize, f64),
}

impl Engine {
    fn new(cbs: &CodebookSet, detector: &Detector) -> Result<Self> {
        Ok(match *detector {
            Detector::Ml { metric } => Engine::Ml(MlDetector::new(cbs)?, metric),
            Detector::Mpa {
                variant,
                iterations,
                damping,
            } => {
                if iterations == 0 {
                    return Err(Error::InputDomain("MPA needs at least one iteration".into()));
                }
                Engine::Mpa(MpaDetector::new(cbs), variant, iterations, damping)
            }
        })
    }

    fn detect(
        &self,
        r: &[Complex64],
        p: &PnChannelParams,
        scratch: &mut Vec<Vec<f64>>,
    ) -> Result<Vec<usize>> {
        match self {
            Engine::Ml(d, metric) => {
                let g = d.detect_index(r, p, *metric, scratch)?;
                Ok(d.constellation().labels_of(g as u128))
            }
            Engine::Mpa(d, variant, it, damp) => Ok(d.detect(r, p, *variant, *it, *damp)?.labels),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    frames: u64,
    bit_errors: u64,
    user_bit_errors: Vec<u64>,
    symbol_errors: u64,
}

impl Tally {
    fn new(users: usize) -> Self {
        Self {
            user_bit_errors: vec![0; users],
            ..Default::default()
        }
    }

    fn record(&mut self, sent: &[usize], got: &[usize]) {
        self.frames += 1;
        let mut wrong = false;
        for (j, (&a, &b)) in sent.iter().zip(got).enumerate() {
            let e = u64::from((a ^ b).count_ones());
            self.user_bit_errors[j] += e;
            self.bit_errors += e;
            wrong |= a != b;
        }
        self.symbol_errors += u64::from(wrong);
    }

    fn merge(&mut self, other: &Tally) {
        self.frames += other.frames;
        self.bit_errors += other.bit_errors;
        self.symbol_errors += other.symbol_errors;
        for (a, b) in self.user_bit_errors.iter_mut().zip(&other.user_bit_errors) {
            *a += b;
        }
    }
}

/// RNG for batch `b` of a run seeded with `seed`. Labels are drawn first,
/// then the channel, so codebook sets of equal shape share every draw.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

fn draw_frame(
    cbs: &CodebookSet,
    p: &PnChannelParams,
    rng: &mut ChaCha8Rng,
    labels: &mut [usize],
) -> Result<Vec<Complex64>> {
    let m = cbs.size();
    labels.iter_mut().for_each(|l| *l = rng.random_range(0..m));
    transmit(cbs, labels, p, rng)
}

fn pool(workers: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    match workers {
        None => Ok(None),
        Some(0) => Err(Error::InputDomain("worker count must be >= 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map(Some)
            .map_err(|e| Error::InputDomain(format!("cannot start {w} workers: {e}"))),
    }
}

/// Frames in batch `b` when at most `cap` frames may be sent in total.
fn batch_frames(b: u64, cap: u64) -> u64 {
    cap.saturating_sub(b.saturating_mul(BATCH_FRAMES)).min(BATCH_FRAMES)
}

/// Runs batches in order, several at a time, and stops at the first batch
/// after which `done` holds. Batches computed past that point are discarded,
/// so the outcome does not depend on how many run concurrently.
fn run_batches<T: Send>(
    workers: Option<usize>,
    mut run: impl FnMut(&[u64]) -> Result<Vec<T>>,
    mut absorb: impl FnMut(T) -> bool,
) -> Result<()> {
    let width = workers.unwrap_or_else(rayon::current_num_threads).max(1) as u64 * 2;
    let mut next = 0u64;
    loop {
        let ids: Vec<u64> = (next..next + width).collect();
        for t in run(&ids)? {
            if absorb(t) {
                return Ok(());
            }
        }
        next += width;
    }
}

/// Simulates uniform user bits until `min_errors` bit errors or `max_bits`
/// bits, whichever comes first. Labels map to bits in natural binary order.
pub fn run_ber(
    cbs: &CodebookSet,
    p: &PnChannelParams,
    detector: &Detector,
    stopping: &StoppingRule,
    rng_seed: u64,
    workers: Option<usize>,
) -> Result<SimResult> {
    let started = Instant::now();
    if stopping.max_bits == 0 {
        return Err(Error::InputDomain("max_bits must be positive".into()));
    }
    let engine = Engine::new(cbs, detector)?;
    let users = cbs.users();
    let bits_per_frame = users as u64 * u64::from(cbs.bits_per_user());
    let cap = stopping.max_bits.div_ceil(bits_per_frame);
    let pool = pool(workers)?;
    let one = |b: u64| -> Result<Tally> {
        let mut rng = batch_rng(rng_seed, b);
        let mut labels = vec![0; users];
        let mut scratch = Vec::new();
        let mut t = Tally::new(users);
        for _ in 0..batch_frames(b, cap) {
            let r = draw_frame(cbs, p, &mut rng, &mut labels)?;
            let got = engine.detect(&r, p, &mut scratch)?;
            t.record(&labels, &got);
        }
        Ok(t)
    };
    let run = |ids: &[u64]| -> Result<Vec<Tally>> {
        let go = || ids.par_iter().map(|&b| one(b)).collect::<Result<Vec<_>>>();
        match &pool {
            Some(pool) => pool.install(go),
            None => go(),
        }
    };
    let mut total = Tally::new(users);
    let mut stop = StopReason::MaxBits;
    run_batches(workers, run, |t| {
        total.merge(&t);
        if total.bit_errors >= stopping.min_errors {
            stop = StopReason::MinErrors;
            return true;
        }
        total.frames >= cap
    })?;
    Ok(SimResult {
        detector: detector.id(),
        rng_seed,
        sigma_p2: p.sigma_p2,
        n0: p.n0,
        eb_n0_db: p.eb_n0_db,
        frames: total.frames,
        bits_simulated: total.frames * bits_per_frame,
        bit_errors: total.bit_errors,
        user_bit_errors: total.user_bit_errors,
        symbol_errors: total.symbol_errors,
        stop,
        censored: total.bit_errors == 0,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Frame-by-frame comparison of two detectors on identical received vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub frames: u64,
    pub symbol_errors: [u64; 2],
    pub bit_errors: [u64; 2],
    /// Frames where only the first (index 0) or only the second detector
    /// erred on the superimposed codeword.
    pub discordant: [u64; 2],
    /// Frames where both detectors returned the same labels.
    pub identical_decisions: u64,
}

impl PairedComparison {
    pub fn ser(&self, i: usize) -> f64 {
        self.symbol_errors[i] as f64 / self.frames as f64
    }

    /// 95% interval for `SER_0 − SER_1`, from the discordant frames.
    pub fn ser_difference_ci(&self) -> (f64, f64) {
        let n = self.frames as f64;
        let (b, c) = (self.discordant[0] as f64, self.discordant[1] as f64);
        let d = (b - c) / n;
        let var = ((b + c) / n - d * d) / n;
        let h = Z95 * var.max(0.0).sqrt();
        (d - h, d + h)
    }
}

/// Runs two detectors on the same frames until the first reaches
/// `min_errors` symbol errors or `max_bits` bits have been sent.
pub fn compare_detectors(
    cbs: &CodebookSet,
    p: &PnChannelParams,
    detectors: [&Detector; 2],
    stopping: &StoppingRule,
    rng_seed: u64,
    workers: Option<usize>,
) -> Result<PairedComparison> {
    let engines = [Engine::new(cbs, detectors[0])?, Engine::new(cbs, detectors[1])?];
    let users = cbs.users();
    let bits_per_frame = users as u64 * u64::from(cbs.bits_per_user());
    let cap = stopping.max_bits.div_ceil(bits_per_frame);
    let pool = pool(workers)?;
    let one = |b: u64| -> Result<PairedComparison> {
        let mut rng = batch_rng(rng_seed, b);
        let mut labels = vec![0; users];
        let mut scratch = Vec::new();
        let mut out = PairedComparison {
            frames: 0,
            symbol_errors: [0; 2],
            bit_errors: [0; 2],
            discordant: [0; 2],
            identical_decisions: 0,
        };
        for _ in 0..batch_frames(b, cap) {
            let r = draw_frame(cbs, p, &mut rng, &mut labels)?;
            let a = engines[0].detect(&r, p, &mut scratch)?;
            let b = engines[1].detect(&r, p, &mut scratch)?;
            out.frames += 1;
            let wrong = [a != labels, b != labels];
            for (i, got) in [&a, &b].into_iter().enumerate() {
                out.symbol_errors[i] += u64::from(wrong[i]);
                out.bit_errors[i] += labels
                    .iter()
                    .zip(got.iter())
                    .map(|(&x, &y)| u64::from((x ^ y).count_ones()))
                    .sum::<u64>();
            }
            if wrong[0] && !wrong[1] {
                out.discordant[0] += 1;
            }
            if wrong[1] && !wrong[0] {
                out.discordant[1] += 1;
            }
            out.identical_decisions += u64::from(a == b);
        }
        Ok(out)
    };
    let run = |ids: &[u64]| -> Result<Vec<PairedComparison>> {
        let go = || ids.par_iter().map(|&b| one(b)).collect::<Result<Vec<_>>>();
        match &pool {
            Some(pool) => pool.install(go),
            None => go(),
        }
    };
    let mut total = PairedComparison {
        frames: 0,
        symbol_errors: [0; 2],
        bit_errors: [0; 2],
        discordant: [0; 2],
        identical_decisions: 0,
    };
    run_batches(workers, run, |t| {
        total.frames += t.frames;
        total.identical_decisions += t.identical_decisions;
        for i in 0..2 {
            total.symbol_errors[i] += t.symbol_errors[i];
            total.bit_errors[i] += t.bit_errors[i];
            total.discordant[i] += t.discordant[i];
        }
        total.symbol_errors.iter().any(|&e| e >= stopping.min_errors)
            || total.frames >= cap
    })?;
    Ok(total)
}
