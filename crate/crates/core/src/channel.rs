//! Calibrated channel impairments applied to IQ records.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::IqRecord;
use crate::waveforms::rotate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Impairment {
    /// AWGN calibrated against the power of the signal-occupied samples.
    AwgnSnr { snr_db: f64 },
    /// AWGN of absolute power (dB relative to unit power). Used when several
    /// emitters of different power share one noise floor.
    NoiseFloor { power_db: f64 },
    Cfo { offset_hz: f64 },
    Multipath { taps: Vec<Complex64> },
    Gain { db: f64 },
    ShapeFilter { taps: Vec<f64> },
}

/// Ordered impairments plus the seed for every noise draw in the chain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpairmentChain {
    pub steps: Vec<Impairment>,
    pub noise_seed: u64,
}

impl ImpairmentChain {
    pub fn new(noise_seed: u64) -> Self {
        Self {
            steps: Vec::new(),
            noise_seed,
        }
    }

    pub fn then(mut self, step: Impairment) -> Self {
        self.steps.push(step);
        self
    }

    pub fn with_noise_seed(&self, noise_seed: u64) -> Self {
        Self {
            steps: self.steps.clone(),
            noise_seed,
        }
    }

    /// Applies every step in list order.
    pub fn apply(&self, rec: &IqRecord) -> Result<IqRecord> {
        let mut out = rec.clone();
        for (i, step) in self.steps.iter().enumerate() {
            // Each noise step gets its own stream.
            let seed = self.noise_seed.wrapping_add(i as u64);
            out = match step {
                Impairment::AwgnSnr { snr_db } => apply_awgn(&out, *snr_db, seed)?,
                Impairment::NoiseFloor { power_db } => {
                    add_noise(&out, 10f64.powf(power_db / 10.0), seed)
                }
                Impairment::Cfo { offset_hz } => apply_cfo(&out, *offset_hz)?,
                Impairment::Multipath { taps } => apply_multipath(&out, taps)?,
                Impairment::Gain { db } => apply_gain(&out, *db),
                Impairment::ShapeFilter { taps } => apply_filter(&out, taps)?,
            };
        }
        out.meta
            .insert("impairment_chain".into(), serde_json::to_value(self)?);
        Ok(out)
    }
}

/// Mean power over samples with `|x| > 0`.
pub fn occupied_power(samples: &[Complex64]) -> Option<f64> {
    let (sum, count) = samples
        .iter()
        .map(|s| s.norm_sqr())
        .filter(|p| *p > 0.0)
        .fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Adds complex Gaussian noise so that the occupied-sample SNR equals
/// `snr_db`. A non-finite positive target returns the record unchanged.
pub fn apply_awgn(rec: &IqRecord, snr_db: f64, seed: u64) -> Result<IqRecord> {
    if snr_db == f64::INFINITY {
        return Ok(rec.clone());
    }
    let signal = occupied_power(&rec.samples).ok_or(Error::CannotCalibrateSnr)?;
    Ok(add_noise(rec, signal / 10f64.powf(snr_db / 10.0), seed))
}

/// Adds circular complex Gaussian noise of total variance `noise_power`.
pub fn add_noise(rec: &IqRecord, noise_power: f64, seed: u64) -> IqRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (noise_power / 2.0).sqrt();
    let mut out = rec.clone();
    for s in out.samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += Complex64::new(re * sigma, im * sigma);
    }
    out
}

/// Multiplies sample `n` by `exp(j 2 pi offset n / fs)`.
pub fn apply_cfo(rec: &IqRecord, offset_hz: f64) -> Result<IqRecord> {
    if offset_hz.abs() >= rec.sample_rate / 2.0 {
        return Err(Error::Config(format!(
            "CFO {offset_hz} Hz outside +/- fs/2 = {}",
            rec.sample_rate / 2.0
        )));
    }
    let mut out = rec.clone();
    rotate(&mut out.samples, offset_hz, rec.sample_rate);
    Ok(out)
}

pub fn apply_gain(rec: &IqRecord, db: f64) -> IqRecord {
    let g = 10f64.powf(db / 20.0);
    let mut out = rec.clone();
    out.samples.iter_mut().for_each(|s| *s *= g);
    out
}

/// Causal linear convolution truncated to the input length.
pub fn apply_multipath(rec: &IqRecord, taps: &[Complex64]) -> Result<IqRecord> {
    if taps.is_empty() {
        return Err(Error::InvalidTaps);
    }
    let mut out = rec.clone();
    out.samples = convolve(&rec.samples, taps);
    Ok(out)
}

pub fn apply_filter(rec: &IqRecord, taps: &[f64]) -> Result<IqRecord> {
    if taps.is_empty() {
        return Err(Error::InvalidTaps);
    }
    let taps: Vec<Complex64> = taps.iter().map(|&t| Complex64::new(t, 0.0)).collect();
    let mut out = rec.clone();
    out.samples = convolve(&rec.samples, &taps);
    Ok(out)
}

fn convolve(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, t)| t * x[n - k])
                .sum()
        })
        .collect()
}
