//! Zadoff-Chu preamble generation, detection and CFO/SNR estimation.
//!
//! The preamble is `n_short` repetitions of a short ZC sequence, each signed
//! by one chip of an m-sequence, followed by one long ZC sequence. Detection
//! runs in two stages:
//!
//! 1. a differential correlator over consecutive short repetitions, which is
//!    insensitive to carrier offset, proposes candidate start positions;
//! 2. each candidate (and its +/-2 sample neighbourhood) is scored by the
//!    squared normalised correlation with the whole preamble, maximised over
//!    carrier offsets inside the coarse range.
//!
//! The stage-2 score is the reported `peak_metric`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::{mean_power, IqRecord};

pub const PREAMBLE_LEN: usize = 1031;

/// Default detection threshold on the squared normalised correlation.
pub const DEFAULT_THRESHOLD: f64 = 0.03;

/// Reported when the noise estimate is exactly zero.
pub const MAX_SNR_DB: f64 = 300.0;

const CANDIDATES: usize = 3;
const TIMING_SEARCH: usize = 2;
const CFO_FFT_LEN: usize = 4096;
const SLOPE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreambleConfig {
    pub n_short: usize,
    pub len_short: usize,
    pub root_short: u32,
    pub len_long: usize,
    pub root_long: u32,
    /// Exponents of the LFSR feedback polynomial, highest first; `[4, 3]`
    /// is x^4 + x^3 + 1.
    pub mseq_taps: Vec<u32>,
}

impl Default for PreambleConfig {
    fn default() -> Self {
        Self {
            n_short: 10,
            len_short: 61,
            root_short: 25,
            len_long: 421,
            root_long: 139,
            mseq_taps: vec![4, 3],
        }
    }
}

impl PreambleConfig {
    pub fn validate(&self) -> Result<()> {
        let total = self.n_short * self.len_short + self.len_long;
        if total != PREAMBLE_LEN {
            return Err(Error::ConfigLengthError(format!(
                "{} x {} + {} = {total}, expected {PREAMBLE_LEN}",
                self.n_short, self.len_short, self.len_long
            )));
        }
        if self.n_short < 2 {
            return Err(Error::ConfigLengthError("need at least two short repetitions".into()));
        }
        check_root(self.root_short, self.len_short)?;
        check_root(self.root_long, self.len_long)?;
        let degree = *self.mseq_taps.first().unwrap_or(&0);
        if degree == 0 || degree > 31 {
            return Err(Error::ConfigLengthError("m-sequence polynomial has no degree".into()));
        }
        if (1usize << degree) - 1 < self.n_short {
            return Err(Error::ConfigLengthError(format!(
                "m-sequence of degree {degree} is shorter than {} repetitions",
                self.n_short
            )));
        }
        Ok(())
    }

    /// Half-width of the unambiguous coarse CFO range.
    pub fn coarse_cfo_range(&self, sample_rate: f64) -> f64 {
        sample_rate / (2.0 * self.len_short as f64)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn check_root(root: u32, length: usize) -> Result<()> {
    if length == 0 || root == 0 || gcd(root as u64, length as u64) != 1 {
        return Err(Error::InvalidRoot {
            root,
            length: length as u32,
        });
    }
    Ok(())
}

/// `z[n] = exp(-j pi u n (n + 1) / N)`.
pub fn zc_sequence(root: u32, length: usize) -> Result<Vec<Complex64>> {
    check_root(root, length)?;
    let n2 = 2 * length as u128;
    Ok((0..length as u128)
        .map(|n| {
            // Reduce the phase exactly before converting to floating point.
            let m = (root as u128 * n * (n + 1)) % n2;
            Complex64::from_polar(1.0, -PI * m as f64 / length as f64)
        })
        .collect())
}

/// Maximal-length sequence chips in {+1, -1}, one full period.
pub fn m_sequence(taps: &[u32]) -> Vec<f64> {
    let degree = taps[0];
    let period = (1usize << degree) - 1;
    let mut state: u32 = (1 << degree) - 1;
    let mut out = Vec::with_capacity(period);
    for _ in 0..period {
        let bit = state & 1;
        out.push(if bit == 0 { 1.0 } else { -1.0 });
        // Fibonacci LFSR: feedback is the XOR of the tapped stages.
        let fb = taps
            .iter()
            .map(|&t| (state >> (degree - t)) & 1)
            .fold(0, |a, b| a ^ b);
        state = (state >> 1) | (fb << (degree - 1));
    }
    out
}

/// Signed short repetitions followed by the long sequence; unit RMS.
pub fn build_preamble(cfg: &PreambleConfig) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    Ok(build_with_chips(cfg, &chips(cfg)))
}

fn chips(cfg: &PreambleConfig) -> Vec<f64> {
    m_sequence(&cfg.mseq_taps)[..cfg.n_short].to_vec()
}

pub(crate) fn build_with_chips(cfg: &PreambleConfig, chips: &[f64]) -> Vec<Complex64> {
    let short = zc_sequence(cfg.root_short, cfg.len_short).expect("validated");
    let long = zc_sequence(cfg.root_long, cfg.len_long).expect("validated");
    let mut out = Vec::with_capacity(PREAMBLE_LEN);
    for &b in chips {
        out.extend(short.iter().map(|z| z * b));
    }
    out.extend_from_slice(&long);
    let rms = mean_power(&out).sqrt();
    out.iter_mut().for_each(|s| *s /= rms);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub detected: bool,
    /// Index of the first preamble sample.
    pub t_offset: usize,
    pub cfo_hz: f64,
    pub snr_db: f64,
    pub peak_metric: f64,
}

/// Reusable detector for one preamble configuration.
pub struct Synchronizer {
    cfg: PreambleConfig,
    preamble: Vec<Complex64>,
    short: Vec<Complex64>,
    chips: Vec<f64>,
    threshold: f64,
    planner: FftPlanner<f64>,
}

impl Synchronizer {
    pub fn new(cfg: &PreambleConfig, threshold: f64) -> Result<Self> {
        cfg.validate()?;
        let chips = chips(cfg);
        Ok(Self {
            preamble: build_with_chips(cfg, &chips),
            short: zc_sequence(cfg.root_short, cfg.len_short)?,
            chips,
            cfg: cfg.clone(),
            threshold,
            planner: FftPlanner::new(),
        })
    }

    pub fn preamble(&self) -> &[Complex64] {
        &self.preamble
    }

    pub fn detect(&mut self, samples: &[Complex64], sample_rate: f64) -> Result<SyncResult> {
        let n = samples.len();
        if n <= PREAMBLE_LEN {
            return Err(Error::TooShort {
                len: n,
                need: PREAMBLE_LEN + 1,
            });
        }
        let ls = self.cfg.len_short;
        let positions = n - PREAMBLE_LEN + 1;

        // Sliding correlation with the short sequence, and running energy.
        let xcorr: Vec<Complex64> = (0..n - ls + 1)
            .map(|d| {
                samples[d..d + ls]
                    .iter()
                    .zip(&self.short)
                    .map(|(r, z)| r * z.conj())
                    .sum()
            })
            .collect();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for s in samples {
            cum.push(cum.last().unwrap() + s.norm_sqr());
        }
        let energy = |a: usize, b: usize| (cum[b] - cum[a]).max(0.0);

        let mut coarse = vec![0.0; positions];
        let mut diff = vec![Complex64::new(0.0, 0.0); positions];
        for d in 0..positions {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut norm = 0.0;
            for k in 0..self.cfg.n_short - 1 {
                let a = d + k * ls;
                let b = a + ls;
                acc += self.chips[k] * self.chips[k + 1] * xcorr[a].conj() * xcorr[b];
                norm += (energy(a, a + ls) * energy(b, b + ls)).sqrt() * ls as f64;
            }
            diff[d] = acc;
            coarse[d] = if norm > 0.0 { acc.norm() / norm } else { 0.0 };
        }

        let candidates = top_peaks(&coarse, CANDIDATES, ls / 2);
        let range = self.cfg.coarse_cfo_range(sample_rate);
        let mut best: Option<(f64, usize, f64)> = None;
        for &c in &candidates {
            let lo = c.saturating_sub(TIMING_SEARCH);
            let hi = (c + TIMING_SEARCH).min(positions - 1);
            for d in lo..=hi {
                let e = energy(d, d + PREAMBLE_LEN);
                if e <= 0.0 {
                    continue;
                }
                let (power, freq) = self.max_over_cfo(&samples[d..d + PREAMBLE_LEN], sample_rate, range);
                let metric = power / (e * PREAMBLE_LEN as f64);
                if best.is_none_or(|(m, _, _)| metric > m) {
                    best = Some((metric, d, freq));
                }
            }
        }

        let Some((metric, t_offset, grid_cfo)) = best else {
            return Ok(SyncResult {
                detected: false,
                t_offset: 0,
                cfo_hz: 0.0,
                snr_db: f64::NEG_INFINITY,
                peak_metric: 0.0,
            });
        };

        let window = &samples[t_offset..t_offset + PREAMBLE_LEN];
        let bin = sample_rate / CFO_FFT_LEN as f64;
        let differential = diff[t_offset].arg() * sample_rate / (2.0 * PI * ls as f64);
        let mut cfo = self.refine_cfo(window, differential, sample_rate);
        if (cfo - grid_cfo).abs() > bin {
            // The differential estimate is unreliable at low SNR.
            cfo = self.refine_cfo(window, grid_cfo, sample_rate);
        }

        let coherent = self.correlate(window, cfo, sample_rate);
        let e = energy(t_offset, t_offset + PREAMBLE_LEN);
        let rho = (coherent.norm_sqr() / (e * PREAMBLE_LEN as f64)).min(1.0 - 1e-15);
        let len = PREAMBLE_LEN as f64;
        let snr_lin = (rho * len - 1.0) / (len * (1.0 - rho));
        let snr_db = if snr_lin > 0.0 {
            (10.0 * snr_lin.log10()).min(MAX_SNR_DB)
        } else {
            f64::NEG_INFINITY
        };

        Ok(SyncResult {
            detected: metric >= self.threshold,
            t_offset,
            cfo_hz: cfo,
            snr_db,
            peak_metric: metric,
        })
    }

    /// Largest `|sum r[n] p*[n] exp(-j 2 pi f n / fs)|^2` over `|f| <= range`.
    fn max_over_cfo(&mut self, window: &[Complex64], fs: f64, range: f64) -> (f64, f64) {
        let mut buf = vec![Complex64::new(0.0, 0.0); CFO_FFT_LEN];
        for (b, (r, p)) in buf.iter_mut().zip(window.iter().zip(&self.preamble)) {
            *b = r * p.conj();
        }
        self.planner.plan_fft_forward(CFO_FFT_LEN).process(&mut buf);
        let max_bin = (range / fs * CFO_FFT_LEN as f64).floor() as i64;
        let mut best = (0.0, 0.0);
        for k in -max_bin..=max_bin {
            let idx = k.rem_euclid(CFO_FFT_LEN as i64) as usize;
            let p = buf[idx].norm_sqr();
            if p > best.0 {
                best = (p, k as f64 * fs / CFO_FFT_LEN as f64);
            }
        }
        best
    }

    fn correlate(&self, window: &[Complex64], cfo: f64, fs: f64) -> Complex64 {
        window
            .iter()
            .zip(&self.preamble)
            .enumerate()
            .map(|(n, (r, p))| r * p.conj() * Complex64::from_polar(1.0, -2.0 * PI * cfo * n as f64 / fs))
            .sum()
    }

    /// Least-squares phase slope over chunks of the de-rotated preamble.
    fn refine_cfo(&self, window: &[Complex64], start: f64, fs: f64) -> f64 {
        let phasors: Vec<(f64, Complex64)> = window
            .chunks(SLOPE_CHUNK)
            .zip(self.preamble.chunks(SLOPE_CHUNK))
            .enumerate()
            .map(|(c, (rw, pw))| {
                let base = c * SLOPE_CHUNK;
                let sum: Complex64 = rw
                    .iter()
                    .zip(pw)
                    .enumerate()
                    .map(|(i, (r, p))| {
                        let n = (base + i) as f64;
                        r * p.conj() * Complex64::from_polar(1.0, -2.0 * PI * start * n / fs)
                    })
                    .sum();
                let centre = base as f64 + (rw.len() as f64 - 1.0) / 2.0;
                (centre, sum)
            })
            .collect();

        // Residual offset after `start` keeps chunk-to-chunk steps inside +/- pi.
        let mut phases = Vec::with_capacity(phasors.len());
        let mut acc = phasors[0].1.arg();
        phases.push(acc);
        for w in phasors.windows(2) {
            acc += (w[1].1 * w[0].1.conj()).arg();
            phases.push(acc);
        }
        let weights: Vec<f64> = phasors.iter().map(|(_, s)| s.norm()).collect();
        let wsum: f64 = weights.iter().sum();
        if wsum == 0.0 {
            return start;
        }
        let mean_t = phasors.iter().zip(&weights).map(|((t, _), w)| t * w).sum::<f64>() / wsum;
        let mean_p = phases.iter().zip(&weights).map(|(p, w)| p * w).sum::<f64>() / wsum;
        let mut num = 0.0;
        let mut den = 0.0;
        for (((t, _), p), w) in phasors.iter().zip(&phases).zip(&weights) {
            num += w * (t - mean_t) * (p - mean_p);
            den += w * (t - mean_t) * (t - mean_t);
        }
        if den == 0.0 {
            return start;
        }
        start + num / den * fs / (2.0 * PI)
    }
}

/// Up to `count` local maxima, each suppressing `+/- guard` around it.
fn top_peaks(metric: &[f64], count: usize, guard: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..metric.len()).collect();
    order.sort_by(|&a, &b| metric[b].total_cmp(&metric[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for i in order {
        if picked.len() == count {
            break;
        }
        if picked.iter().all(|&p| p.abs_diff(i) > guard) {
            picked.push(i);
        }
    }
    picked
}

pub fn detect_preamble(rec: &IqRecord, cfg: &PreambleConfig, threshold: f64) -> Result<SyncResult> {
    Synchronizer::new(cfg, threshold)?.detect(&rec.samples, rec.sample_rate)
}

/// Preamble-region power against a noise floor measured in the quiet guard
/// preceding the preamble. Falls back to the correlation-based estimate
/// carried in `sync` when fewer than 64 guard samples exist.
pub fn estimate_snr(rec: &IqRecord, sync: &SyncResult, cfg: &PreambleConfig) -> Result<f64> {
    if !sync.detected {
        return Err(Error::RequiresDetection);
    }
    cfg.validate()?;
    let start = sync.t_offset;
    let end = (start + PREAMBLE_LEN).min(rec.len());
    let guard = start.min(1024);
    if guard < 64 || end <= start {
        return Ok(sync.snr_db);
    }
    let noise = mean_power(&rec.samples[start - guard..start]);
    let total = mean_power(&rec.samples[start..end]);
    if noise == 0.0 {
        return Ok(MAX_SNR_DB);
    }
    let snr = (total - noise) / noise;
    Ok(if snr > 0.0 {
        (10.0 * snr.log10()).min(MAX_SNR_DB)
    } else {
        f64::NEG_INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_fills_preamble() {
        let cfg = PreambleConfig::default();
        cfg.validate().unwrap();
        assert_eq!(build_preamble(&cfg).unwrap().len(), PREAMBLE_LEN);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let cfg = PreambleConfig {
            len_long: 420,
            ..Default::default()
        };
        assert!(matches!(build_preamble(&cfg), Err(Error::ConfigLengthError(_))));
    }

    #[test]
    fn non_coprime_root_is_rejected() {
        assert!(matches!(zc_sequence(4, 8), Err(Error::InvalidRoot { .. })));
        assert!(matches!(zc_sequence(61, 61), Err(Error::InvalidRoot { .. })));
        let cfg = PreambleConfig {
            root_short: 122,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidRoot { .. })));
    }

    #[test]
    fn short_mseq_is_rejected() {
        let cfg = PreambleConfig {
            mseq_taps: vec![3, 2],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::ConfigLengthError(_))));
    }

    #[test]
    fn m_sequence_is_maximal() {
        let seq = m_sequence(&[4, 3]);
        assert_eq!(seq.len(), 15);
        // Balance property: one more -1 (bit 1) than +1.
        let ones = seq.iter().filter(|&&c| c < 0.0).count();
        assert_eq!(ones, 8);
        // Two-valued periodic autocorrelation.
        for lag in 1..15 {
            let r: f64 = (0..15).map(|i| seq[i] * seq[(i + lag) % 15]).sum();
            assert_eq!(r, -1.0, "lag {lag}");
        }
    }

    #[test]
    fn unit_chips_make_short_section_periodic() {
        let cfg = PreambleConfig::default();
        let p = build_with_chips(&cfg, &vec![1.0; cfg.n_short]);
        let ls = cfg.len_short;
        for i in 0..(cfg.n_short - 1) * ls {
            assert!((p[i] - p[i + ls]).norm() < 1e-12);
        }
    }

    #[test]
    fn preamble_has_unit_rms() {
        let p = build_preamble(&PreambleConfig::default()).unwrap();
        assert!((mean_power(&p).sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_short_record_is_an_error() {
        let rec = IqRecord::zeros(PREAMBLE_LEN, 20e6);
        assert!(matches!(
            detect_preamble(&rec, &PreambleConfig::default(), DEFAULT_THRESHOLD),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn estimate_snr_requires_detection() {
        let rec = IqRecord::zeros(4000, 20e6);
        let sync = SyncResult {
            detected: false,
            t_offset: 0,
            cfo_hz: 0.0,
            snr_db: 0.0,
            peak_metric: 0.0,
        };
        assert!(matches!(
            estimate_snr(&rec, &sync, &PreambleConfig::default()),
            Err(Error::RequiresDetection)
        ));
    }

    #[test]
    fn peaks_are_separated() {
        let m = [0.0, 5.0, 4.9, 0.0, 0.0, 3.0, 0.0, 0.0, 1.0];
        assert_eq!(top_peaks(&m, 3, 2), vec![1, 5, 8]);
    }
}
