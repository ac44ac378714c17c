//! OFDM-parameterised LTE-like and WiFi-like frame synthesis.
//!
//! Frames are built from random QPSK OFDM symbols with a cyclic prefix,
//! band-limited to their nominal occupied bandwidth and normalised to the
//! requested RMS power. A [`TransmissionSchedule`] places frames in a band
//! whose width equals the complex sample rate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iq::IqRecord;

/// Radio access technology label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatClass {
    Lte,
    Wifi,
    /// Assigned by the detector when no classification rule matches.
    Unknown,
}

impl RatClass {
    pub const KNOWN: [RatClass; 2] = [RatClass::Lte, RatClass::Wifi];

    pub fn name(self) -> &'static str {
        match self {
            RatClass::Lte => "lte",
            RatClass::Wifi => "wifi",
            RatClass::Unknown => "unknown",
        }
    }
}

impl fmt::Display for RatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RatClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lte" => Ok(RatClass::Lte),
            "wifi" => Ok(RatClass::Wifi),
            "unknown" => Ok(RatClass::Unknown),
            other => Err(Error::InvalidSpec(format!("unknown RAT class `{other}`"))),
        }
    }
}

/// OFDM numerology used to mimic a RAT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmProfile {
    pub subcarrier_spacing: f64,
    pub cyclic_prefix: f64,
    /// Duration and linear amplitude factor of a preamble-like boost at the
    /// start of the frame.
    pub boost: Option<(f64, f64)>,
}

impl OfdmProfile {
    pub fn for_class(class: RatClass) -> Result<Self> {
        match class {
            RatClass::Lte => Ok(OfdmProfile {
                subcarrier_spacing: 15e3,
                cyclic_prefix: 4.6875e-6,
                boost: None,
            }),
            RatClass::Wifi => Ok(OfdmProfile {
                subcarrier_spacing: 312.5e3,
                cyclic_prefix: 0.8e-6,
                boost: Some((16e-6, std::f64::consts::SQRT_2)),
            }),
            RatClass::Unknown => Err(Error::InvalidSpec(
                "cannot synthesise a frame of unknown class".into(),
            )),
        }
    }
}

/// Ground truth for one transmitted frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub class: RatClass,
    /// Seconds from the start of the schedule.
    pub t_start: f64,
    /// Frame duration in seconds.
    pub duration: f64,
    /// Centre frequency in Hz relative to the band start.
    pub f_center: f64,
    /// Occupied bandwidth in Hz.
    pub bandwidth: f64,
    /// RMS power in dB relative to unit amplitude.
    #[serde(default)]
    pub power_db: f64,
    pub seed: u64,
    /// Emitter identifier; frames of one emitter never overlap in time.
    #[serde(default)]
    pub emitter: u32,
}

impl FrameSpec {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    fn check_shape(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.t_start >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "t_start must be non-negative, got {}",
                self.t_start
            )));
        }
        Ok(())
    }

    /// Checks the frame against a band `[0, band_width]`.
    pub fn validate(&self, band_width: f64) -> Result<()> {
        self.check_shape()?;
        if self.bandwidth > band_width {
            return Err(Error::BandExceeded {
                bandwidth: self.bandwidth,
                sample_rate: band_width,
            });
        }
        let lo = self.f_center - self.bandwidth / 2.0;
        let hi = self.f_center + self.bandwidth / 2.0;
        // Allow for decimal round-off in configs such as 2.5 MHz +/- 2.5 MHz.
        let slack = band_width * 1e-9;
        if lo < -slack || hi > band_width + slack {
            return Err(Error::InvalidSpec(format!(
                "frame occupies [{lo}, {hi}] Hz outside band [0, {band_width}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSchedule {
    pub band_width: f64,
    pub sample_rate: f64,
    /// Seconds.
    pub span: f64,
    pub frames: Vec<FrameSpec>,
}

impl TransmissionSchedule {
    pub fn new(band_width: f64, span: f64) -> Self {
        Self {
            band_width,
            sample_rate: band_width,
            span,
            frames: Vec::new(),
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.span * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0) {
            return Err(Error::InvalidSpec(format!("span must be positive, got {}", self.span)));
        }
        if self.sample_rate != self.band_width {
            return Err(Error::InvalidSpec(
                "sample rate must equal band width for complex baseband".into(),
            ));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate(self.band_width)?;
            if f.t_end() > self.span + 0.5 / self.sample_rate {
                return Err(Error::FrameOutOfSpan { index: i });
            }
        }
        for (i, a) in self.frames.iter().enumerate() {
            for b in &self.frames[i + 1..] {
                if a.emitter == b.emitter && a.t_start < b.t_end() && b.t_start < a.t_end() {
                    return Err(Error::InvalidSpec(format!(
                        "emitter {} transmits overlapping frames",
                        a.emitter
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schedule serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Synthesises one frame centred at DC.
///
/// The result holds `round(duration * sample_rate)` samples whose RMS is
/// exactly `10^(power_db / 20)`.
pub fn synth_ofdm_frame(spec: &FrameSpec, sample_rate: f64) -> Result<IqRecord> {
    spec.check_shape()?;
    if spec.bandwidth > sample_rate {
        return Err(Error::BandExceeded {
            bandwidth: spec.bandwidth,
            sample_rate,
        });
    }
    let profile = OfdmProfile::for_class(spec.class)?;
    let len = (spec.duration * sample_rate).round() as usize;
    if len == 0 {
        return Err(Error::InvalidSpec("frame shorter than one sample".into()));
    }

    let nfft = ((sample_rate / profile.subcarrier_spacing).round() as usize).max(1);
    let spacing = sample_rate / nfft as f64;
    let used = ((spec.bandwidth / spacing).round() as usize).clamp(1, nfft);
    let cp = (profile.cyclic_prefix * sample_rate).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nfft);
    let scale = 1.0 / (nfft as f64).sqrt();
    let amp = std::f64::consts::FRAC_1_SQRT_2;

    let mut out = Vec::with_capacity(len + nfft + cp);
    let mut symbol = vec![Complex64::new(0.0, 0.0); nfft];
    while out.len() < len {
        symbol.iter_mut().for_each(|s| *s = Complex64::new(0.0, 0.0));
        for k in 0..used {
            let offset = k as i64 - (used / 2) as i64;
            let idx = offset.rem_euclid(nfft as i64) as usize;
            let re = if rng.random::<bool>() { amp } else { -amp };
            let im = if rng.random::<bool>() { amp } else { -amp };
            symbol[idx] = Complex64::new(re, im);
        }
        ifft.process(&mut symbol);
        out.extend(symbol[nfft - cp.min(nfft)..].iter().map(|s| s * scale));
        out.extend(symbol.iter().map(|s| s * scale));
    }
    out.truncate(len);

    // An even subcarrier count sits half a spacing below DC.
    if used.is_multiple_of(2) {
        rotate(&mut out, spacing / 2.0, sample_rate);
    }

    if let Some((dur, gain)) = profile.boost {
        let n = ((dur * sample_rate).round() as usize).min(len);
        out[..n].iter_mut().for_each(|s| *s *= gain);
    }

    if spec.bandwidth < sample_rate {
        band_limit(&mut out, spec.bandwidth / 2.0, sample_rate, &mut planner);
    }

    let rms = crate::iq::mean_power(&out).sqrt();
    if rms > 0.0 {
        let target = 10f64.powf(spec.power_db / 20.0);
        out.iter_mut().for_each(|s| *s *= target / rms);
    }

    Ok(IqRecord::new(out, sample_rate)
        .with_meta("class", Value::from(spec.class.name()))
        .with_meta("seed", Value::from(spec.seed)))
}

/// Circular brick-wall low-pass keeping `|f| <= cutoff`.
fn band_limit(x: &mut [Complex64], cutoff: f64, sample_rate: f64, planner: &mut FftPlanner<f64>) {
    let n = x.len();
    planner.plan_fft_forward(n).process(x);
    for (k, v) in x.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64 * sample_rate / n as f64
        } else {
            (k as f64 - n as f64) * sample_rate / n as f64
        };
        if f.abs() > cutoff {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(x);
    let inv = 1.0 / n as f64;
    x.iter_mut().for_each(|v| *v *= inv);
}

/// Multiplies `x[n]` by `exp(j 2 pi offset n / fs)`.
pub(crate) fn rotate(x: &mut [Complex64], offset: f64, sample_rate: f64) {
    if offset == 0.0 {
        return;
    }
    let step = offset / sample_rate;
    for (n, v) in x.iter_mut().enumerate() {
        let cycles = (step * n as f64).fract();
        *v *= Complex64::from_polar(1.0, 2.0 * PI * cycles);
    }
}

/// Renders every frame of `sched` into one record.
///
/// Frames are shifted from DC to their centre frequency and summed in list
/// order; samples not covered by any frame are exactly zero.
pub fn render_schedule(sched: &TransmissionSchedule) -> Result<IqRecord> {
    sched.validate()?;
    let total = sched.num_samples();
    let mut samples = vec![Complex64::new(0.0, 0.0); total];
    for (i, frame) in sched.frames.iter().enumerate() {
        let mut rec = synth_ofdm_frame(frame, sched.sample_rate)?;
        let start = (frame.t_start * sched.sample_rate).round() as usize;
        if start + rec.len() > total {
            return Err(Error::FrameOutOfSpan { index: i });
        }
        rotate(
            &mut rec.samples,
            frame.f_center - sched.band_width / 2.0,
            sched.sample_rate,
        );
        for (dst, src) in samples[start..start + rec.len()].iter_mut().zip(&rec.samples) {
            *dst += *src;
        }
    }
    Ok(IqRecord::new(samples, sched.sample_rate)
        .with_meta("schedule_hash", Value::from(sched.hash()))
        .with_meta("schedule", serde_json::to_value(sched)?))
}
