//! Scene generators: transmission schedules and loopback transmit buffers.

use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{PipelineConfig, SceneConfig};
use super::grid::{get_f64, Params};
use crate::error::{Error, Result};
use crate::iq::IqRecord;
use crate::sync::build_preamble;
use crate::waveforms::{render_schedule, FrameSpec, RatClass, TransmissionSchedule};
use crate::detect::DEFAULT_DURATION_CUT_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    /// Back-to-back LTE-like and WiFi-like frames at random positions.
    Mixed,
    /// One emitter repeating a frame at a fixed interval.
    Periodic,
    /// A periodic LTE-like emitter plus a WiFi-like interferer overlapping
    /// it in frequency.
    Interference,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(SceneKind::Mixed),
            "periodic" => Ok(SceneKind::Periodic),
            "interference" => Ok(SceneKind::Interference),
            other => Err(Error::Config(format!("unknown scene `{other}`"))),
        }
    }
}

impl SceneKind {
    pub fn from_params(params: &Params) -> Result<Self> {
        params
            .get("scene")
            .and_then(Value::as_str)
            .map_or(Ok(SceneKind::Mixed), str::parse)
    }
}

/// Sample positions inside a transmit buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLayout {
    pub preamble_start: usize,
    pub preamble_len: usize,
    pub gap: usize,
    pub payload_start: usize,
    pub payload_len: usize,
    pub total: usize,
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn pick(rng: &mut ChaCha8Rng, values: &[f64]) -> f64 {
    values[rng.random_range(0..values.len())]
}

fn center_for(rng: &mut ChaCha8Rng, band_width: f64, bandwidth: f64, fixed: Option<f64>) -> f64 {
    fixed.unwrap_or_else(|| uniform(rng, [bandwidth / 2.0, band_width - bandwidth / 2.0]))
}

fn class_for_duration(duration: f64) -> RatClass {
    if duration < DEFAULT_DURATION_CUT_S {
        RatClass::Wifi
    } else {
        RatClass::Lte
    }
}

struct FrameDraft {
    class: RatClass,
    t_start: f64,
    duration: f64,
    f_center: f64,
    bandwidth: f64,
    power_db: f64,
    emitter: u32,
}

fn push(sched: &mut TransmissionSchedule, rng: &mut ChaCha8Rng, d: FrameDraft) {
    sched.frames.push(FrameSpec {
        class: d.class,
        t_start: d.t_start,
        duration: d.duration,
        f_center: d.f_center,
        bandwidth: d.bandwidth,
        power_db: d.power_db,
        seed: rng.random(),
        emitter: d.emitter,
    });
}

/// Frame start times snap to the sample grid so that rendering and ground
/// truth agree exactly.
fn snap(t: f64, fs: f64) -> f64 {
    (t * fs).round() / fs
}

fn periodic_train(
    sched: &mut TransmissionSchedule,
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    draft: FrameDraft,
    interval: f64,
) {
    let fs = sched.sample_rate;
    let end = cfg.span_s - cfg.edge_margin_s;
    let duration = snap(draft.duration, fs);
    let mut t = snap(cfg.edge_margin_s + uniform(rng, [0.0, interval]), fs);
    while t + duration <= end {
        push(sched, rng, FrameDraft { t_start: t, duration, ..draft });
        t = snap(t + duration + interval, fs);
    }
}

/// Builds the payload schedule of one scene.
pub fn build_schedule(cfg: &SceneConfig, params: &Params, seed: u64) -> Result<TransmissionSchedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sched = TransmissionSchedule::new(cfg.band_width_hz, cfg.span_s);
    let fs = sched.sample_rate;
    let bw_fixed = get_f64(params, "bandwidth_hz");
    let fd_fixed = get_f64(params, "frame_duration_s");
    let fi_fixed = get_f64(params, "frame_interval_s");
    let fc_fixed = get_f64(params, "f_center_hz");

    match SceneKind::from_params(params)? {
        SceneKind::Mixed => {
            let end = cfg.span_s - cfg.edge_margin_s;
            let mut t = snap(cfg.edge_margin_s + uniform(&mut rng, [0.0, cfg.gap_s[1]]), fs);
            loop {
                let class = if rng.random_bool(0.5) { RatClass::Lte } else { RatClass::Wifi };
                let (durations, bandwidths) = match class {
                    RatClass::Lte => (cfg.lte_duration_s, &cfg.lte_bandwidths_hz),
                    _ => (cfg.wifi_duration_s, &cfg.wifi_bandwidths_hz),
                };
                let duration = snap(fd_fixed.unwrap_or_else(|| uniform(&mut rng, durations)), fs);
                let bandwidth = bw_fixed.unwrap_or_else(|| pick(&mut rng, bandwidths));
                let f_center = center_for(&mut rng, cfg.band_width_hz, bandwidth, fc_fixed);
                let gap = fi_fixed.unwrap_or_else(|| uniform(&mut rng, cfg.gap_s));
                if t + duration > end {
                    break;
                }
                push(
                    &mut sched,
                    &mut rng,
                    FrameDraft { class, t_start: t, duration, f_center, bandwidth, power_db: 0.0, emitter: 0 },
                );
                t = snap(t + duration + gap, fs);
            }
        }
        SceneKind::Periodic => {
            let duration = fd_fixed.unwrap_or(cfg.periodic_duration_s);
            let bandwidth = bw_fixed.unwrap_or(cfg.periodic_bandwidth_hz);
            let interval = fi_fixed.unwrap_or(cfg.periodic_interval_s);
            let f_center = center_for(&mut rng, cfg.band_width_hz, bandwidth, fc_fixed);
            let draft = FrameDraft {
                class: class_for_duration(duration),
                t_start: 0.0,
                duration,
                f_center,
                bandwidth,
                power_db: 0.0,
                emitter: 0,
            };
            periodic_train(&mut sched, &mut rng, cfg, draft, interval);
        }
        SceneKind::Interference => {
            let duration = fd_fixed.unwrap_or(cfg.periodic_duration_s);
            let draft = FrameDraft {
                class: RatClass::Lte,
                t_start: 0.0,
                duration,
                f_center: fc_fixed.unwrap_or(cfg.desired_center_hz),
                bandwidth: bw_fixed.unwrap_or(cfg.desired_bandwidth_hz),
                power_db: 0.0,
                emitter: 1,
            };
            periodic_train(&mut sched, &mut rng, cfg, draft, fi_fixed.unwrap_or(cfg.periodic_interval_s));

            let interferer_snr = get_f64(params, "interferer_snr_db").unwrap_or(cfg.reference_snr_db);
            let power_db = interferer_snr - cfg.reference_snr_db;
            let end = cfg.span_s - cfg.edge_margin_s;
            let mut t = snap(cfg.edge_margin_s + uniform(&mut rng, [0.0, cfg.gap_s[1]]), fs);
            loop {
                let duration = snap(uniform(&mut rng, cfg.wifi_duration_s), fs);
                let gap = uniform(&mut rng, cfg.gap_s);
                if t + duration > end {
                    break;
                }
                push(
                    &mut sched,
                    &mut rng,
                    FrameDraft {
                        class: RatClass::Wifi,
                        t_start: t,
                        duration,
                        f_center: cfg.interferer_center_hz,
                        bandwidth: cfg.interferer_bandwidth_hz,
                        power_db,
                        emitter: 2,
                    },
                );
                t = snap(t + duration + gap, fs);
            }
        }
    }
    sched.validate()?;
    Ok(sched)
}

/// The payload schedule wrapped in a transmit buffer: a random lead of
/// silence, a guard interval, the sync preamble, a gap, the payload and a
/// tail.
pub fn build_transmission(
    cfg: &PipelineConfig,
    params: &Params,
    seed: u64,
) -> Result<(TransmissionSchedule, TxLayout, IqRecord)> {
    let sched = build_schedule(&cfg.scene, params, seed)?;
    let payload = render_schedule(&sched)?;
    let preamble = build_preamble(&cfg.preamble)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1ead);
    let lead = rng.random_range(0..=cfg.scene.lead_max);
    let s = &cfg.scene;
    let preamble_start = lead + s.guard;
    let payload_start = preamble_start + preamble.len() + s.gap;
    let layout = TxLayout {
        preamble_start,
        preamble_len: preamble.len(),
        gap: s.gap,
        payload_start,
        payload_len: payload.len(),
        total: payload_start + payload.len() + s.tail,
    };
    let mut samples = vec![Complex64::new(0.0, 0.0); layout.total];
    samples[preamble_start..preamble_start + preamble.len()].copy_from_slice(&preamble);
    samples[payload_start..payload_start + payload.len()].copy_from_slice(&payload.samples);
    let mut rec = IqRecord::new(samples, sched.sample_rate);
    rec.meta = payload.meta;
    rec.meta.insert("layout".into(), serde_json::to_value(layout)?);
    Ok((sched, layout, rec))
}
