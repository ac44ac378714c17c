//! Physical transmission features from pixel boxes.
//!
//! With `I_f = (f2 - f1) / W` and `I_t = (t2 - t1) / H`:
//!
//! * bandwidth `b_w = (x_max - x_min) * I_f`
//! * centre `f_c = f1 + I_f * x_min + b_w / 2`
//! * frame duration `FD = (y_max - y_min) * I_t`
//! * idle channel time `CWT = (t2 - t1) - count * mean(FD)`
//! * inter-frame interval `FI = CWT / count`

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::annotate::{Alignment, BoundingBox, Detection};
use crate::error::{Error, Result};
use crate::spectro::SpectrogramAxes;
use crate::waveforms::{FrameSpec, TransmissionSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub bandwidth_hz: f64,
    pub center_hz: f64,
    pub duration_s: f64,
}

impl FrameFeatures {
    /// Ground truth taken straight from a frame specification.
    pub fn of_frame(frame: &FrameSpec) -> Self {
        Self {
            bandwidth_hz: frame.bandwidth,
            center_hz: frame.f_center,
            duration_s: frame.duration,
        }
    }
}

pub fn extract_box_features(bbox: &BoundingBox, axes: &SpectrogramAxes) -> Result<FrameFeatures> {
    if bbox.is_degenerate() {
        return Err(Error::DegenerateBox);
    }
    bbox.validate(axes)?;
    let i_f = axes.i_f();
    let i_t = axes.i_t();
    let bandwidth_hz = (bbox.x_max - bbox.x_min) as f64 * i_f;
    Ok(FrameFeatures {
        bandwidth_hz,
        center_hz: axes.f1 + i_f * (bbox.x_min - axes.x_min) as f64 + bandwidth_hz / 2.0,
        duration_s: (bbox.y_max - bbox.y_min) as f64 * i_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSetStats {
    pub frame_count: usize,
    /// Mean frame duration in seconds; 0 when there are no frames.
    pub mean_fd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetFeatures {
    pub stats: FrameSetStats,
    pub cwt_s: f64,
    /// Absent when no frames were found.
    pub fi_s: Option<f64>,
    /// Set when overlapping frames drove the idle time negative.
    pub cwt_clamped: bool,
}

/// Aggregate idle-time features from frame durations inside a window of
/// `span` seconds.
pub fn set_features_from_durations(durations: &[f64], span: f64) -> SetFeatures {
    let count = durations.len();
    let mean_fd = if count == 0 {
        0.0
    } else {
        durations.iter().sum::<f64>() / count as f64
    };
    let raw = span - count as f64 * mean_fd;
    let cwt_clamped = raw < 0.0;
    let cwt_s = raw.max(0.0);
    SetFeatures {
        stats: FrameSetStats {
            frame_count: count,
            mean_fd,
        },
        cwt_s,
        fi_s: (count > 0).then(|| cwt_s / count as f64),
        cwt_clamped,
    }
}

pub fn extract_set_features(boxes: &[BoundingBox], axes: &SpectrogramAxes) -> Result<SetFeatures> {
    let durations = boxes
        .iter()
        .map(|b| extract_box_features(b, axes).map(|f| f.duration_s))
        .collect::<Result<Vec<_>>>()?;
    let s = set_features_from_durations(&durations, axes.t2 - axes.t1);
    if s.cwt_clamped {
        log::warn!("frame durations exceed the window; idle time clamped to 0");
    }
    Ok(s)
}

/// Set features of the scheduled frames, with each duration clipped to the
/// spectrogram's time window.
pub fn truth_set_features(sched: &TransmissionSchedule, axes: &SpectrogramAxes, align: Alignment) -> SetFeatures {
    let durations: Vec<f64> = sched
        .frames
        .iter()
        .filter_map(|f| {
            let start = (f.t_start + align.offset_s).max(axes.t1);
            let end = (f.t_end() + align.offset_s).min(axes.t2);
            (end > start).then_some(end - start)
        })
        .collect();
    set_features_from_durations(&durations, axes.t2 - axes.t1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// Percent, or an absolute difference when `absolute` is set.
    pub value: f64,
    /// The reference was zero, so `value` is `|extracted - truth|`.
    pub absolute: bool,
}

impl Deviation {
    pub fn relative(extracted: f64, truth: f64, reference: f64) -> Self {
        let diff = (extracted - truth).abs();
        if reference == 0.0 {
            Self {
                value: diff,
                absolute: true,
            }
        } else {
            Self {
                value: diff / reference.abs() * 100.0,
                absolute: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDeviation {
    pub bandwidth: Deviation,
    /// Relative to the full band width.
    pub center: Deviation,
    pub duration: Deviation,
}

pub fn feature_deviation(extracted: &FrameFeatures, truth: &FrameFeatures, band_width: f64) -> FrameDeviation {
    FrameDeviation {
        bandwidth: Deviation::relative(extracted.bandwidth_hz, truth.bandwidth_hz, truth.bandwidth_hz),
        center: Deviation::relative(extracted.center_hz, truth.center_hz, band_width),
        duration: Deviation::relative(extracted.duration_s, truth.duration_s, truth.duration_s),
    }
}

/// `None` when either side has no FI.
pub fn fi_deviation(extracted: &SetFeatures, truth: &SetFeatures) -> Option<Deviation> {
    match (extracted.fi_s, truth.fi_s) {
        (Some(e), Some(t)) => Some(Deviation::relative(e, t, t)),
        _ => None,
    }
}

/// One CSV row: either a box (`kind = "box"`) or a per-image aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub image: String,
    pub kind: String,
    pub class: Option<String>,
    pub confidence: Option<f64>,
    pub x_min: Option<usize>,
    pub x_max: Option<usize>,
    pub y_min: Option<usize>,
    pub y_max: Option<usize>,
    pub bandwidth_hz: Option<f64>,
    pub center_hz: Option<f64>,
    pub duration_s: Option<f64>,
    pub frame_count: Option<usize>,
    pub mean_fd_s: Option<f64>,
    pub cwt_s: Option<f64>,
    pub fi_s: Option<f64>,
    pub cwt_clamped: Option<bool>,
}

pub fn feature_rows(image: &str, detections: &[Detection], axes: &SpectrogramAxes) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::with_capacity(detections.len() + 1);
    for d in detections {
        let f = extract_box_features(&d.bbox, axes)?;
        rows.push(FeatureRow {
            image: image.to_string(),
            kind: "box".into(),
            class: Some(d.bbox.class.name().to_string()),
            confidence: Some(d.confidence),
            x_min: Some(d.bbox.x_min),
            x_max: Some(d.bbox.x_max),
            y_min: Some(d.bbox.y_min),
            y_max: Some(d.bbox.y_max),
            bandwidth_hz: Some(f.bandwidth_hz),
            center_hz: Some(f.center_hz),
            duration_s: Some(f.duration_s),
            frame_count: None,
            mean_fd_s: None,
            cwt_s: None,
            fi_s: None,
            cwt_clamped: None,
        });
    }
    let boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
    let s = extract_set_features(&boxes, axes)?;
    rows.push(FeatureRow {
        image: image.to_string(),
        kind: "aggregate".into(),
        class: None,
        confidence: None,
        x_min: None,
        x_max: None,
        y_min: None,
        y_max: None,
        bandwidth_hz: None,
        center_hz: None,
        duration_s: None,
        frame_count: Some(s.stats.frame_count),
        mean_fd_s: Some(s.stats.mean_fd),
        cwt_s: Some(s.cwt_s),
        fi_s: s.fi_s,
        cwt_clamped: Some(s.cwt_clamped),
    });
    Ok(rows)
}

pub fn write_feature_csv<W: Write>(out: W, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(())
}
