//! Pixel-space ground truth and annotation file formats.
//!
//! Boxes are 0-based and half-open: a box covers columns `x_min..x_max`
//! (frequency) and rows `y_min..y_max` (time). The VOC converter owns the
//! shift to 1-based inclusive coordinates.

mod manifest;
mod predictions;
mod voc;

pub use manifest::{DatasetManifest, ManifestEntry};
pub use predictions::{
    export_predictions, import_predictions, parse_predictions, predictions_to_jsonl, PredictionRecord,
    PredictionSet, RejectedRecord,
};
pub use voc::{export_voc, import_voc, VocAnnotation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectro::SpectrogramAxes;
use crate::sync::SyncResult;
use crate::waveforms::{RatClass, TransmissionSchedule};

/// Slack for values that land on a pixel edge up to rounding error.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub x_max: usize,
    pub y_min: usize,
    pub y_max: usize,
    pub class: RatClass,
}

impl BoundingBox {
    pub fn new(x_min: usize, x_max: usize, y_min: usize, y_max: usize, class: RatClass) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
            class,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> usize {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.x_max <= self.x_min || self.y_max <= self.y_min
    }

    pub fn fits(&self, axes: &SpectrogramAxes) -> bool {
        !self.is_degenerate()
            && self.x_min >= axes.x_min
            && self.x_max <= axes.x_max
            && self.y_min >= axes.y_min
            && self.y_max <= axes.y_max
    }

    pub fn validate(&self, axes: &SpectrogramAxes) -> Result<()> {
        if self.is_degenerate() {
            return Err(Error::DegenerateBox);
        }
        if !self.fits(axes) {
            return Err(Error::InvalidBox(format!(
                "{self:?} outside x {}..{} y {}..{}",
                axes.x_min, axes.x_max, axes.y_min, axes.y_max
            )));
        }
        Ok(())
    }

    pub fn with_class(mut self, class: RatClass) -> Self {
        self.class = class;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Self {
        Self { bbox, confidence }
    }
}

/// Time offset between schedule time zero and the spectrogram's time zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub offset_s: f64,
}

impl Alignment {
    /// Loopback without cropping: schedule and receive times coincide.
    pub fn identity() -> Self {
        Self { offset_s: 0.0 }
    }

    /// Schedule time zero sits `payload_delay` samples after the detected
    /// preamble start.
    pub fn from_sync(sync: &SyncResult, payload_delay: usize, sample_rate: f64) -> Result<Self> {
        if !sync.detected {
            return Err(Error::RequiresDetection);
        }
        Ok(Self {
            offset_s: (sync.t_offset + payload_delay) as f64 / sample_rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub boxes: Vec<BoundingBox>,
    /// Index into the schedule's frame list for each box.
    pub frame_index: Vec<usize>,
    /// Frames that fell entirely outside the axes.
    pub dropped: usize,
}

fn floor_px(v: f64) -> i64 {
    (v + EDGE_EPS).floor() as i64
}

fn ceil_px(v: f64) -> i64 {
    (v - EDGE_EPS).ceil() as i64
}

/// Outward-rounded pixel rectangle of every scheduled frame, clipped to the
/// axes.
pub fn ground_truth_boxes(
    sched: &TransmissionSchedule,
    axes: &SpectrogramAxes,
    align: Alignment,
) -> Result<GroundTruth> {
    axes.validate()?;
    let w = axes.width() as f64;
    let h = axes.height() as f64;
    // Positions in pixels, computed as ratios to avoid dividing by I_f.
    let col = |f: f64| (f - axes.f1) * w / (axes.f2 - axes.f1);
    let row = |t: f64| (t - axes.t1) * h / (axes.t2 - axes.t1);

    let mut out = GroundTruth {
        boxes: Vec::new(),
        frame_index: Vec::new(),
        dropped: 0,
    };
    for (i, frame) in sched.frames.iter().enumerate() {
        let x0 = floor_px(col(frame.f_center - frame.bandwidth / 2.0));
        let x1 = ceil_px(col(frame.f_center + frame.bandwidth / 2.0));
        let y0 = floor_px(row(frame.t_start + align.offset_s));
        let y1 = ceil_px(row(frame.t_end() + align.offset_s));
        let clip_x = |v: i64| v.clamp(0, w as i64) as usize + axes.x_min;
        let clip_y = |v: i64| v.clamp(0, h as i64) as usize + axes.y_min;
        let b = BoundingBox::new(clip_x(x0), clip_x(x1), clip_y(y0), clip_y(y1), frame.class);
        if b.is_degenerate() {
            log::warn!("frame {i} lies outside the spectrogram and was dropped");
            out.dropped += 1;
            continue;
        }
        out.boxes.push(b);
        out.frame_index.push(i);
    }
    Ok(out)
}
