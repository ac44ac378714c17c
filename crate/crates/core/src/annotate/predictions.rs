use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Detection};
use crate::error::{Error, Result};
use crate::waveforms::RatClass;

/// One line of a predictions JSONL file. Coordinates are 0-based, half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image: String,
    pub class: RatClass,
    pub confidence: f64,
    pub x_min: i64,
    pub x_max: i64,
    pub y_min: i64,
    pub y_max: i64,
}

impl PredictionRecord {
    pub fn from_detection(image: &str, det: &Detection) -> Self {
        Self {
            image: image.to_string(),
            class: det.bbox.class,
            confidence: det.confidence,
            x_min: det.bbox.x_min as i64,
            x_max: det.bbox.x_max as i64,
            y_min: det.bbox.y_min as i64,
            y_max: det.bbox.y_max as i64,
        }
    }

    /// `limits` is `(width, height)` of the images, when known.
    pub fn to_detection(&self, limits: Option<(usize, usize)>) -> std::result::Result<Detection, String> {
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if self.x_min < 0 || self.y_min < 0 {
            return Err("negative coordinate".into());
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(format!(
                "empty box x {}..{} y {}..{}",
                self.x_min, self.x_max, self.y_min, self.y_max
            ));
        }
        if let Some((w, h)) = limits {
            if self.x_max as usize > w || self.y_max as usize > h {
                return Err(format!("box exceeds {w}x{h} image"));
            }
        }
        let bbox = BoundingBox::new(
            self.x_min as usize,
            self.x_max as usize,
            self.y_min as usize,
            self.y_max as usize,
            self.class,
        );
        Ok(Detection::new(bbox, self.confidence))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRecord {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    /// Detections per image id, in file order.
    pub by_image: BTreeMap<String, Vec<Detection>>,
    pub rejected: Vec<RejectedRecord>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses JSONL text. Invalid lines are collected, not fatal.
pub fn parse_predictions(text: &str, limits: Option<(usize, usize)>) -> PredictionSet {
    let mut set = PredictionSet::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<PredictionRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.to_detection(limits).map(|d| (r.image, d)));
        match parsed {
            Ok((image, det)) => set.by_image.entry(image).or_default().push(det),
            Err(reason) => set.rejected.push(RejectedRecord { line: i + 1, reason }),
        }
    }
    set
}

pub fn import_predictions(path: &Path, limits: Option<(usize, usize)>) -> Result<PredictionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set = parse_predictions(&text, limits);
    for r in &set.rejected {
        log::warn!("{}:{}: rejected prediction: {}", path.display(), r.line, r.reason);
    }
    Ok(set)
}

pub fn predictions_to_jsonl(items: &[(String, Detection)]) -> Result<String> {
    let mut out = String::new();
    for (image, det) in items {
        out.push_str(&serde_json::to_string(&PredictionRecord::from_detection(image, det))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn export_predictions(path: &Path, items: &[(String, Detection)]) -> Result<()> {
    fs::write(path, predictions_to_jsonl(items)?).map_err(|e| Error::io(path, e))
}
