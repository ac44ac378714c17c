//! Energy-threshold baseline detector.
//!
//! Pixels more than `threshold_db_above_floor` above the robust noise floor
//! form a mask whose 4-connected components become boxes. Box edges are then
//! pulled to the half-power points of the noise-subtracted row and column
//! profiles, and a small ordered rule list assigns a class.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::annotate::{BoundingBox, Detection};
use crate::error::{Error, Result};
use crate::spectro::Spectrogram;
use crate::waveforms::RatClass;

/// Extra pixels searched on each side of a box during edge refinement.
const REFINE_MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFeature {
    DurationS,
    BandwidthHz,
    Flatness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Ge,
    Lt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub feature: BoxFeature,
    pub op: Comparison,
    pub threshold: f64,
    pub class: RatClass,
}

impl ClassRule {
    pub fn new(feature: BoxFeature, op: Comparison, threshold: f64, class: RatClass) -> Self {
        Self {
            feature,
            op,
            threshold,
            class,
        }
    }

    fn matches(&self, value: f64) -> bool {
        match self.op {
            Comparison::Ge => value >= self.threshold,
            Comparison::Lt => value < self.threshold,
        }
    }

    /// Distance from the threshold relative to the threshold, mapped to
    /// `[0.5, 1]`.
    fn confidence(&self, value: f64) -> f64 {
        let scale = if self.threshold != 0.0 { self.threshold.abs() } else { 1.0 };
        0.5 + 0.5 * ((value - self.threshold).abs() / scale).min(1.0)
    }
}

/// Frame duration separating the generator's WiFi-like and LTE-like frames.
pub const DEFAULT_DURATION_CUT_S: f64 = 3.9e-3;

pub fn default_rules() -> Vec<ClassRule> {
    vec![
        ClassRule::new(BoxFeature::DurationS, Comparison::Ge, DEFAULT_DURATION_CUT_S, RatClass::Lte),
        ClassRule::new(BoxFeature::DurationS, Comparison::Lt, DEFAULT_DURATION_CUT_S, RatClass::Wifi),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub threshold_db_above_floor: f64,
    pub min_box_area: usize,
    /// Boxes narrower or shorter than this many pixels are dropped.
    pub min_side: usize,
    /// Boxes separated by fewer empty pixels than this are merged.
    pub merge_gap: usize,
    pub refine_edges: bool,
    pub rules: Vec<ClassRule>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold_db_above_floor: 2.0,
            min_box_area: 8,
            min_side: 2,
            merge_gap: 1,
            refine_edges: true,
            rules: default_rules(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_db_above_floor > 0.0) {
            return Err(Error::Config("detector threshold must be positive".into()));
        }
        if self.min_box_area < 1 {
            return Err(Error::Config("min_box_area must be at least 1".into()));
        }
        Ok(())
    }
}

/// Median of the lowest quartile of pixel values, in dB.
pub fn estimate_noise_floor(spec: &Spectrogram) -> f64 {
    if spec.power_db.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = spec.power_db.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let q = &v[..(v.len() / 4).max(1)];
    let n = q.len();
    if n % 2 == 1 {
        q[n / 2]
    } else {
        0.5 * (q[n / 2 - 1] + q[n / 2])
    }
}

fn mask(spec: &Spectrogram, level_db: f64) -> Vec<bool> {
    spec.power_db.iter().map(|&v| v as f64 >= level_db).collect()
}

/// Tight boxes around 4-connected components, in scan order of their first
/// pixel.
fn components(mask: &[bool], width: usize, height: usize) -> Vec<BoundingBox> {
    let mut seen = vec![false; mask.len()];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            x1 = x1.max(x + 1);
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        boxes.push(BoundingBox::new(x0, x1, y0, y1, RatClass::Unknown));
    }
    boxes
}

/// Empty pixels between two half-open intervals (0 when they touch or overlap).
fn interval_gap(a0: usize, a1: usize, b0: usize, b1: usize) -> usize {
    b0.saturating_sub(a1).max(a0.saturating_sub(b1))
}

fn merge_close(mut boxes: Vec<BoundingBox>, merge_gap: usize) -> Vec<BoundingBox> {
    loop {
        let mut merged = false;
        'outer: for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let (a, b) = (boxes[i], boxes[j]);
                let gap = interval_gap(a.x_min, a.x_max, b.x_min, b.x_max)
                    .max(interval_gap(a.y_min, a.y_max, b.y_min, b.y_max));
                if gap < merge_gap.max(1) {
                    boxes[i] = BoundingBox::new(
                        a.x_min.min(b.x_min),
                        a.x_max.max(b.x_max),
                        a.y_min.min(b.y_min),
                        a.y_max.max(b.y_max),
                        RatClass::Unknown,
                    );
                    boxes.remove(j);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return boxes;
        }
    }
}

/// Unclassified boxes around above-threshold regions.
pub fn segment(spec: &Spectrogram, cfg: &DetectorConfig) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    if spec.power_db.is_empty() {
        return Ok(Vec::new());
    }
    let level = estimate_noise_floor(spec) + cfg.threshold_db_above_floor;
    let m = mask(spec, level);
    let boxes = merge_close(components(&m, spec.width(), spec.height()), cfg.merge_gap);
    Ok(boxes
        .into_iter()
        .filter(|b| keep(b, cfg))
        .map(|b| offset(b, spec.axes.x_min, spec.axes.y_min))
        .collect())
}

fn keep(b: &BoundingBox, cfg: &DetectorConfig) -> bool {
    b.area() >= cfg.min_box_area && b.width().min(b.height()) >= cfg.min_side
}

fn offset(b: BoundingBox, dx: usize, dy: usize) -> BoundingBox {
    BoundingBox::new(b.x_min + dx, b.x_max + dx, b.y_min + dy, b.y_max + dy, b.class)
}

/// Contiguous run around the profile maximum staying at or above half the
/// noise-subtracted peak.
fn half_power_run(profile: &[f64], noise: f64) -> Option<(usize, usize)> {
    let (peak, max) = profile
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if !(max > noise) {
        return None;
    }
    let level = noise + 0.5 * (max - noise);
    let mut lo = peak;
    while lo > 0 && profile[lo - 1] >= level {
        lo -= 1;
    }
    let mut hi = peak + 1;
    while hi < profile.len() && profile[hi] >= level {
        hi += 1;
    }
    Some((lo, hi))
}

/// Window of `round(L)` rows maximising covered occupancy, where each row's
/// occupancy is its noise-subtracted power over the run's median power and
/// `L` is the summed occupancy of the half-power run and one row either
/// side. Rounding the total length once, instead of each edge separately,
/// halves the worst-case duration error.
fn occupancy_run(profile: &[f64], noise: f64) -> Option<(usize, usize)> {
    let (lo, hi) = half_power_run(profile, noise)?;
    let mut run: Vec<f64> = profile[lo..hi].iter().map(|v| v - noise).collect();
    run.sort_by(f64::total_cmp);
    let plateau = run[run.len() / 2];
    let (a, b) = (lo.saturating_sub(1), (hi + 1).min(profile.len()));
    let occ: Vec<f64> = profile[a..b].iter().map(|v| ((v - noise) / plateau).clamp(0.0, 1.0)).collect();
    let len = (occ.iter().sum::<f64>().round() as usize).clamp(1, occ.len());
    let mut best = (f64::NEG_INFINITY, 0);
    for start in 0..=occ.len() - len {
        let covered: f64 = occ[start..start + len].iter().sum();
        if covered > best.0 + 1e-12 {
            best = (covered, start);
        }
    }
    Some((a + best.1, a + best.1 + len))
}

/// Moves the frequency edges to the half-power points of the column profile
/// and fits the time edges to the row profile's occupancy.
/// `noise` is the mean linear power of background pixels.
pub fn refine_box(spec: &Spectrogram, bbox: &BoundingBox, noise: f64) -> BoundingBox {
    let (w, h) = (spec.width(), spec.height());
    let (bx0, bx1) = (bbox.x_min - spec.axes.x_min, bbox.x_max - spec.axes.x_min);
    let (by0, by1) = (bbox.y_min - spec.axes.y_min, bbox.y_max - spec.axes.y_min);
    let cx0 = bx0.saturating_sub(REFINE_MARGIN);
    let cx1 = (bx1 + REFINE_MARGIN).min(w);
    let cy0 = by0.saturating_sub(REFINE_MARGIN);
    let cy1 = (by1 + REFINE_MARGIN).min(h);

    let cols: Vec<f64> = (cx0..cx1)
        .map(|c| (by0..by1).map(|r| spec.linear(r, c)).sum::<f64>() / (by1 - by0) as f64)
        .collect();
    let rows: Vec<f64> = (cy0..cy1)
        .map(|r| (bx0..bx1).map(|c| spec.linear(r, c)).sum::<f64>() / (bx1 - bx0) as f64)
        .collect();
    match (half_power_run(&cols, noise), occupancy_run(&rows, noise)) {
        (Some((x0, x1)), Some((y0, y1))) => BoundingBox::new(
            cx0 + x0 + spec.axes.x_min,
            cx0 + x1 + spec.axes.x_min,
            cy0 + y0 + spec.axes.y_min,
            cy0 + y1 + spec.axes.y_min,
            bbox.class,
        ),
        _ => *bbox,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxFeatures {
    pub duration_s: f64,
    pub bandwidth_hz: f64,
    /// Geometric over arithmetic mean of the in-box column powers.
    pub flatness: f64,
}

impl BoxFeatures {
    pub fn get(&self, feature: BoxFeature) -> f64 {
        match feature {
            BoxFeature::DurationS => self.duration_s,
            BoxFeature::BandwidthHz => self.bandwidth_hz,
            BoxFeature::Flatness => self.flatness,
        }
    }
}

pub fn box_features(spec: &Spectrogram, bbox: &BoundingBox) -> Result<BoxFeatures> {
    bbox.validate(&spec.axes)?;
    let (x0, x1) = (bbox.x_min - spec.axes.x_min, bbox.x_max - spec.axes.x_min);
    let (y0, y1) = (bbox.y_min - spec.axes.y_min, bbox.y_max - spec.axes.y_min);
    let cols: Vec<f64> = (x0..x1)
        .map(|c| (y0..y1).map(|r| spec.linear(r, c)).sum::<f64>() / (y1 - y0) as f64)
        .collect();
    let mean = cols.iter().sum::<f64>() / cols.len() as f64;
    let log_mean = cols.iter().map(|v| v.max(1e-300).ln()).sum::<f64>() / cols.len() as f64;
    Ok(BoxFeatures {
        duration_s: bbox.height() as f64 * spec.axes.i_t(),
        bandwidth_hz: bbox.width() as f64 * spec.axes.i_f(),
        flatness: if mean > 0.0 { log_mean.exp() / mean } else { 0.0 },
    })
}

/// First matching rule wins; no match gives `Unknown` with confidence 0.
pub fn classify(spec: &Spectrogram, bbox: &BoundingBox, rules: &[ClassRule]) -> Result<(RatClass, f64)> {
    let features = box_features(spec, bbox)?;
    for rule in rules {
        let v = features.get(rule.feature);
        if rule.matches(v) {
            return Ok((rule.class, rule.confidence(v)));
        }
    }
    Ok((RatClass::Unknown, 0.0))
}

/// Mean linear power of pixels below the detection level.
fn background_power(spec: &Spectrogram, level_db: f64) -> f64 {
    let (sum, n) = spec
        .power_db
        .iter()
        .filter(|&&v| (v as f64) < level_db)
        .fold((0.0, 0usize), |(s, n), &v| (s + 10f64.powf(v as f64 / 10.0), n + 1));
    if n > 0 {
        sum / n as f64
    } else {
        10f64.powf(estimate_noise_floor(spec) / 10.0)
    }
}

/// Segment, refine and classify. Output is sorted by `(y_min, x_min)`.
pub fn detect(spec: &Spectrogram, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let boxes = segment(spec, cfg)?;
    if boxes.is_empty() {
        return Ok(Vec::new());
    }
    let noise = background_power(spec, estimate_noise_floor(spec) + cfg.threshold_db_above_floor);
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        let b = if cfg.refine_edges { refine_box(spec, &b, noise) } else { b };
        if !keep(&b, cfg) {
            continue;
        }
        let (class, confidence) = classify(spec, &b, &cfg.rules)?;
        out.push(Detection::new(b.with_class(class), confidence));
    }
    out.sort_by_key(|d| (d.bbox.y_min, d.bbox.x_min, d.bbox.y_max, d.bbox.x_max));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectro::{SpectrogramAxes, SpectrogramMeta};

    fn image(h: usize, w: usize, base: f32) -> Spectrogram {
        Spectrogram {
            axes: SpectrogramAxes {
                f1: 0.0,
                f2: 20e6,
                t1: 0.0,
                t2: h as f64 * 519.2e-6,
                x_min: 0,
                x_max: w,
                y_min: 0,
                y_max: h,
            },
            power_db: vec![base; h * w],
            meta: SpectrogramMeta {
                source_hash: None,
                stft: None,
            },
        }
    }

    fn paint(s: &mut Spectrogram, b: (usize, usize, usize, usize), v: f32) {
        let w = s.width();
        for r in b.2..b.3 {
            for c in b.0..b.1 {
                s.power_db[r * w + c] = v;
            }
        }
    }

    #[test]
    fn constant_image_floor() {
        assert_eq!(estimate_noise_floor(&image(10, 10, -100.0)), -100.0);
    }

    #[test]
    fn floor_ignores_a_bright_box() {
        let mut s = image(96, 104, -80.0);
        let before = estimate_noise_floor(&s);
        paint(&mut s, (10, 40, 10, 30), -20.0);
        assert_eq!(estimate_noise_floor(&s), before);
    }

    #[test]
    fn two_disjoint_frames_give_two_boxes() {
        let mut s = image(96, 104, -80.0);
        paint(&mut s, (26, 78, 10, 18), -40.0);
        paint(&mut s, (0, 104, 40, 44), -50.0);
        let boxes = segment(&s, &DetectorConfig::default()).unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!((boxes[0].x_min, boxes[0].x_max, boxes[0].y_min, boxes[0].y_max), (26, 78, 10, 18));
        assert_eq!((boxes[1].x_min, boxes[1].x_max, boxes[1].y_min, boxes[1].y_max), (0, 104, 40, 44));
    }

    #[test]
    fn small_specks_are_dropped_and_touching_parts_merge() {
        let mut s = image(50, 50, -80.0);
        paint(&mut s, (5, 6, 5, 6), -20.0);
        paint(&mut s, (20, 24, 20, 24), -20.0);
        paint(&mut s, (24, 28, 24, 28), -20.0);
        let boxes = segment(&s, &DetectorConfig::default()).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].x_min, boxes[0].x_max, boxes[0].y_min, boxes[0].y_max), (20, 28, 20, 28));
    }

    #[test]
    fn wider_merge_gap_joins_nearby_boxes() {
        let mut s = image(50, 50, -80.0);
        paint(&mut s, (10, 20, 10, 20), -20.0);
        paint(&mut s, (22, 30, 10, 20), -20.0);
        let cfg = DetectorConfig::default();
        assert_eq!(segment(&s, &cfg).unwrap().len(), 2);
        let cfg = DetectorConfig { merge_gap: 3, ..cfg };
        assert_eq!(segment(&s, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn refinement_finds_half_power_edges() {
        let mut s = image(40, 60, -80.0);
        paint(&mut s, (10, 30, 5, 15), -30.0);
        // Partially covered edge row at a quarter of the power.
        paint(&mut s, (10, 30, 15, 16), -36.0);
        let dets = detect(&s, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        let b = dets[0].bbox;
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (10, 30, 5, 15));
    }

    #[test]
    fn classification_rules() {
        let mut s = image(96, 104, -80.0);
        paint(&mut s, (26, 78, 10, 18), -30.0);
        let lte_box = BoundingBox::new(26, 78, 10, 18, RatClass::Unknown);
        let custom = [ClassRule::new(BoxFeature::DurationS, Comparison::Ge, 2e-3, RatClass::Lte)];
        assert_eq!(classify(&s, &lte_box, &custom).unwrap().0, RatClass::Lte);

        let wifi_box = BoundingBox::new(0, 104, 40, 41, RatClass::Unknown);
        assert_eq!(classify(&s, &wifi_box, &default_rules()).unwrap().0, RatClass::Wifi);

        assert_eq!(classify(&s, &lte_box, &[]).unwrap(), (RatClass::Unknown, 0.0));
    }

    #[test]
    fn confidence_grows_with_margin() {
        let rule = ClassRule::new(BoxFeature::DurationS, Comparison::Ge, 2e-3, RatClass::Lte);
        assert_eq!(rule.confidence(2e-3), 0.5);
        assert_eq!(rule.confidence(3e-3), 0.75);
        assert_eq!(rule.confidence(10e-3), 1.0);
    }

    #[test]
    fn flat_box_has_unit_flatness() {
        let mut s = image(20, 20, -80.0);
        paint(&mut s, (2, 12, 2, 12), -30.0);
        let f = box_features(&s, &BoundingBox::new(2, 12, 2, 12, RatClass::Unknown)).unwrap();
        assert!((f.flatness - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_spectrogram_gives_no_detections() {
        let s = image(30, 30, -100.0);
        assert!(detect(&s, &DetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let s = image(4, 4, 0.0);
        let cfg = DetectorConfig {
            threshold_db_above_floor: 0.0,
            ..Default::default()
        };
        assert!(segment(&s, &cfg).is_err());
    }
}
