//! Matching, detection rate, precision, average precision and box-plot
//! statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotate::{BoundingBox, Detection};
use crate::waveforms::RatClass;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Intersection over union of two half-open pixel rectangles.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = a.x_max.min(b.x_max).saturating_sub(a.x_min.max(b.x_min));
    let iy = a.y_max.min(b.y_max).saturating_sub(a.y_min.max(b.y_min));
    let inter = (ix * iy) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt: usize,
    pub det: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// In the order detections claimed their ground truth.
    pub pairs: Vec<MatchPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_det: Vec<usize>,
}

/// Detection indices by descending confidence, ties by index.
pub fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy one-to-one matching: in confidence order, each detection claims
/// the unclaimed ground-truth box of highest IoU (lowest index on ties) if
/// that IoU reaches `iou_threshold`.
pub fn match_detections(gt: &[BoundingBox], dets: &[Detection], iou_threshold: f64) -> MatchResult {
    let mut claimed = vec![false; gt.len()];
    let mut result = MatchResult::default();
    for d in confidence_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gbox) in gt.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let v = iou(gbox, &dets[d].bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) => {
                claimed[g] = true;
                result.pairs.push(MatchPair { gt: g, det: d, iou: v });
            }
            None => result.unmatched_det.push(d),
        }
    }
    result.unmatched_det.sort_unstable();
    result.unmatched_gt = (0..gt.len()).filter(|&g| !claimed[g]).collect();
    result
}

/// Counts accumulated over one or more images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub gt: usize,
    pub detections: usize,
    pub matched: usize,
    pub correct_class: usize,
}

impl MatchCounts {
    pub fn from_match(m: &MatchResult, gt: &[BoundingBox], dets: &[Detection]) -> Self {
        Self {
            gt: gt.len(),
            detections: dets.len(),
            matched: m.pairs.len(),
            correct_class: m
                .pairs
                .iter()
                .filter(|p| gt[p.gt].class == dets[p.det].bbox.class)
                .count(),
        }
    }

    pub fn add(&mut self, other: &MatchCounts) {
        self.gt += other.gt;
        self.detections += other.detections;
        self.matched += other.matched;
        self.correct_class += other.correct_class;
    }

    /// Matched ground truth over all ground truth.
    pub fn detection_rate(&self) -> Option<f64> {
        (self.gt > 0).then(|| self.matched as f64 / self.gt as f64)
    }

    /// Correctly classified matches over all matches.
    pub fn precision(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.correct_class as f64 / self.matched as f64)
    }
}

pub fn detection_and_precision(m: &MatchResult, gt: &[BoundingBox], dets: &[Detection]) -> (Option<f64>, Option<f64>) {
    let c = MatchCounts::from_match(m, gt, dets);
    (c.detection_rate(), c.precision())
}

/// One image's ground truth and detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEval {
    pub gt: Vec<BoundingBox>,
    pub dets: Vec<Detection>,
}

/// Area under the all-points interpolated precision-recall curve.
pub fn ap_from_ranked(is_tp: &[bool], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut precision = Vec::with_capacity(is_tp.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in is_tp {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

/// VOC-style AP for one class over several images. Detections of all images
/// are ranked jointly by confidence; ties keep image then detection order.
pub fn average_precision(images: &[ImageEval], class: RatClass, iou_threshold: f64) -> Option<f64> {
    let total_gt: usize = images
        .iter()
        .map(|im| im.gt.iter().filter(|g| g.class == class).count())
        .sum();
    let mut ranked: Vec<(f64, usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| {
            im.dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.bbox.class == class)
                .map(move |(j, d)| (d.confidence, i, j))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gt.len()]).collect();
    let hits: Vec<bool> = ranked
        .iter()
        .map(|&(_, i, j)| {
            let det = &images[i].dets[j];
            let mut best: Option<(usize, f64)> = None;
            for (g, gbox) in images[i].gt.iter().enumerate() {
                if gbox.class != class || claimed[i][g] {
                    continue;
                }
                let v = iou(gbox, &det.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    claimed[i][g] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    ap_from_ranked(&hits, total_gt)
}

/// Unweighted mean of the defined APs.
pub fn mean_ap(aps: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Linear-interpolation quantile (type 7) of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme observations within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
}

pub fn deviation_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let lo = q1 - 1.5 * iqr;
    let hi = q3 + 1.5 * iqr;
    Some(BoxStats {
        n: v.len(),
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        whisker_low: *v.iter().find(|&&x| x >= lo).unwrap(),
        whisker_high: *v.iter().rev().find(|&&x| x <= hi).unwrap(),
        min: v[0],
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub images: usize,
    pub counts: MatchCounts,
    pub detection_rate: Option<f64>,
    pub precision: Option<f64>,
    /// Per-class AP; absent for classes without ground truth.
    pub ap: BTreeMap<String, Option<f64>>,
    pub map: Option<f64>,
    /// Box-plot statistics of feature deviations in percent.
    pub deviations: BTreeMap<String, BoxStats>,
}

/// Detection, precision and AP over a set of images.
pub fn evaluate(images: &[ImageEval], iou_threshold: f64) -> EvalReport {
    let mut counts = MatchCounts::default();
    for im in images {
        let m = match_detections(&im.gt, &im.dets, iou_threshold);
        counts.add(&MatchCounts::from_match(&m, &im.gt, &im.dets));
    }
    let ap: BTreeMap<String, Option<f64>> = RatClass::KNOWN
        .iter()
        .map(|&c| (c.name().to_string(), average_precision(images, c, iou_threshold)))
        .collect();
    let map = mean_ap(&ap.values().copied().collect::<Vec<_>>());
    EvalReport {
        iou_threshold,
        images: images.len(),
        counts,
        detection_rate: counts.detection_rate(),
        precision: counts.precision(),
        ap,
        map,
        deviations: BTreeMap::new(),
    }
}
