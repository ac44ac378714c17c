//! Oracles shared by the integration suites and the acceptance harness.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ratscope_core::annotate::{BoundingBox, Detection};
use ratscope_core::evalmetrics::{confidence_order, iou, ImageEval};
use ratscope_core::spectro::SpectrogramAxes;
use ratscope_core::waveforms::RatClass;

pub fn random_box(rng: &mut impl Rng, grid: usize) -> BoundingBox {
    let x0 = rng.random_range(0..grid - 1);
    let x1 = rng.random_range(x0 + 1..=grid);
    let y0 = rng.random_range(0..grid - 1);
    let y1 = rng.random_range(y0 + 1..=grid);
    let class = if rng.random::<bool>() { RatClass::Lte } else { RatClass::Wifi };
    BoundingBox::new(x0, x1, y0, y1, class)
}

/// Brute force over every one-to-one partial assignment respecting the
/// threshold. Assignments are ranked lexicographically by what each
/// detection receives, taken in confidence order: a higher IoU beats a lower
/// one, a lower GT index breaks ties, and anything beats no match.
type Best = Option<(Vec<(f64, i64)>, Vec<(usize, usize)>)>;

pub fn exhaustive_match(gt: &[BoundingBox], dets: &[Detection], thr: f64) -> Vec<(usize, usize)> {
    let order = confidence_order(dets);
    let mut best: Best = None;
    let mut used = vec![false; gt.len()];
    let mut chosen: Vec<Option<usize>> = vec![None; order.len()];

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        k: usize,
        order: &[usize],
        gt: &[BoundingBox],
        dets: &[Detection],
        thr: f64,
        used: &mut Vec<bool>,
        chosen: &mut Vec<Option<usize>>,
        best: &mut Best,
    ) {
        if k == order.len() {
            let key: Vec<(f64, i64)> = chosen
                .iter()
                .zip(order)
                .map(|(c, &d)| match c {
                    Some(g) => (iou(&gt[*g], &dets[d].bbox), -(*g as i64)),
                    None => (-1.0, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((b, _)) => key.partial_cmp(b) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                let mut pairs: Vec<(usize, usize)> = chosen
                    .iter()
                    .zip(order)
                    .filter_map(|(c, &d)| c.map(|g| (g, d)))
                    .collect();
                pairs.sort_unstable();
                *best = Some((key, pairs));
            }
            return;
        }
        chosen[k] = None;
        recurse(k + 1, order, gt, dets, thr, used, chosen, best);
        for g in 0..gt.len() {
            if !used[g] && iou(&gt[g], &dets[order[k]].bbox) >= thr {
                used[g] = true;
                chosen[k] = Some(g);
                recurse(k + 1, order, gt, dets, thr, used, chosen, best);
                used[g] = false;
                chosen[k] = None;
            }
        }
    }

    recurse(0, &order, gt, dets, thr, &mut used, &mut chosen, &mut best);
    best.map(|(_, p)| p).unwrap_or_default()
}

/// Five GT boxes; ten ranked detections with hit pattern
/// T F T T F F T F F T. Precision/recall by rank:
///
/// | rank | P     | R   | envelope |
/// |------|-------|-----|----------|
/// | 1    | 1     | 0.2 | 1        |
/// | 2    | 1/2   | 0.2 | 3/4      |
/// | 3    | 2/3   | 0.4 | 3/4      |
/// | 4    | 3/4   | 0.6 | 3/4      |
/// | 5    | 3/5   | 0.6 | 3/5      |
/// | 6    | 1/2   | 0.6 | 4/7      |
/// | 7    | 4/7   | 0.8 | 4/7      |
/// | 8    | 1/2   | 0.8 | 1/2      |
/// | 9    | 4/9   | 0.8 | 1/2      |
/// | 10   | 1/2   | 1.0 | 1/2      |
///
/// AP = 0.2 * (1 + 3/4 + 3/4 + 4/7 + 1/2) = 5/7.
pub fn ap_fixture() -> Vec<ImageEval> {
    let gt: Vec<BoundingBox> = (0..5)
        .map(|i| BoundingBox::new(10 * i, 10 * i + 8, 0, 8, RatClass::Lte))
        .collect();
    let pattern = [true, false, true, true, false, false, true, false, false, true];
    let mut next_gt = 0;
    let dets = pattern
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            let bbox = if hit {
                next_gt += 1;
                gt[next_gt - 1]
            } else {
                BoundingBox::new(10 * k, 10 * k + 8, 50, 58, RatClass::Lte)
            };
            Detection::new(bbox, 1.0 - 0.05 * k as f64)
        })
        .collect();
    vec![ImageEval { gt, dets }]
}

pub fn random_axes(rng: &mut ChaCha8Rng) -> SpectrogramAxes {
    let w = rng.random_range(1..300);
    let h = rng.random_range(1..300);
    let x0 = rng.random_range(0..50);
    let y0 = rng.random_range(0..50);
    let f1 = rng.random_range(-1e9..1e9);
    let t1 = rng.random_range(0.0..10.0);
    SpectrogramAxes {
        f1,
        f2: f1 + rng.random_range(1e3..1e9),
        t1,
        t2: t1 + rng.random_range(1e-4..1.0),
        x_min: x0,
        x_max: x0 + w,
        y_min: y0,
        y_max: y0 + h,
    }
}

pub fn random_pixel_box(rng: &mut ChaCha8Rng, axes: &SpectrogramAxes) -> BoundingBox {
    let a = rng.random_range(axes.x_min..axes.x_max);
    let b = rng.random_range(a + 1..=axes.x_max);
    let c = rng.random_range(axes.y_min..axes.y_max);
    let d = rng.random_range(c + 1..=axes.y_max);
    BoundingBox::new(a, b, c, d, RatClass::Lte)
}

/// Bandwidth, centre and duration by walking every pixel of the image.
pub fn pixel_oracle(b: &BoundingBox, axes: &SpectrogramAxes) -> (f64, f64, f64) {
    let (mut cols, mut col_sum) = (0usize, 0.0);
    for x in axes.x_min..axes.x_max {
        if (b.x_min..b.x_max).contains(&x) {
            cols += 1;
            col_sum += axes.f1 + axes.i_f() * ((x - axes.x_min) as f64 + 0.5);
        }
    }
    let rows = (axes.y_min..axes.y_max).filter(|y| (b.y_min..b.y_max).contains(y)).count();
    (cols as f64 * axes.i_f(), col_sum / cols as f64, rows as f64 * axes.i_t())
}

