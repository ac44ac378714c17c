mod common;

use common::{ap_fixture, exhaustive_match, random_box};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratscope_core::annotate::{BoundingBox, Detection};
use ratscope_core::evalmetrics::{average_precision, iou, match_detections, MatchCounts};
use ratscope_core::waveforms::RatClass;

#[test]
fn greedy_equals_exhaustive_oracle_up_to_five_by_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut instances = 0;
    for n_gt in 0..=5 {
        for n_det in 0..=5 {
            for _ in 0..400 {
                let grid = rng.random_range(3..8);
                let gt: Vec<BoundingBox> = (0..n_gt).map(|_| random_box(&mut rng, grid)).collect();
                let dets: Vec<Detection> = (0..n_det)
                    .map(|_| {
                        // Coarse confidences so that ties occur.
                        let c = rng.random_range(0..4) as f64 / 4.0;
                        Detection::new(random_box(&mut rng, grid), c)
                    })
                    .collect();
                for thr in [0.1, 0.5] {
                    let greedy = match_detections(&gt, &dets, thr);
                    let mut pairs: Vec<(usize, usize)> = greedy.pairs.iter().map(|p| (p.gt, p.det)).collect();
                    pairs.sort_unstable();
                    assert_eq!(pairs, exhaustive_match(&gt, &dets, thr), "gt {gt:?} dets {dets:?}");
                    instances += 1;
                }
            }
        }
    }
    assert_eq!(instances, 36 * 800);
}

#[test]
fn greedy_can_miss_the_largest_matching() {
    // The confident detection claims the GT that the second detection needed.
    let gt = [
        BoundingBox::new(0, 10, 0, 10, RatClass::Lte),
        BoundingBox::new(0, 10, 4, 14, RatClass::Lte),
    ];
    let dets = [
        Detection::new(BoundingBox::new(0, 10, 2, 11, RatClass::Lte), 0.9),
        Detection::new(BoundingBox::new(0, 10, 0, 9, RatClass::Lte), 0.8),
    ];
    let m = match_detections(&gt, &dets, 0.5);
    assert_eq!(m.pairs.len(), 1);
    // Pairing det 0 with gt 1 and det 1 with gt 0 would match both.
    assert!(iou(&gt[1], &dets[0].bbox) >= 0.5 && iou(&gt[0], &dets[1].bbox) >= 0.5);
    assert!(iou(&gt[1], &dets[1].bbox) < 0.5);
}

#[test]
fn ap_matches_hand_computed_fixture() {
    let ap = average_precision(&ap_fixture(), RatClass::Lte, 0.5).unwrap();
    assert!((ap - 5.0 / 7.0).abs() <= 1e-9, "{ap}");
}

#[test]
fn ap_ignores_monotone_confidence_transforms() {
    let images = ap_fixture();
    let base = average_precision(&images, RatClass::Lte, 0.5).unwrap();
    let mut warped = images.clone();
    for d in &mut warped[0].dets {
        d.confidence = d.confidence.powi(3) * 0.5;
    }
    assert_eq!(average_precision(&warped, RatClass::Lte, 0.5).unwrap(), base);
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0usize..30, 1usize..15, 0usize..30, 1usize..15, any::<bool>()).prop_map(|(x, w, y, h, lte)| {
        BoundingBox::new(x, x + w, y, y + h, if lte { RatClass::Lte } else { RatClass::Wifi })
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_scale_invariant(a in arb_box(), b in arb_box(), k in 1usize..5) {
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
        let s = |b: &BoundingBox| BoundingBox::new(b.x_min * k, b.x_max * k, b.y_min * k, b.y_max * k, b.class);
        prop_assert!((iou(&s(&a), &s(&b)) - iou(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn detection_rate_does_not_grow_with_threshold(
        gt in prop::collection::vec(arb_box(), 0..6),
        dets in prop::collection::vec((arb_box(), 0.0f64..1.0), 0..6),
    ) {
        let dets: Vec<Detection> = dets.into_iter().map(|(b, c)| Detection::new(b, c)).collect();
        let mut last = usize::MAX;
        for thr in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let m = match_detections(&gt, &dets, thr);
            let c = MatchCounts::from_match(&m, &gt, &dets);
            prop_assert!(c.matched <= last);
            last = c.matched;
        }
    }
}
