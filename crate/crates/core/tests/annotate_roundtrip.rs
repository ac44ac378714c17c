use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratscope_core::annotate::{
    export_voc, import_voc, parse_predictions, predictions_to_jsonl, BoundingBox, Detection, VocAnnotation,
};
use ratscope_core::waveforms::RatClass;

const CLASSES: [RatClass; 3] = [RatClass::Lte, RatClass::Wifi, RatClass::Unknown];

fn random_annotation(rng: &mut ChaCha8Rng, i: usize) -> VocAnnotation {
    let width = rng.random_range(1..2048);
    let height = rng.random_range(1..2048);
    let boxes = (0..rng.random_range(0..12))
        .map(|_| {
            let x0 = rng.random_range(0..width);
            let y0 = rng.random_range(0..height);
            BoundingBox::new(
                x0,
                rng.random_range(x0 + 1..=width),
                y0,
                rng.random_range(y0 + 1..=height),
                CLASSES[rng.random_range(0..3)],
            )
        })
        .collect();
    VocAnnotation {
        filename: format!("img_{i}<&>'\".pgm"),
        width,
        height,
        boxes,
    }
}

#[test]
fn voc_round_trip_on_random_annotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    for i in 0..1000 {
        let ann = random_annotation(&mut rng, i);
        assert_eq!(import_voc(&export_voc(&ann)).unwrap(), ann);
    }
}

#[test]
fn jsonl_round_trip_on_random_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    for i in 0..1000 {
        let ann = random_annotation(&mut rng, i);
        let items: Vec<(String, Detection)> = ann
            .boxes
            .iter()
            .map(|b| (format!("img{}", rng.random_range(0..3)), Detection::new(*b, rng.random::<f64>())))
            .collect();
        let set = parse_predictions(&predictions_to_jsonl(&items).unwrap(), Some((ann.width, ann.height)));
        assert!(set.rejected.is_empty());
        let mut expected: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for (image, det) in items {
            expected.entry(image).or_default().push(det);
        }
        assert_eq!(set.by_image, expected);
    }
}

fn annotation() -> impl Strategy<Value = VocAnnotation> {
    (1usize..500, 1usize..500, "[a-zA-Z0-9_<>&\"'é.-]{1,24}").prop_flat_map(|(w, h, filename)| {
        let bbox = (0..w, 0..h, 0usize..3).prop_flat_map(move |(x0, y0, c)| {
            (x0 + 1..=w, y0 + 1..=h).prop_map(move |(x1, y1)| BoundingBox::new(x0, x1, y0, y1, CLASSES[c]))
        });
        proptest::collection::vec(bbox, 0..8).prop_map(move |boxes| VocAnnotation {
            filename: filename.clone(),
            width: w,
            height: h,
            boxes,
        })
    })
}

proptest! {
    #[test]
    fn voc_round_trip(ann in annotation()) {
        prop_assert_eq!(import_voc(&export_voc(&ann)).unwrap(), ann);
    }

    #[test]
    fn jsonl_round_trip(ann in annotation(), conf in proptest::collection::vec(0.0f64..=1.0, 8)) {
        let items: Vec<(String, Detection)> = ann
            .boxes
            .iter()
            .zip(&conf)
            .map(|(b, c)| (ann.filename.clone(), Detection::new(*b, *c)))
            .collect();
        let set = parse_predictions(&predictions_to_jsonl(&items).unwrap(), None);
        prop_assert!(set.rejected.is_empty());
        let got: Vec<Detection> = set.by_image.into_values().flatten().collect();
        let want: Vec<Detection> = items.into_iter().map(|(_, d)| d).collect();
        prop_assert_eq!(got, want);
    }
}
