mod oracle;

use ndiscan_core::annotate::{CocoDataset, ImageRecord};
use ndiscan_core::{
    evaluate_dataset, iou_box, match_predictions, BBox, Error, EvalMode, InstanceLabel, Prediction,
};
use oracle::{micro_dataset, MicroImage, MICRO_FRAME};
use proptest::prelude::*;

fn to_bbox(r: oracle::Rect) -> BBox {
    BBox::new(r.0, r.1, r.2, r.3)
}

fn to_dataset(images: &[MicroImage], polygons: bool) -> (CocoDataset, Vec<Prediction>) {
    let records = images
        .iter()
        .map(|i| ImageRecord {
            image_id: i.image_id,
            file_name: format!("m{}.png", i.image_id),
            width: MICRO_FRAME,
            height: MICRO_FRAME,
            panel_id: format!("m{}", i.image_id),
        })
        .collect();
    let labels = images
        .iter()
        .flat_map(|i| {
            i.gts.iter().map(move |&g| InstanceLabel {
                image_id: i.image_id,
                bbox: to_bbox(g),
                polygon: polygons.then(|| to_bbox(g).corners()),
            })
        })
        .collect();
    let preds = images
        .iter()
        .flat_map(|i| {
            i.preds.iter().map(move |&(r, score)| Prediction { image_id: i.image_id, bbox: to_bbox(r), mask: None, score })
        })
        .collect();
    (CocoDataset { images: records, labels }, preds)
}

fn box_strategy() -> impl Strategy<Value = BBox> {
    (-50.0f64..50.0, -50.0f64..50.0, 0.01f64..40.0, 0.01f64..40.0).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn box_iou_is_symmetric_and_bounded(a in box_strategy(), b in box_strategy()) {
        let ab = iou_box(&a, &b).unwrap();
        let ba = iou_box(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou_box(&a, &a).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn evaluation_matches_brute_force(seed in any::<u64>()) {
        let images = micro_dataset(seed);
        for polygons in [false, true] {
            let (dataset, preds) = to_dataset(&images, polygons);
            let mode = if polygons { EvalMode::Mask } else { EvalMode::Box };
            match (oracle::brute_force_ap(&images, 0.5), evaluate_dataset(&dataset, &preds, mode)) {
                (None, Err(Error::UndefinedAp)) => {}
                (Some(ap50), Ok(report)) => {
                    prop_assert_eq!(report.map50(), ap50);
                    prop_assert_eq!(report.map75(), oracle::brute_force_ap(&images, 0.75).unwrap());
                    prop_assert!(report.map75() <= report.map50());
                }
                (want, got) => prop_assert!(false, "oracle {want:?} vs {got:?}"),
            }
        }
    }

    #[test]
    fn matching_conserves_counts(seed in any::<u64>(), threshold in 0.05f64..=1.0) {
        for image in micro_dataset(seed) {
            let (dataset, preds) = to_dataset(std::slice::from_ref(&image), false);
            let m = match_predictions(&preds, &dataset.labels, threshold, EvalMode::Box, (MICRO_FRAME, MICRO_FRAME)).unwrap();
            prop_assert_eq!(m.true_positives + m.false_positives, preds.len());
            prop_assert_eq!(m.true_positives + m.false_negatives, dataset.labels.len());
            let mut used: Vec<usize> = m.pairs.iter().filter_map(|p| p.ground_truth).collect();
            let n = used.len();
            used.sort_unstable();
            used.dedup();
            prop_assert_eq!(used.len(), n);
            for p in &m.pairs {
                if p.ground_truth.is_some() {
                    prop_assert!(p.iou >= threshold);
                }
            }
        }
    }

    #[test]
    fn ap_ignores_monotone_score_rescaling(seed in any::<u64>(), k in 0.01f64..1.0) {
        let images = micro_dataset(seed);
        let (dataset, preds) = to_dataset(&images, false);
        let scaled: Vec<Prediction> = preds.iter().map(|p| Prediction { score: p.score * k, ..p.clone() }).collect();
        if let (Ok(a), Ok(b)) = (evaluate_dataset(&dataset, &preds, EvalMode::Box), evaluate_dataset(&dataset, &scaled, EvalMode::Box)) {
            prop_assert_eq!(a.map50(), b.map50());
            prop_assert_eq!(a.map75(), b.map75());
        }
    }
}

#[test]
fn one_seventh_exactly() {
    let a = BBox::new(0.0, 0.0, 2.0, 2.0);
    let b = BBox::new(1.0, 1.0, 2.0, 2.0);
    assert_eq!(iou_box(&a, &b).unwrap(), 1.0 / 7.0);
}

#[test]
fn ground_truth_as_prediction_scores_perfectly() {
    for seed in 0..50 {
        let mut images = micro_dataset(seed);
        for image in &mut images {
            image.preds = image.gts.iter().map(|&g| (g, 1.0)).collect();
        }
        let (dataset, preds) = to_dataset(&images, true);
        if dataset.labels.is_empty() {
            continue;
        }
        for mode in [EvalMode::Box, EvalMode::Mask] {
            let r = evaluate_dataset(&dataset, &preds, mode).unwrap();
            assert_eq!((r.map50(), r.map75()), (1.0, 1.0), "seed {seed}");
        }
    }
}
