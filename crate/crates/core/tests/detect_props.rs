mod oracle;

use ndiscan_core::detect::label_components;
use ndiscan_core::{detect, DetectorParams, GrayImage, Mask};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1usize..=32, 1usize..=32, 0.05f64..0.7, any::<u64>()).prop_map(|(h, w, density, seed)| {
        let mut state = seed | 1;
        let bits = (0..h * w)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 1000) as f64 / 1000.0 < density
            })
            .collect();
        Mask::from_bits(h, w, bits).unwrap()
    })
}

fn blobs_image(h: usize, w: usize, rects: &[(usize, usize, usize, usize)], noise_seed: u64) -> GrayImage {
    let mut img = GrayImage::filled(h, w, 200).unwrap();
    let mut state = noise_seed | 1;
    for r in 0..h {
        for c in 0..w {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            img.set(r, c, 190 + (state % 21) as u8);
        }
    }
    for &(top, left, rh, rw) in rects {
        for r in top..(top + rh).min(h) {
            for c in left..(left + rw).min(w) {
                img.set(r, c, 40);
            }
        }
    }
    img
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn labeling_matches_flood_fill(mask in mask_strategy()) {
        let (labels, count) = label_components(&mask);
        let components = oracle::flood_fill_components(mask.height(), mask.width(), mask.bits());
        prop_assert_eq!(count, components.len());
        // Raster-order numbering: component k of the oracle is label k + 1.
        for (k, pixels) in components.iter().enumerate() {
            for &(r, c) in pixels {
                prop_assert_eq!(labels[r * mask.width() + c], k as u32 + 1);
            }
        }
        for (i, &bit) in mask.bits().iter().enumerate() {
            prop_assert_eq!(bit, labels[i] != 0);
        }
    }

    #[test]
    fn predictions_are_valid_and_sorted(
        rects in proptest::collection::vec((0usize..40, 0usize..40, 3usize..15, 3usize..15), 0..5),
        seed in any::<u64>(),
    ) {
        let img = blobs_image(48, 48, &rects, seed);
        let preds = detect(&img, &DetectorParams { min_area: 4, ..DetectorParams::default() }, 9).unwrap();
        for p in &preds {
            prop_assert!(p.validate(48, 48).is_ok());
            prop_assert_eq!(p.image_id, 9);
            prop_assert_eq!(p.mask.as_ref().unwrap().bounds(), Some(p.bbox));
        }
        prop_assert!(preds.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn raising_min_area_never_adds_detections(
        rects in proptest::collection::vec((0usize..40, 0usize..40, 2usize..12, 2usize..12), 1..5),
        seed in any::<u64>(),
        small in 1usize..40,
        extra in 0usize..80,
    ) {
        let img = blobs_image(48, 48, &rects, seed);
        let base = DetectorParams { min_area: small, ..DetectorParams::default() };
        let a = detect(&img, &base, 1).unwrap();
        let b = detect(&img, &DetectorParams { min_area: small + extra, ..base }, 1).unwrap();
        prop_assert!(b.len() <= a.len());
        for p in &b {
            prop_assert!(a.iter().any(|q| q.bbox == p.bbox));
        }
    }
}
