mod oracle;

use ndiscan_core::reduce::encode_png;
use ndiscan_core::{
    export_png, normalize_to_gray, read_png, resize, variance_reduce, Frequency, GrayImage, ScanVolume,
    VarianceMap,
};
use proptest::prelude::*;

fn ascan_strategy() -> impl Strategy<Value = Vec<f32>> {
    (-1000.0f32..1000.0, 0.0f32..10.0, proptest::collection::vec(-1.0f32..1.0, 512))
        .prop_map(|(offset, scale, unit)| unit.into_iter().map(|u| offset + scale * u).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_matches_two_pass(points in proptest::collection::vec(ascan_strategy(), 1..6)) {
        let n = points.len();
        let v = ScanVolume::new(1, n, 512, Frequency::Mhz5_0, points.concat(), "").unwrap();
        let map = variance_reduce(&v);
        for (i, ascan) in points.iter().enumerate() {
            let expected = oracle::two_pass_variance(ascan);
            let got = map.values()[i];
            prop_assert!(got >= 0.0);
            let tol = 1e-9 * expected.abs().max(1e-12);
            prop_assert!((got - expected).abs() <= tol, "point {i}: {got} vs {expected}");
        }
    }

    #[test]
    fn normalization_is_monotone_and_spans_range(values in proptest::collection::vec(0.0f64..1e6, 2..64)) {
        let map = VarianceMap::new(1, values.len(), values.clone()).unwrap();
        let gray = normalize_to_gray(&map);
        let px = gray.pixels();
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(px[i] <= px[j]);
                }
            }
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            prop_assert_eq!(*px.iter().min().unwrap(), 0);
            prop_assert_eq!(*px.iter().max().unwrap(), 255);
        } else {
            prop_assert!(px.iter().all(|&p| p == 0));
        }
    }

    #[test]
    fn png_round_trip_is_bit_exact(h in 1usize..40, w in 1usize..40, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..h * w).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 17) as u8).collect();
        let img = GrayImage::new(h, w, pixels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        export_png(&img, &path).unwrap();
        prop_assert_eq!(read_png(&path).unwrap(), img.clone());
        prop_assert_eq!(std::fs::read(&path).unwrap(), encode_png(&img).unwrap());
    }

    #[test]
    fn resize_stays_within_source_range(h in 1usize..20, w in 1usize..20, th in 1usize..30, tw in 1usize..30, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..h * w).map(|i| (seed.rotate_left(i as u32) & 0xff) as u8).collect();
        let img = GrayImage::new(h, w, pixels).unwrap();
        let out = resize(&img, th, tw).unwrap();
        prop_assert_eq!((out.height(), out.width()), (th, tw));
        let lo = *img.pixels().iter().min().unwrap();
        let hi = *img.pixels().iter().max().unwrap();
        prop_assert!(out.pixels().iter().all(|&p| p >= lo && p <= hi));
        prop_assert_eq!(out.get(0, 0), img.get(0, 0));
    }
}

#[test]
fn constant_volume_gives_zero_map() {
    let v = ScanVolume::new(4, 4, 512, Frequency::Mhz2_5, vec![0.731; 16 * 512], "").unwrap();
    assert!(variance_reduce(&v).values().iter().all(|&x| x == 0.0));
}
