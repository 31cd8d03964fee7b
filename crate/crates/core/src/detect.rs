//! Classical defect detector over grayscale variance images: global
//! threshold, binary opening and closing, 8-connected component labeling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Mask, Polygon};
use crate::scan_model::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "p")]
pub enum ThresholdMode {
    Otsu,
    /// Threshold at the given percentile (0 < p < 100) of pixel values.
    Percentile(f64),
}

/// Which side of the threshold counts as defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Defects at or below the threshold (shadowed, low variance).
    Dark,
    /// Defects above the threshold.
    Bright,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub threshold_mode: ThresholdMode,
    pub polarity: Polarity,
    pub min_area: usize,
    pub morphology_radius: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            threshold_mode: ThresholdMode::Otsu,
            polarity: Polarity::Dark,
            min_area: 16,
            morphology_radius: 1,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_area < 1 {
            return Err(Error::Validation("min_area must be >= 1".into()));
        }
        if let ThresholdMode::Percentile(p) = self.threshold_mode {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::Validation(format!("percentile {p} outside (0, 100)")));
            }
        }
        Ok(())
    }
}

/// One detected (or externally predicted) defect instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: u64,
    pub bbox: BBox,
    pub mask: Option<Mask>,
    pub score: f64,
}

impl Prediction {
    pub fn validate(&self, width: usize, height: usize) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if !self.bbox.has_positive_area() || !self.bbox.within(width, height) {
            return Err(format!(
                "bbox {:?} empty or outside {width}x{height} image",
                <[f64; 4]>::from(self.bbox)
            ));
        }
        if let Some(mask) = &self.mask {
            if (mask.width(), mask.height()) != (width, height) {
                return Err("mask frame differs from image".into());
            }
            if mask.bounds() != Some(self.bbox) {
                return Err("mask bounds differ from bbox".into());
            }
        }
        Ok(())
    }
}

/// Otsu's threshold: the level `t` maximizing between-class variance of
/// `{p <= t}` vs `{p > t}`. Returns `None` for a single-valued histogram.
pub fn otsu_threshold(image: &GrayImage) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &p in image.pixels() {
        hist[p as usize] += 1;
    }
    let total = image.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut weight_lo, mut sum_lo) = (0.0f64, 0.0f64);
    let mut best: Option<(f64, u8)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        weight_lo += count as f64;
        sum_lo += t as f64 * count as f64;
        let weight_hi = total - weight_lo;
        if weight_lo == 0.0 || weight_hi == 0.0 {
            continue;
        }
        let mean_lo = sum_lo / weight_lo;
        let mean_hi = (sum_all - sum_lo) / weight_hi;
        let between = weight_lo * weight_hi * (mean_lo - mean_hi).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, t as u8));
        }
    }
    best.map(|(_, t)| t)
}

/// Nearest-rank percentile of the pixel values.
pub fn percentile_threshold(image: &GrayImage, p: f64) -> u8 {
    let mut sorted = image.pixels().to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Binary erosion by a disk. Out-of-frame neighbours count as set, so
/// regions touching the border are not eaten from outside.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, true)
}

/// Binary dilation by a disk. Out-of-frame neighbours count as unset.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    morph(mask, radius, false)
}

fn morph(mask: &Mask, radius: usize, erosion: bool) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let mut out = Mask::empty(mask.height(), mask.width());
    for r in 0..h {
        for c in 0..w {
            let probe = |&(dy, dx): &(isize, isize)| {
                let (y, x) = (r + dy, c + dx);
                if y < 0 || x < 0 || y >= h || x >= w {
                    erosion
                } else {
                    mask.get(y as usize, x as usize)
                }
            };
            let v = if erosion {
                offsets.iter().all(probe)
            } else {
                offsets.iter().any(probe)
            };
            out.set(r as usize, c as usize, v);
        }
    }
    out
}

/// Opening (erode, dilate) followed by closing (dilate, erode).
pub fn open_close(mask: &Mask, radius: usize) -> Mask {
    let opened = dilate(&erode(mask, radius), radius);
    erode(&dilate(&opened, radius), radius)
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// 8-connected component labeling by two-pass union–find. Returns a label
/// per pixel (0 = background, components numbered 1.. in raster order of
/// their first pixel) and the component count.
pub fn label_components(mask: &Mask) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut neighbours = [0u32; 4];
            if c > 0 {
                neighbours[0] = labels[r * w + c - 1];
            }
            if r > 0 {
                if c > 0 {
                    neighbours[1] = labels[(r - 1) * w + c - 1];
                }
                neighbours[2] = labels[(r - 1) * w + c];
                if c + 1 < w {
                    neighbours[3] = labels[(r - 1) * w + c + 1];
                }
            }
            let mut root = 0;
            for &n in neighbours.iter().filter(|&&n| n != 0) {
                let rn = find(&mut parent, n);
                if root == 0 {
                    root = rn;
                } else if rn != root {
                    let (lo, hi) = (root.min(rn), root.max(rn));
                    parent[hi as usize] = lo;
                    root = lo;
                }
            }
            if root == 0 {
                root = parent.len() as u32;
                parent.push(root);
            }
            labels[r * w + c] = root;
        }
    }
    // Compact roots to 1..=n in raster order of first appearance.
    let mut compact = vec![0u32; parent.len()];
    let mut count = 0u32;
    for label in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *label) as usize;
        if compact[root] == 0 {
            count += 1;
            compact[root] = count;
        }
        *label = compact[root];
    }
    (labels, count as usize)
}

/// Detect defect instances in `image`.
///
/// Pixels on the defect side of the threshold are cleaned by opening and
/// closing with a disk of `morphology_radius`, grouped into 8-connected
/// components, and components smaller than `min_area` are dropped. Each
/// survivor is scored by `|mean inside - mean of non-defect pixels| / 255`.
/// Results are ordered by descending score, ties in raster order.
pub fn detect(image: &GrayImage, params: &DetectorParams, image_id: u64) -> Result<Vec<Prediction>> {
    params.validate()?;
    let pixels = image.pixels();
    let lo = *pixels.iter().min().expect("non-empty image");
    let hi = *pixels.iter().max().expect("non-empty image");
    if lo == hi {
        return Ok(Vec::new());
    }
    let threshold = match params.threshold_mode {
        ThresholdMode::Otsu => otsu_threshold(image).expect("at least two levels"),
        ThresholdMode::Percentile(p) => percentile_threshold(image, p),
    };
    let (h, w) = (image.height(), image.width());
    let raw: Vec<bool> = pixels
        .iter()
        .map(|&p| match params.polarity {
            Polarity::Dark => p <= threshold,
            Polarity::Bright => p > threshold,
        })
        .collect();
    let binary = open_close(&Mask::from_bits(h, w, raw)?, params.morphology_radius);

    let (background_sum, background_count) = pixels
        .iter()
        .zip(binary.bits())
        .filter(|(_, &b)| !b)
        .fold((0u64, 0u64), |(s, n), (&p, _)| (s + p as u64, n + 1));
    let background_mean = (background_count > 0).then(|| background_sum as f64 / background_count as f64);

    let (labels, count) = label_components(&binary);
    let mut sums = vec![0u64; count + 1];
    let mut areas = vec![0usize; count + 1];
    for (&l, &p) in labels.iter().zip(pixels) {
        sums[l as usize] += p as u64;
        areas[l as usize] += 1;
    }

    let mut predictions = Vec::new();
    for id in 1..=count as u32 {
        let area = areas[id as usize];
        if area < params.min_area {
            continue;
        }
        let bits = labels.iter().map(|&l| l == id).collect();
        let mask = Mask::from_bits(h, w, bits)?;
        let mean = sums[id as usize] as f64 / area as f64;
        let score = background_mean.map_or(0.0, |bg| ((mean - bg).abs() / 255.0).clamp(0.0, 1.0));
        predictions.push(Prediction {
            image_id,
            bbox: mask.bounds().expect("component is non-empty"),
            mask: Some(mask),
            score,
        });
    }
    predictions.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(predictions)
}

/// Outline polygon of a prediction's mask, or its box corners.
pub fn prediction_polygon(prediction: &Prediction) -> Polygon {
    prediction
        .mask
        .as_ref()
        .and_then(Polygon::outline)
        .unwrap_or_else(|| prediction.bbox.corners())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas(h: usize, w: usize, bg: u8) -> GrayImage {
        GrayImage::filled(h, w, bg).unwrap()
    }

    fn paint(img: &mut GrayImage, top: usize, left: usize, size: usize, v: u8) {
        for r in top..top + size {
            for c in left..left + size {
                img.set(r, c, v);
            }
        }
    }

    fn params(min_area: usize) -> DetectorParams {
        DetectorParams {
            min_area,
            ..DetectorParams::default()
        }
    }

    #[test]
    fn uniform_image_yields_nothing() {
        for mode in [ThresholdMode::Otsu, ThresholdMode::Percentile(50.0)] {
            let p = DetectorParams { threshold_mode: mode, ..params(1) };
            assert!(detect(&canvas(20, 20, 77), &p, 1).unwrap().is_empty());
        }
    }

    #[test]
    fn single_dark_square() {
        let mut img = canvas(40, 40, 220);
        paint(&mut img, 12, 15, 10, 30);
        let preds = detect(&img, &params(4), 3).unwrap();
        assert_eq!(preds.len(), 1);
        let b = preds[0].bbox;
        assert!((b.x - 15.0).abs() <= 1.0 && (b.y - 12.0).abs() <= 1.0);
        assert!((b.right() - 25.0).abs() <= 1.0 && (b.bottom() - 22.0).abs() <= 1.0);
        assert_eq!(preds[0].image_id, 3);
        // Opening trims the four corner pixels into the background.
        let background = (1500.0 * 220.0 + 4.0 * 30.0) / 1504.0;
        assert!((preds[0].score - (background - 30.0) / 255.0).abs() < 1e-12);
        preds[0].validate(40, 40).unwrap();
    }

    #[test]
    fn two_squares_stay_separate() {
        let mut img = canvas(40, 40, 200);
        paint(&mut img, 2, 2, 8, 20);
        paint(&mut img, 20, 25, 8, 60);
        let preds = detect(&img, &params(4), 1).unwrap();
        assert_eq!(preds.len(), 2);
        assert!(preds[0].score >= preds[1].score);
        assert_eq!(preds[0].bbox, BBox::new(2.0, 2.0, 8.0, 8.0));
    }

    #[test]
    fn bright_polarity_and_percentile() {
        let mut img = canvas(30, 30, 10);
        paint(&mut img, 5, 5, 6, 250);
        let p = DetectorParams {
            polarity: Polarity::Bright,
            threshold_mode: ThresholdMode::Percentile(90.0),
            ..params(4)
        };
        let preds = detect(&img, &p, 1).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].bbox, BBox::new(5.0, 5.0, 6.0, 6.0));
    }

    #[test]
    fn min_area_filters() {
        let mut img = canvas(30, 30, 200);
        paint(&mut img, 2, 2, 3, 0);
        paint(&mut img, 15, 15, 8, 0);
        let p = DetectorParams { morphology_radius: 0, ..params(10) };
        assert_eq!(detect(&img, &p, 1).unwrap().len(), 1);
        let p = DetectorParams { morphology_radius: 0, ..params(9) };
        assert_eq!(detect(&img, &p, 1).unwrap().len(), 2);
    }

    #[test]
    fn diagonal_touch_is_one_component() {
        let m = Mask::from_bits(3, 3, vec![true, false, false, false, true, false, false, false, true]).unwrap();
        assert_eq!(label_components(&m).1, 1);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two arms joined only at the bottom force a union of labels.
        let rows = ["#.#", "#.#", "###"];
        let bits = rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect();
        let (labels, n) = label_components(&Mask::from_bits(3, 3, bits).unwrap());
        assert_eq!(n, 1);
        assert!(labels.iter().all(|&l| l <= 1));
    }

    #[test]
    fn otsu_splits_bimodal() {
        let mut img = canvas(10, 10, 200);
        paint(&mut img, 0, 0, 5, 40);
        let t = otsu_threshold(&img).unwrap();
        assert!((40..200).contains(&t));
        assert_eq!(otsu_threshold(&canvas(3, 3, 9)), None);
    }

    #[test]
    fn invalid_params() {
        assert!(params(0).validate().is_err());
        let p = DetectorParams { threshold_mode: ThresholdMode::Percentile(100.0), ..params(1) };
        assert!(p.validate().is_err());
    }

    #[test]
    fn morphology_removes_specks_and_fills_pinholes() {
        let mut m = Mask::empty(12, 12);
        for r in 2..9 {
            for c in 2..9 {
                m.set(r, c, true);
            }
        }
        m.set(5, 5, false);
        m.set(11, 0, true);
        let cleaned = open_close(&m, 1);
        assert!(cleaned.get(5, 5));
        assert!(!cleaned.get(11, 0));
    }
}
