//! Instance-detection evaluation: IoU, greedy matching, 101-point
//! interpolated average precision at IoU 0.50 and 0.75, reports and overlays.
//!
//! Conventions:
//! * Matching is per image, in descending score order (ties by input
//!   index). Each prediction takes the still-unmatched ground truth with the
//!   highest IoU at or above the threshold; equal IoUs go to the lower
//!   ground-truth index.
//! * The precision/recall sweep walks all predictions of the dataset in
//!   descending score order, ties broken by `(image_id, input index)`.
//! * AP averages, over recall levels `i / 100` for `i = 0..=100`, the best
//!   precision reached at any recall at or above that level (0 when the
//!   level is never reached).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotate::{read_coco, read_json, write_json, CocoDataset, InstanceLabel, DEFECT_CATEGORY_ID};
use crate::detect::{prediction_polygon, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Mask, Polygon};
use crate::scan_model::GrayImage;

/// The two IoU thresholds reported.
pub const IOU_THRESHOLDS: [f64; 2] = [0.50, 0.75];
pub const RECALL_LEVELS: usize = 101;
/// Score cut-offs at which recall is additionally reported.
pub const RECALL_SCORE_CUTOFFS: [f64; 4] = [0.0, 0.1, 0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Box,
    Mask,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Box => "box",
            EvalMode::Mask => "mask",
        })
    }
}

pub fn iou_box(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.has_positive_area() || !b.has_positive_area() {
        return Err(Error::Validation("IoU of a zero-area box".into()));
    }
    // Areas are measured from the edges, like the intersection, so that a box
    // compared with itself gives exactly 1.
    let (area_a, area_b) = (a.intersection_area(a), b.intersection_area(b));
    let inter = a.intersection_area(b);
    Ok(inter / (area_a + area_b - inter))
}

pub fn iou_mask(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Validation(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let union = a.union_count(b);
    if union == 0 {
        return Err(Error::Validation("IoU of two empty masks is undefined".into()));
    }
    Ok(a.intersection_count(b) as f64 / union as f64)
}

/// Outcome of one prediction in [`MatchResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Index into the caller's prediction slice.
    pub prediction: usize,
    pub ground_truth: Option<usize>,
    /// IoU with the matched ground truth, or the best IoU seen if unmatched.
    pub iou: f64,
    pub score: f64,
}

/// Matching of one image's predictions at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: u64,
    pub iou_threshold: f64,
    /// In matching (descending score) order.
    pub pairs: Vec<MatchPair>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn ground_truths(&self) -> usize {
        self.true_positives + self.false_negatives
    }
}

fn region_mask(bbox: &BBox, polygon: Option<&Polygon>, height: usize, width: usize) -> Mask {
    match polygon {
        Some(p) => p.rasterize(height, width),
        None => Mask::from_bbox(bbox, height, width),
    }
}

/// `ious[p][g]` for every prediction/ground-truth pair. In mask mode two
/// empty rasters count as IoU 0.
pub fn iou_matrix(
    predictions: &[Prediction],
    ground_truths: &[InstanceLabel],
    mode: EvalMode,
    frame: (usize, usize),
) -> Result<Vec<Vec<f64>>> {
    let (height, width) = frame;
    match mode {
        EvalMode::Box => predictions
            .iter()
            .map(|p| ground_truths.iter().map(|g| iou_box(&p.bbox, &g.bbox)).collect())
            .collect(),
        EvalMode::Mask => {
            let gt_masks: Vec<Mask> = ground_truths
                .iter()
                .map(|g| region_mask(&g.bbox, g.polygon.as_ref(), height, width))
                .collect();
            predictions
                .iter()
                .map(|p| {
                    let own;
                    let mask = match &p.mask {
                        Some(m) => m,
                        None => {
                            own = Mask::from_bbox(&p.bbox, height, width);
                            &own
                        }
                    };
                    gt_masks
                        .iter()
                        .map(|g| match iou_mask(mask, g) {
                            Err(Error::Validation(_)) if mask.is_empty() && g.is_empty() => Ok(0.0),
                            other => other,
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// Greedy assignment over a precomputed IoU matrix.
pub fn match_with_ious(
    image_id: u64,
    scores: &[f64],
    ious: &[Vec<f64>],
    gt_count: usize,
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut taken = vec![false; gt_count];
    let mut pairs = Vec::with_capacity(order.len());
    let mut tp = 0;
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        let mut best_seen = 0.0f64;
        for (g, &iou) in ious[p].iter().enumerate() {
            best_seen = best_seen.max(iou);
            if taken[g] || iou < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let pair = match best {
            Some((g, iou)) => {
                taken[g] = true;
                tp += 1;
                MatchPair { prediction: p, ground_truth: Some(g), iou, score: scores[p] }
            }
            None => MatchPair { prediction: p, ground_truth: None, iou: best_seen, score: scores[p] },
        };
        pairs.push(pair);
    }
    MatchResult {
        image_id,
        iou_threshold,
        true_positives: tp,
        false_positives: scores.len() - tp,
        false_negatives: gt_count - tp,
        pairs,
    }
}

/// Match one image's predictions to its ground truths at `iou_threshold`.
/// `frame` is the image `(height, width)`, used to rasterize in mask mode.
pub fn match_predictions(
    predictions: &[Prediction],
    ground_truths: &[InstanceLabel],
    iou_threshold: f64,
    mode: EvalMode,
    frame: (usize, usize),
) -> Result<MatchResult> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Validation(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let image_id = predictions
        .first()
        .map(|p| p.image_id)
        .or_else(|| ground_truths.first().map(|g| g.image_id))
        .unwrap_or(0);
    let ious = iou_matrix(predictions, ground_truths, mode, frame)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    Ok(match_with_ious(image_id, &scores, &ious, ground_truths.len(), iou_threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Dataset-level precision/recall sweep.
pub fn pr_curve(matches: &[MatchResult]) -> Result<Vec<PrPoint>> {
    let total_gt: usize = matches.iter().map(MatchResult::ground_truths).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    if let Some(first) = matches.first() {
        if matches.iter().any(|m| m.iou_threshold != first.iou_threshold) {
            return Err(Error::Validation("match results mix IoU thresholds".into()));
        }
    }
    let mut detections: Vec<(f64, u64, usize, bool)> = matches
        .iter()
        .flat_map(|m| {
            m.pairs
                .iter()
                .map(move |p| (p.score, m.image_id, p.prediction, p.ground_truth.is_some()))
        })
        .collect();
    detections.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(detections
        .iter()
        .map(|&(score, _, _, hit)| {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                score,
                recall: tp as f64 / total_gt as f64,
                precision: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// 101-point interpolated AP of a precision/recall sweep.
pub fn interpolated_ap(curve: &[PrPoint]) -> f64 {
    // Running maximum of precision from the right.
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for level in 0..RECALL_LEVELS {
        let r = level as f64 / (RECALL_LEVELS - 1) as f64;
        let idx = curve.partition_point(|p| p.recall < r);
        if idx < curve.len() {
            total += envelope[idx];
        }
    }
    total / RECALL_LEVELS as f64
}

/// AP over the whole dataset at the (shared) threshold of `matches`.
pub fn average_precision(matches: &[MatchResult]) -> Result<f64> {
    Ok(interpolated_ap(&pr_curve(matches)?))
}

/// One entry of a COCO-style results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<Vec<f64>>>,
}

impl ResultRecord {
    pub fn from_prediction(p: &Prediction) -> Self {
        ResultRecord {
            image_id: p.image_id,
            category_id: DEFECT_CATEGORY_ID,
            bbox: p.bbox,
            score: p.score,
            segmentation: p.mask.as_ref().map(|_| vec![prediction_polygon(p).to_flat()]),
        }
    }
}

pub fn write_results(predictions: &[Prediction], path: &Path) -> Result<()> {
    let records: Vec<ResultRecord> = predictions.iter().map(ResultRecord::from_prediction).collect();
    write_json(&records, path)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    read_json(path)
}

/// Validate result records against `dataset` and turn them into predictions
/// with rasterized masks. Errors name the offending record index.
pub fn predictions_from_results(records: &[ResultRecord], dataset: &CocoDataset) -> Result<Vec<Prediction>> {
    let dims: HashMap<u64, (usize, usize)> =
        dataset.images.iter().map(|i| (i.image_id, (i.height, i.width))).collect();
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |msg: String| Error::Validation(format!("result record {i}: {msg}"));
            let &(h, w) = dims
                .get(&r.image_id)
                .ok_or_else(|| bad(format!("image_id {} is not in the dataset", r.image_id)))?;
            if r.category_id != DEFECT_CATEGORY_ID {
                return Err(bad(format!("unknown category {}", r.category_id)));
            }
            let mask = match r.segmentation.as_deref() {
                None | Some([]) => None,
                Some([flat]) => Some(
                    Polygon::from_flat(flat)
                        .map_err(|e| bad(e.to_string()))?
                        .rasterize(h, w),
                ),
                Some(_) => return Err(bad("more than one polygon".into())),
            };
            let prediction = Prediction { image_id: r.image_id, bbox: r.bbox, mask: None, score: r.score };
            prediction.validate(w, h).map_err(bad)?;
            Ok(Prediction { mask, ..prediction })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtScore {
    pub min_score: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub iou_threshold: f64,
    pub ap: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Recall with every prediction kept.
    pub recall: f64,
    pub recall_at_score: Vec<RecallAtScore>,
    pub pr_curve: Vec<PrPoint>,
    pub matches: Vec<MatchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub dataset: String,
    pub results: String,
    pub mode: EvalMode,
    pub images: usize,
    pub ground_truths: usize,
    pub predictions: usize,
    /// `"0.50"` / `"0.75"` to AP.
    pub ap_per_threshold: BTreeMap<String, f64>,
    pub thresholds: Vec<ThresholdReport>,
}

fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

impl EvalReport {
    pub fn ap(&self, iou_threshold: f64) -> Option<f64> {
        self.ap_per_threshold.get(&threshold_key(iou_threshold)).copied()
    }

    pub fn map50(&self) -> f64 {
        self.ap(0.50).expect("report covers IoU 0.50")
    }

    pub fn map75(&self) -> f64 {
        self.ap(0.75).expect("report covers IoU 0.75")
    }

    pub fn threshold(&self, iou_threshold: f64) -> Option<&ThresholdReport> {
        self.thresholds.iter().find(|t| t.iou_threshold == iou_threshold)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    /// Plain-text summary row in the shape of a training-results table.
    /// `wall_time` is whatever the caller measured (training, inference).
    pub fn summary_table(&self, wall_time: Option<&str>) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<20} {:>5} {:>7} {:>6} {:>6} {:>8} {:>8} {:>9} {:>10}",
            "Name", "Mode", "Images", "GT", "Pred", "mAP50", "mAP75", "Recall50", "Time"
        )
        .unwrap();
        let recall50 = self.threshold(0.50).map_or(0.0, |t| t.recall);
        writeln!(
            out,
            "{:<20} {:>5} {:>7} {:>6} {:>6} {:>7.2}% {:>7.2}% {:>8.2}% {:>10}",
            self.name,
            self.mode,
            self.images,
            self.ground_truths,
            self.predictions,
            self.map50() * 100.0,
            self.map75() * 100.0,
            recall50 * 100.0,
            wall_time.unwrap_or("-")
        )
        .unwrap();
        out
    }
}

/// Evaluate predictions against a dataset at IoU 0.50 and 0.75.
pub fn evaluate_dataset(dataset: &CocoDataset, predictions: &[Prediction], mode: EvalMode) -> Result<EvalReport> {
    let mut by_image: BTreeMap<u64, (Vec<Prediction>, Vec<InstanceLabel>)> =
        dataset.images.iter().map(|i| (i.image_id, Default::default())).collect();
    for p in predictions {
        by_image
            .get_mut(&p.image_id)
            .ok_or_else(|| Error::Validation(format!("prediction for image {} not in dataset", p.image_id)))?
            .0
            .push(p.clone());
    }
    for g in &dataset.labels {
        by_image
            .get_mut(&g.image_id)
            .ok_or_else(|| Error::Validation(format!("label for image {} not in dataset", g.image_id)))?
            .1
            .push(g.clone());
    }

    // IoUs do not depend on the threshold; compute once per image.
    let mut per_image = Vec::with_capacity(by_image.len());
    for (&image_id, (preds, gts)) in &by_image {
        let img = dataset.image(image_id).expect("keys come from the dataset");
        let ious = iou_matrix(preds, gts, mode, (img.height, img.width))?;
        let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
        per_image.push((image_id, scores, ious, gts.len()));
    }

    let mut ap_per_threshold = BTreeMap::new();
    let mut thresholds = Vec::new();
    for &t in &IOU_THRESHOLDS {
        let matches: Vec<MatchResult> = per_image
            .iter()
            .map(|(id, scores, ious, n)| match_with_ious(*id, scores, ious, *n, t))
            .collect();
        let curve = pr_curve(&matches)?;
        let ap = interpolated_ap(&curve);
        let total_gt = dataset.labels.len() as f64;
        let tp: usize = matches.iter().map(|m| m.true_positives).sum();
        let recall_at_score = RECALL_SCORE_CUTOFFS
            .iter()
            .map(|&min_score| {
                let hits = matches
                    .iter()
                    .flat_map(|m| &m.pairs)
                    .filter(|p| p.score >= min_score && p.ground_truth.is_some())
                    .count();
                RecallAtScore { min_score, recall: hits as f64 / total_gt }
            })
            .collect();
        ap_per_threshold.insert(threshold_key(t), ap);
        thresholds.push(ThresholdReport {
            iou_threshold: t,
            ap,
            true_positives: tp,
            false_positives: matches.iter().map(|m| m.false_positives).sum(),
            false_negatives: matches.iter().map(|m| m.false_negatives).sum(),
            recall: tp as f64 / total_gt,
            recall_at_score,
            pr_curve: curve,
            matches,
        });
    }
    Ok(EvalReport {
        name: String::new(),
        dataset: String::new(),
        results: String::new(),
        mode,
        images: dataset.images.len(),
        ground_truths: dataset.labels.len(),
        predictions: predictions.len(),
        ap_per_threshold,
        thresholds,
    })
}

/// Evaluate a results file against a COCO dataset file.
pub fn evaluate(dataset_path: &Path, results_path: &Path, mode: EvalMode) -> Result<EvalReport> {
    let dataset = read_coco(dataset_path)?;
    let records = read_results(results_path)?;
    let predictions = predictions_from_results(&records, &dataset)?;
    let mut report = evaluate_dataset(&dataset, &predictions, mode)?;
    report.dataset = dataset_path.display().to_string();
    report.results = results_path.display().to_string();
    Ok(report)
}

pub const GROUND_TRUTH_COLOR: [u8; 3] = [255, 140, 0];
pub const PREDICTION_COLOR: [u8; 3] = [0, 200, 0];

/// 3x5 glyphs for score captions; bit 2 is the left column.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

struct Canvas {
    image: RgbImage,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.image.width() && (y as u32) < self.image.height() {
            self.image.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }

    /// Outline of the pixel rectangle `[x0, x1] x [y0, y1]` (inclusive).
    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        for x in x0..=x1 {
            self.put(x, y0, color);
            self.put(x, y1, color);
        }
        for y in y0..=y1 {
            self.put(x0, y, color);
            self.put(x1, y, color);
        }
    }

    fn text(&mut self, x: i64, y: i64, text: &str, color: [u8; 3]) {
        for (i, c) in text.chars().enumerate() {
            let Some(rows) = glyph(c) else { continue };
            let ox = x + 4 * i as i64;
            for (dy, bits) in rows.iter().enumerate() {
                for dx in 0..3 {
                    if bits & (0b100 >> dx) != 0 {
                        self.put(ox + dx, y + dy as i64, color);
                    }
                }
            }
        }
    }
}

/// Inclusive pixel extent covered by a box.
fn pixel_rect(b: &BBox) -> (i64, i64, i64, i64) {
    (
        b.x.floor() as i64,
        b.y.floor() as i64,
        b.right().ceil() as i64 - 1,
        b.bottom().ceil() as i64 - 1,
    )
}

/// Draw ground truths (orange, exactly on their box perimeter) and
/// predictions (green, one pixel inside their box so coincident boxes stay
/// distinguishable, with a two-decimal score caption) over `image`.
pub fn overlay_image(image: &GrayImage, ground_truths: &[InstanceLabel], predictions: &[Prediction]) -> RgbImage {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let mut canvas = Canvas {
        image: RgbImage::from_fn(w, h, |x, y| {
            let v = image.get(y as usize, x as usize);
            Rgb([v, v, v])
        }),
    };
    for g in ground_truths {
        let (x0, y0, x1, y1) = pixel_rect(&g.bbox);
        canvas.rect(x0, y0, x1, y1, GROUND_TRUTH_COLOR);
    }
    for p in predictions {
        let (x0, y0, x1, y1) = pixel_rect(&p.bbox);
        if x1 - x0 >= 2 && y1 - y0 >= 2 {
            canvas.rect(x0 + 1, y0 + 1, x1 - 1, y1 - 1, PREDICTION_COLOR);
        } else {
            canvas.rect(x0, y0, x1, y1, PREDICTION_COLOR);
        }
        let caption = format!("{:.2}", p.score);
        let ty = if y0 >= 7 { y0 - 7 } else { y1 + 2 };
        canvas.text(x0, ty, &caption, PREDICTION_COLOR);
    }
    canvas.image
}

pub fn render_overlay(
    image: &GrayImage,
    ground_truths: &[InstanceLabel],
    predictions: &[Prediction],
    path: &Path,
) -> Result<()> {
    let rgb = overlay_image(image, ground_truths, predictions);
    let mut bytes = Vec::new();
    rgb.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
