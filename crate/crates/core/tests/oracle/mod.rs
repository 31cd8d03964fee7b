//! Independent reference implementations used to check the library.
//! Written for obviousness, not speed; none of them call the code under test.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Population variance by the textbook two-pass formula.
pub fn two_pass_variance(xs: &[f32]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    xs.iter().map(|&x| (x as f64 - mean) * (x as f64 - mean)).sum::<f64>() / n
}

/// Axis-aligned box as `(x, y, w, h)`.
pub type Rect = (f64, f64, f64, f64);

pub fn rect_iou(a: Rect, b: Rect) -> f64 {
    let ix = (a.0 + a.2).min(b.0 + b.2) - a.0.max(b.0);
    let iy = (a.1 + a.3).min(b.1 + b.3) - a.1.max(b.1);
    let inter = if ix > 0.0 && iy > 0.0 { ix * iy } else { 0.0 };
    inter / (a.2 * a.3 + b.2 * b.3 - inter)
}

/// 8-connected components by breadth-first flood fill, in raster order of
/// each component's first pixel.
pub fn flood_fill_components(height: usize, width: usize, bits: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; bits.len()];
    let mut components = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / width, i % width);
            pixels.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                        continue;
                    }
                    let j = nr as usize * width + nc as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        components.push(pixels);
    }
    components
}

#[derive(Debug, Clone)]
pub struct MicroImage {
    pub image_id: u64,
    pub gts: Vec<Rect>,
    /// `(box, score)` in submission order.
    pub preds: Vec<(Rect, f64)>,
}

pub const MICRO_FRAME: usize = 32;

fn random_rect(rng: &mut ChaCha8Rng) -> Rect {
    let w = rng.random_range(1..=12) as f64;
    let h = rng.random_range(1..=12) as f64;
    let x = rng.random_range(0..=(MICRO_FRAME - w as usize)) as f64;
    let y = rng.random_range(0..=(MICRO_FRAME - h as usize)) as f64;
    (x, y, w, h)
}

fn jitter(rng: &mut ChaCha8Rng, r: Rect) -> Rect {
    let frame = MICRO_FRAME as f64;
    let x = (r.0 + rng.random_range(-2..=2) as f64).clamp(0.0, frame - 1.0);
    let y = (r.1 + rng.random_range(-2..=2) as f64).clamp(0.0, frame - 1.0);
    let w = (r.2 + rng.random_range(-2..=2) as f64).clamp(1.0, frame - x);
    let h = (r.3 + rng.random_range(-2..=2) as f64).clamp(1.0, frame - y);
    (x, y, w, h)
}

/// Up to 5 images with up to 4 ground truths and 6 predictions each, integer
/// boxes in a 32x32 frame. Scores come from a coarse grid so ties happen.
pub fn micro_dataset(seed: u64) -> Vec<MicroImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = rng.random_range(1..=5);
    (0..images)
        .map(|i| {
            let gts: Vec<Rect> = (0..rng.random_range(0..=4)).map(|_| random_rect(&mut rng)).collect();
            let preds = (0..rng.random_range(0..=6))
                .map(|_| {
                    let rect = if !gts.is_empty() && rng.random_bool(0.7) {
                        let g = gts[rng.random_range(0..gts.len())];
                        jitter(&mut rng, g)
                    } else {
                        random_rect(&mut rng)
                    };
                    (rect, rng.random_range(0..=10) as f64 / 10.0)
                })
                .collect();
            MicroImage { image_id: i as u64 + 1, gts, preds }
        })
        .collect()
}

/// Reference evaluator: greedy per-image matching, a global score sweep, and
/// the interpolated precision read directly as a maximum over the sweep.
/// `None` when the dataset has no ground truths.
pub fn brute_force_ap(images: &[MicroImage], threshold: f64) -> Option<f64> {
    let total_gt: usize = images.iter().map(|i| i.gts.len()).sum();
    if total_gt == 0 {
        return None;
    }
    // (score, image_id, prediction index, is true positive)
    let mut sweep: Vec<(f64, u64, usize, bool)> = Vec::new();
    for image in images {
        let mut order: Vec<usize> = (0..image.preds.len()).collect();
        // Insertion sort: descending score, equal scores keep input order.
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && image.preds[order[j - 1]].1 < image.preds[order[j]].1 {
                order.swap(j - 1, j);
                j -= 1;
            }
        }
        let mut used = vec![false; image.gts.len()];
        for p in order {
            let mut best: Option<usize> = None;
            for (g, &gt) in image.gts.iter().enumerate() {
                let iou = rect_iou(image.preds[p].0, gt);
                if used[g] || iou < threshold {
                    continue;
                }
                match best {
                    Some(b) if rect_iou(image.preds[p].0, image.gts[b]) >= iou => {}
                    _ => best = Some(g),
                }
            }
            if let Some(g) = best {
                used[g] = true;
            }
            sweep.push((image.preds[p].1, image.image_id, p, best.is_some()));
        }
    }
    sweep.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, _, _, hit) in &sweep {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let level = i as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(r, _)| *r >= level)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}
