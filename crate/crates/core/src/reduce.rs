//! 3D → 2D reduction: per-point variance, grayscale normalization, bilinear
//! resizing, label rescaling and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Luma};
use rayon::prelude::*;

use crate::annotate::InstanceLabel;
use crate::error::{Error, Result};
use crate::scan_model::{GrayImage, ScanVolume, VarianceMap};

/// Population variance (divide by S) of every A-scan.
///
/// Uses the shifted single-pass form: with `k` the first sample,
/// `var = (Σ(x-k)² - (Σ(x-k))²/n) / n`, accumulated in f64. Shifting by a
/// representative sample keeps offset signals from cancelling catastrophically.
pub fn variance_reduce(volume: &ScanVolume) -> VarianceMap {
    let s = volume.samples();
    let n = s as f64;
    let values: Vec<f64> = volume
        .amplitudes()
        .par_chunks(s)
        .map(|ascan| {
            let shift = ascan[0] as f64;
            let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
            for &x in ascan {
                let d = x as f64 - shift;
                sum += d;
                sum_sq += d * d;
            }
            ((sum_sq - sum * sum / n) / n).max(0.0)
        })
        .collect();
    VarianceMap::new(volume.height(), volume.width(), values).expect("variance is finite and non-negative")
}

/// Min–max scale to `[0, 255]`, rounding half away from zero. A constant map
/// becomes all zeros.
pub fn normalize_to_gray(map: &VarianceMap) -> GrayImage {
    let values = map.values();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pixels = if hi > lo {
        let span = hi - lo;
        values
            .iter()
            .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; values.len()]
    };
    GrayImage::new(map.height(), map.width(), pixels).expect("same shape as the map")
}

/// Corner-aligned source coordinate of destination index `i`: the first and
/// last destination pixels sample the first and last source pixels exactly.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst <= 1 || src <= 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

/// Bilinear resize with corner-aligned sampling.
pub fn resize(image: &GrayImage, target_h: usize, target_w: usize) -> Result<GrayImage> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Validation(format!(
            "resize target {target_h}x{target_w} must be at least 1x1"
        )));
    }
    let (h, w) = (image.height(), image.width());
    if (h, w) == (target_h, target_w) {
        return Ok(image.clone());
    }
    let cols: Vec<(usize, usize, f64)> = (0..target_w)
        .map(|c| {
            let x = source_coord(c, w, target_w);
            let x0 = (x.floor() as usize).min(w - 1);
            (x0, (x0 + 1).min(w - 1), x - x0 as f64)
        })
        .collect();
    let mut pixels = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let y = source_coord(r, h, target_h);
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for &(x0, x1, fx) in &cols {
            let p = |row, col| image.get(row, col) as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(target_h, target_w, pixels)
}

/// Map labels from a `from` frame to a `to` frame, both `(height, width)`.
/// Boxes and polygon vertices scale by `to_w / from_w` and `to_h / from_h`;
/// masks follow by rasterizing the scaled polygon.
pub fn scale_labels(
    labels: &[InstanceLabel],
    from: (usize, usize),
    to: (usize, usize),
) -> Result<Vec<InstanceLabel>> {
    let (from_h, from_w) = from;
    let (to_h, to_w) = to;
    if from_h == 0 || from_w == 0 || to_h == 0 || to_w == 0 {
        return Err(Error::Validation(format!(
            "cannot scale between {from_h}x{from_w} and {to_h}x{to_w}"
        )));
    }
    let sx = to_w as f64 / from_w as f64;
    let sy = to_h as f64 / from_h as f64;
    labels
        .iter()
        .map(|label| {
            label.validate(from_w, from_h).map_err(|e| {
                Error::Validation(format!("label on image {}: {e}", label.image_id))
            })?;
            Ok(InstanceLabel {
                image_id: label.image_id,
                bbox: label.bbox.scaled(sx, sy),
                polygon: label.polygon.as_ref().map(|p| p.scaled(sx, sy)),
            })
        })
        .collect()
}

/// Encode as an 8-bit single-channel PNG.
pub fn encode_png(image: &GrayImage) -> Result<Vec<u8>> {
    let buffer = image::ImageBuffer::<Luma<u8>, _>::from_raw(
        image.width() as u32,
        image.height() as u32,
        image.pixels().to_vec(),
    )
    .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    buffer
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(bytes)
}

pub fn export_png(image: &GrayImage, path: &Path) -> Result<()> {
    let bytes = encode_png(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decode a PNG into grayscale. Color input is converted with the codec's
/// luma weights.
pub fn read_png(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    let gray = decoded.into_luma8();
    let (w, h) = gray.dimensions();
    GrayImage::new(h as usize, w as usize, gray.into_raw())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::scan_model::Frequency;

    fn volume_from(points: Vec<Vec<f32>>, h: usize, w: usize) -> ScanVolume {
        let s = points[0].len();
        ScanVolume::new(h, w, s, Frequency::Mhz5_0, points.concat(), "v").unwrap()
    }

    #[test]
    fn constant_point_has_zero_variance() {
        let v = volume_from(vec![vec![3.25; 512], vec![-1.0; 512]], 1, 2);
        assert_eq!(variance_reduce(&v).values(), &[0.0, 0.0]);
    }

    #[test]
    fn alternating_zero_two_has_unit_variance() {
        let ascan: Vec<f32> = (0..1024).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let v = volume_from(vec![ascan], 1, 1);
        assert_eq!(variance_reduce(&v).values(), &[1.0]);
    }

    #[test]
    fn map_shape_follows_grid() {
        let v = ScanVolume::new(3, 5, 512, Frequency::Mhz2_5, vec![0.5; 3 * 5 * 512], "v").unwrap();
        let m = variance_reduce(&v);
        assert_eq!((m.height(), m.width()), (3, 5));
    }

    #[test]
    fn gray_of_three_levels() {
        let m = VarianceMap::new(1, 3, vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(normalize_to_gray(&m).pixels(), &[0, 128, 255]);
    }

    #[test]
    fn gray_of_constant_map() {
        let m = VarianceMap::new(2, 2, vec![4.0; 4]).unwrap();
        assert_eq!(normalize_to_gray(&m).pixels(), &[0; 4]);
    }

    #[test]
    fn resize_identity_and_targets() {
        let img = GrayImage::new(2, 3, vec![0, 10, 20, 30, 40, 50]).unwrap();
        assert_eq!(resize(&img, 2, 3).unwrap(), img);
        let big = resize(&img, 3, 5).unwrap();
        // Corner-aligned: corners preserved, midpoints interpolated.
        assert_eq!(big.get(0, 0), 0);
        assert_eq!(big.get(2, 4), 50);
        assert_eq!(big.get(0, 2), 10);
        assert_eq!(big.get(1, 0), 15);
        assert!(resize(&img, 0, 3).is_err());
        let one = resize(&img, 1, 1).unwrap();
        assert_eq!(one.pixels(), &[0]);
    }

    #[test]
    fn scale_labels_doubles() {
        let l = InstanceLabel {
            image_id: 1,
            bbox: BBox::new(10.0, 10.0, 20.0, 20.0),
            polygon: Some(BBox::new(10.0, 10.0, 20.0, 20.0).corners()),
        };
        let s = scale_labels(std::slice::from_ref(&l), (258, 368), (516, 736)).unwrap();
        assert_eq!(s[0].bbox, BBox::new(20.0, 20.0, 40.0, 40.0));
        assert_eq!(s[0].polygon.as_ref().unwrap().bounds(), Some(s[0].bbox));
        assert_eq!(scale_labels(std::slice::from_ref(&l), (258, 368), (258, 368)).unwrap(), vec![l.clone()]);

        let outside = InstanceLabel {
            bbox: BBox::new(360.0, 0.0, 20.0, 5.0),
            polygon: None,
            ..l
        };
        assert!(scale_labels(&[outside], (258, 368), (512, 512)).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.png");
        let img = GrayImage::filled(4, 4, 0).unwrap();
        export_png(&img, &path).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
        assert!(read_png(&dir.path().join("missing.png")).unwrap_err().is_io());
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(read_png(&path), Err(Error::Image { .. })));
    }
}
