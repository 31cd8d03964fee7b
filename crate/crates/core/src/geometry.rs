//! Boxes, binary masks and pixel-edge polygons in image coordinates.
//!
//! Coordinates follow the COCO convention: `x` is the column, `y` the row,
//! origin at the top-left corner of the top-left pixel. Pixel `(row, col)`
//! covers `[col, col + 1) x [row, row + 1)` and its center is
//! `(col + 0.5, row + 0.5)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x, y, w, h)` with top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn has_positive_area(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()
    }

    /// True when the box lies inside a `width` x `height` frame.
    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.right() <= width as f64
            && self.bottom() <= height as f64
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }

    /// The four corners, clockwise from the top-left.
    pub fn corners(&self) -> Polygon {
        Polygon::new(vec![
            (self.x, self.y),
            (self.right(), self.y),
            (self.right(), self.bottom()),
            (self.x, self.bottom()),
        ])
    }
}

/// Binary raster over an image frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Invariant(format!(
                "mask {height}x{width} built from {} bits",
                bits.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    /// Filled rectangle covering every pixel whose center lies in `bbox`.
    pub fn from_bbox(bbox: &BBox, height: usize, width: usize) -> Self {
        bbox.corners().rasterize(height, width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    /// Tightest pixel-aligned box around the set pixels.
    pub fn bounds(&self) -> Option<BBox> {
        let mut min_r = usize::MAX;
        let mut min_c = usize::MAX;
        let mut max_r = 0;
        let mut max_c = 0;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (r, c) = (i / self.width, i % self.width);
            min_r = min_r.min(r);
            max_r = max_r.max(r);
            min_c = min_c.min(c);
            max_c = max_c.max(c);
        }
        (min_r != usize::MAX).then(|| {
            BBox::new(
                min_c as f64,
                min_r as f64,
                (max_c - min_c + 1) as f64,
                (max_r - min_r + 1) as f64,
            )
        })
    }
}

/// Closed polygon, vertices in `(x, y)` order. The closing edge is implicit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Self {
        Polygon { vertices }
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// COCO flat form `[x1, y1, x2, y2, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "polygon has an odd number of coordinates ({})",
                flat.len()
            )));
        }
        Ok(Polygon::new(
            flat.chunks_exact(2).map(|p| (p[0], p[1])).collect(),
        ))
    }

    pub fn bounds(&self) -> Option<BBox> {
        let first = self.vertices.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.0, first.1, first.0, first.1);
        for &(x, y) in &self.vertices[1..] {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Shoelace area (absolute).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let twice: f64 = (0..n)
            .map(|i| {
                let (x0, y0) = self.vertices[i];
                let (x1, y1) = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        twice.abs() / 2.0
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Polygon {
        Polygon::new(self.vertices.iter().map(|&(x, y)| (x * sx, y * sy)).collect())
    }

    /// Even-odd fill sampled at pixel centers. A pixel is set when its center
    /// lies in the half-open span `[left, right)` between crossing pairs.
    pub fn rasterize(&self, height: usize, width: usize) -> Mask {
        let mut mask = Mask::empty(height, width);
        let n = self.vertices.len();
        if n < 3 {
            return mask;
        }
        let mut crossings = Vec::new();
        for row in 0..height {
            let yc = row as f64 + 0.5;
            crossings.clear();
            for i in 0..n {
                let (x0, y0) = self.vertices[i];
                let (x1, y1) = self.vertices[(i + 1) % n];
                if (y0 > yc) != (y1 > yc) {
                    crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            for span in crossings.chunks_exact(2) {
                let first = (span[0] - 0.5).ceil().max(0.0);
                let end = (span[1] - 0.5).ceil().min(width as f64);
                let mut col = first;
                while col < end {
                    mask.set(row, col as usize, true);
                    col += 1.0;
                }
            }
        }
        mask
    }

    /// Pixel-edge outline of the 8-connected component that contains the
    /// first set pixel of `mask` in raster order.
    ///
    /// The outline is traced clockwise along pixel borders; at vertices where
    /// two pixels touch only diagonally the walk crosses over to the diagonal
    /// neighbour, so the whole 8-connected component is enclosed by one loop.
    /// Rasterizing the result reproduces the component exactly, except that
    /// interior holes are filled. Collinear vertices are dropped.
    pub fn outline(mask: &Mask) -> Option<Polygon> {
        let (h, w) = (mask.height as i64, mask.width as i64);
        let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get(y as usize, x as usize);

        let start_index = mask.bits.iter().position(|&b| b)?;
        let start_pixel = ((start_index % mask.width) as i64, (start_index / mask.width) as i64);

        // Directed border edges, interior on the right when walking (y down).
        let mut edges: Vec<((i64, i64), (i64, i64))> = Vec::new();
        let mut outgoing: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for y in 0..h {
            for x in 0..w {
                if !fg(x, y) {
                    continue;
                }
                let mut push = |from: (i64, i64), dir: (i64, i64)| {
                    outgoing.entry(from).or_default().push(edges.len());
                    edges.push((from, dir));
                };
                if !fg(x, y - 1) {
                    push((x, y), (1, 0));
                }
                if !fg(x + 1, y) {
                    push((x + 1, y), (0, 1));
                }
                if !fg(x, y + 1) {
                    push((x + 1, y + 1), (-1, 0));
                }
                if !fg(x - 1, y) {
                    push((x, y + 1), (0, -1));
                }
            }
        }

        let start_edge = outgoing[&start_pixel]
            .iter()
            .copied()
            .find(|&e| edges[e].1 == (1, 0))
            .expect("first pixel has a top border");
        let mut corners = Vec::new();
        let mut current = start_edge;
        loop {
            let (from, dir) = edges[current];
            let to = (from.0 + dir.0, from.1 + dir.1);
            let candidates = &outgoing[&to];
            let next = if candidates.len() == 1 {
                candidates[0]
            } else {
                let cross = (dir.1, -dir.0);
                *candidates
                    .iter()
                    .find(|&&e| edges[e].1 == cross)
                    .expect("diagonal junction offers a crossing edge")
            };
            if edges[next].1 != dir {
                corners.push((to.0 as f64, to.1 as f64));
            }
            current = next;
            if current == start_edge {
                break;
            }
        }
        // The start vertex is a corner (top-left of the first pixel) and was
        // pushed last; rotate it to the front for a canonical order.
        corners.rotate_right(1);
        Some(Polygon::new(corners))
    }
}
