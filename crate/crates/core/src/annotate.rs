//! Dataset assembly: instance labels, train/val/test splits, COCO JSON and
//! YOLO segmentation labels.
//!
//! Labels live in original image coordinates; [`crate::reduce::scale_labels`]
//! maps them to a resized frame when one is requested.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Polygon};

pub const DEFECT_CATEGORY_ID: u64 = 1;
pub const DEFECT_CATEGORY_NAME: &str = "defect";
/// Class index of "defect" in YOLO label files.
pub const YOLO_CLASS: usize = 0;

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// One ground-truth defect instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabel {
    pub image_id: u64,
    pub bbox: BBox,
    pub polygon: Option<Polygon>,
}

impl InstanceLabel {
    /// Check the label against a `width` x `height` image.
    pub fn validate(&self, width: usize, height: usize) -> std::result::Result<(), String> {
        if !self.bbox.has_positive_area() {
            return Err(format!("bbox {:?} has no area", <[f64; 4]>::from(self.bbox)));
        }
        if !self.bbox.within(width, height) {
            return Err(format!(
                "bbox {:?} outside {width}x{height} image",
                <[f64; 4]>::from(self.bbox)
            ));
        }
        if let Some(polygon) = &self.polygon {
            let Some(b) = polygon.bounds() else {
                return Err("segmentation polygon has no vertices".into());
            };
            let off = [
                (b.x - self.bbox.x).abs(),
                (b.y - self.bbox.y).abs(),
                (b.right() - self.bbox.right()).abs(),
                (b.bottom() - self.bbox.bottom()).abs(),
            ];
            if off.iter().any(|&d| d > 1.0) {
                return Err(format!(
                    "polygon bounds {:?} disagree with bbox {:?} by more than 1 px",
                    <[f64; 4]>::from(b),
                    <[f64; 4]>::from(self.bbox)
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelRecord {
    bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<f64>>,
}

/// Generator ground truth for one panel, stored next to its volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub panel_id: String,
    pub height: usize,
    pub width: usize,
    labels: Vec<LabelRecord>,
}

impl GroundTruthRecord {
    pub fn new(panel_id: &str, height: usize, width: usize, labels: &[InstanceLabel]) -> Self {
        GroundTruthRecord {
            panel_id: panel_id.to_string(),
            height,
            width,
            labels: labels
                .iter()
                .map(|l| LabelRecord {
                    bbox: l.bbox,
                    polygon: l.polygon.as_ref().map(Polygon::to_flat),
                })
                .collect(),
        }
    }

    /// The labels, tagged with `image_id`.
    pub fn labels(&self, image_id: u64) -> Result<Vec<InstanceLabel>> {
        self.labels
            .iter()
            .map(|r| {
                Ok(InstanceLabel {
                    image_id,
                    bbox: r.bbox,
                    polygon: r.polygon.as_deref().map(Polygon::from_flat).transpose()?,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// One exported image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
    pub panel_id: String,
}

/// Fractions of the corpus assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// 56 / 8 / 8 out of 72.
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 56.0 / 72.0,
        val: 8.0 / 72.0,
        test: 8.0 / 72.0,
    };

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Validation(format!("split ratios {r:?} must be non-negative")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("split ratios {r:?} sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::DEFAULT
    }
}

/// Split name to member image ids.
pub type Splits = BTreeMap<String, Vec<u64>>;

/// Shuffle `image_ids` with `seed`, then cut the shuffled list into
/// contiguous train/val/test runs. Run lengths are the largest-remainder
/// rounding of `ratio * n`, so they always sum to `n`. Each split's ids are
/// returned in ascending order.
pub fn split_dataset(image_ids: &[u64], ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    if image_ids.is_empty() {
        return Err(Error::Validation("cannot split an empty image list".into()));
    }
    let unique: HashSet<_> = image_ids.iter().collect();
    if unique.len() != image_ids.len() {
        return Err(Error::Validation("image ids must be unique".into()));
    }

    let n = image_ids.len();
    let quotas = ratios.as_array().map(|r| r * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // Largest fractional part first; earlier split wins ties.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    for (i, name) in SPLIT_NAMES.iter().enumerate() {
        if ratios.as_array()[i] > 0.0 && counts[i] == 0 {
            return Err(Error::Validation(format!(
                "split {name} rounds to 0 of {n} images"
            )));
        }
    }

    let mut shuffled = image_ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = Splits::new();
    let mut rest = shuffled.as_slice();
    for (name, count) in SPLIT_NAMES.iter().zip(counts) {
        let (head, tail) = rest.split_at(count);
        let mut ids = head.to_vec();
        ids.sort_unstable();
        splits.insert(name.to_string(), ids);
        rest = tail;
    }
    Ok(splits)
}

/// The exported dataset: images, their split membership and the split seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<ImageRecord>,
    pub splits: Splits,
    pub split_sizes: BTreeMap<String, usize>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(images: Vec<ImageRecord>, splits: Splits, seed: u64) -> Result<Self> {
        let known: HashSet<u64> = images.iter().map(|i| i.image_id).collect();
        if known.len() != images.len() {
            return Err(Error::Validation("duplicate image ids in manifest".into()));
        }
        let mut seen = HashSet::new();
        for (name, ids) in &splits {
            for id in ids {
                if !known.contains(id) {
                    return Err(Error::Validation(format!("split {name} lists unknown image {id}")));
                }
                if !seen.insert(*id) {
                    return Err(Error::Validation(format!("image {id} appears in two splits")));
                }
            }
        }
        if seen.len() != known.len() {
            return Err(Error::Validation("splits do not cover every image".into()));
        }
        let split_sizes = splits.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        Ok(DatasetManifest {
            images,
            splits,
            split_sizes,
            seed,
        })
    }

    pub fn split_images(&self, split: &str) -> Result<Vec<ImageRecord>> {
        let ids = self
            .splits
            .get(split)
            .ok_or_else(|| Error::Validation(format!("unknown split {split:?}")))?;
        let by_id: HashMap<u64, &ImageRecord> = self.images.iter().map(|i| (i.image_id, i)).collect();
        Ok(ids.iter().map(|id| by_id[id].clone()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: DatasetManifest = read_json(path)?;
        DatasetManifest::new(raw.images, raw.splits, raw.seed)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: BBox,
    #[serde(default)]
    segmentation: Vec<Vec<f64>>,
    #[serde(default)]
    area: f64,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Images and labels of one COCO file.
#[derive(Debug, Clone, PartialEq)]
pub struct CocoDataset {
    pub images: Vec<ImageRecord>,
    pub labels: Vec<InstanceLabel>,
}

impl CocoDataset {
    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn labels_for(&self, image_id: u64) -> Vec<InstanceLabel> {
        self.labels.iter().filter(|l| l.image_id == image_id).cloned().collect()
    }
}

/// Write a COCO file for `images` and `labels`. Annotation ids run 1..=n
/// in label order.
pub fn write_coco(images: &[ImageRecord], labels: &[InstanceLabel], path: &Path) -> Result<()> {
    let dims: HashMap<u64, (usize, usize)> =
        images.iter().map(|i| (i.image_id, (i.width, i.height))).collect();
    if dims.len() != images.len() {
        return Err(Error::Validation("duplicate image ids".into()));
    }
    let mut annotations = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let id = i as u64 + 1;
        let &(w, h) = dims.get(&label.image_id).ok_or_else(|| {
            Error::Validation(format!(
                "annotation {id} refers to image {} which is not in the dataset",
                label.image_id
            ))
        })?;
        label
            .validate(w, h)
            .map_err(|e| Error::Validation(format!("annotation {id}: {e}")))?;
        let (segmentation, area) = match &label.polygon {
            Some(p) => (vec![p.to_flat()], p.area()),
            None => (Vec::new(), label.bbox.area()),
        };
        annotations.push(CocoAnnotation {
            id,
            image_id: label.image_id,
            category_id: DEFECT_CATEGORY_ID,
            bbox: label.bbox,
            segmentation,
            area,
            iscrowd: 0,
        });
    }
    let file = CocoFile {
        images: images
            .iter()
            .map(|i| CocoImage {
                id: i.image_id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
        categories: vec![CocoCategory {
            id: DEFECT_CATEGORY_ID,
            name: DEFECT_CATEGORY_NAME.into(),
        }],
    };
    write_json(&file, path)
}

/// Write `<dir>/<split>.json` for every split in `manifest`.
pub fn write_split_cocos(
    manifest: &DatasetManifest,
    labels: &[InstanceLabel],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for split in manifest.splits.keys() {
        let images = manifest.split_images(split)?;
        let members: HashSet<u64> = images.iter().map(|i| i.image_id).collect();
        let split_labels: Vec<InstanceLabel> = labels
            .iter()
            .filter(|l| members.contains(&l.image_id))
            .cloned()
            .collect();
        let path = dir.join(format!("{split}.json"));
        write_coco(&images, &split_labels, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

fn file_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
        .to_string()
}

/// Parse and validate a COCO file.
pub fn read_coco(path: &Path) -> Result<CocoDataset> {
    let file: CocoFile = read_json(path)?;
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    if !file.categories.iter().any(|c| c.id == DEFECT_CATEGORY_ID) {
        return Err(bad(format!("category {DEFECT_CATEGORY_ID} ({DEFECT_CATEGORY_NAME}) missing")));
    }
    let mut dims = HashMap::new();
    let mut images = Vec::with_capacity(file.images.len());
    for img in file.images {
        if img.width == 0 || img.height == 0 {
            return Err(bad(format!("image {} has empty dimensions", img.id)));
        }
        if dims.insert(img.id, (img.width, img.height)).is_some() {
            return Err(bad(format!("duplicate image id {}", img.id)));
        }
        images.push(ImageRecord {
            image_id: img.id,
            panel_id: file_stem(&img.file_name),
            file_name: img.file_name,
            width: img.width,
            height: img.height,
        });
    }
    let mut ids = HashSet::new();
    let mut labels = Vec::with_capacity(file.annotations.len());
    for ann in file.annotations {
        let id = ann.id;
        if !ids.insert(id) {
            return Err(bad(format!("duplicate annotation id {id}")));
        }
        if ann.category_id != DEFECT_CATEGORY_ID {
            return Err(bad(format!("annotation {id} has unknown category {}", ann.category_id)));
        }
        if ann.iscrowd != 0 {
            return Err(bad(format!("annotation {id} is a crowd annotation")));
        }
        let &(w, h) = dims
            .get(&ann.image_id)
            .ok_or_else(|| bad(format!("annotation {id} refers to missing image {}", ann.image_id)))?;
        let polygon = match ann.segmentation.as_slice() {
            [] => None,
            [flat] => Some(Polygon::from_flat(flat).map_err(|e| bad(format!("annotation {id}: {e}")))?),
            _ => return Err(bad(format!("annotation {id} has more than one polygon"))),
        };
        let label = InstanceLabel {
            image_id: ann.image_id,
            bbox: ann.bbox,
            polygon,
        };
        label
            .validate(w, h)
            .map_err(|e| bad(format!("annotation {id}: {e}")))?;
        labels.push(label);
    }
    Ok(CocoDataset { images, labels })
}

/// YOLO segmentation line for one label: class index then normalized
/// polygon vertices, six decimals each. Labels without a polygon use their
/// box corners.
pub fn yolo_line(label: &InstanceLabel, width: usize, height: usize) -> String {
    let polygon = label.polygon.clone().unwrap_or_else(|| label.bbox.corners());
    let mut line = YOLO_CLASS.to_string();
    for &(x, y) in polygon.vertices() {
        let nx = (x / width as f64).clamp(0.0, 1.0);
        let ny = (y / height as f64).clamp(0.0, 1.0);
        write!(line, " {nx:.6} {ny:.6}").expect("writing to a String");
    }
    line.push('\n');
    line
}

/// Write one YOLO label file `<stem>.txt` per image of the COCO file at
/// `coco_path` into `out_dir`. Normalization uses each image's own
/// dimensions, so the files are valid for any resize of those images.
pub fn coco_to_yolo(coco_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let dataset = read_coco(coco_path)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut per_image: BTreeMap<u64, String> =
        dataset.images.iter().map(|i| (i.image_id, String::new())).collect();
    for label in &dataset.labels {
        let img = dataset.image(label.image_id).expect("validated by read_coco");
        per_image
            .get_mut(&label.image_id)
            .expect("validated")
            .push_str(&yolo_line(label, img.width, img.height));
    }
    let mut written = Vec::with_capacity(dataset.images.len());
    for img in &dataset.images {
        let path = out_dir.join(format!("{}.txt", file_stem(&img.file_name)));
        fs::write(&path, &per_image[&img.image_id]).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Parse a YOLO label file back into normalized polygons.
pub fn read_yolo_labels(path: &Path) -> Result<Vec<Polygon>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: &str| {
        Error::Validation(format!("{}:{}: {msg}", path.display(), line + 1))
    };
    let mut polygons = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut fields = line.split_ascii_whitespace();
        let class: usize = fields
            .next()
            .ok_or_else(|| bad(n, "empty line"))?
            .parse()
            .map_err(|_| bad(n, "class index is not an integer"))?;
        if class != YOLO_CLASS {
            return Err(bad(n, "unknown class index"));
        }
        let coords: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(n, "coordinate is not a number")))
            .collect::<Result<_>>()?;
        if coords.len() < 6 || coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(bad(n, "need at least three vertices in [0, 1]"));
        }
        polygons.push(Polygon::from_flat(&coords)?);
    }
    Ok(polygons)
}
