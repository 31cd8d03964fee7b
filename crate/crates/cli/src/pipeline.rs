//! One function per subcommand. Each stage reads the previous stage's files
//! and writes its own; nothing is shared in memory between stages.
//!
//! Dataset directory layout written by [`build_dataset`]:
//!
//! ```text
//! manifest.json                  image records, splits, split seed
//! images/<split>/<panel>.png     8-bit grayscale C-scans
//! annotations/<split>.json       COCO instances, one file per split
//! labels/<split>/<panel>.txt     YOLO segmentation labels
//! data.yaml                      YOLO dataset description
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndiscan_core::annotate::coco_to_yolo;
use ndiscan_core::eval::{predictions_from_results, read_results, write_results};
use ndiscan_core::reduce::scale_labels;
use ndiscan_core::synth::MANIFEST_FILE;
use ndiscan_core::{
    detect, evaluate, export_png, generate_corpus, load_volume, normalize_to_gray, preset_corpus, read_coco,
    read_png, render_overlay, resize, split_dataset, variance_reduce, write_split_cocos, CorpusManifest,
    DatasetManifest, DetectorParams, Error, EvalMode, EvalReport, GroundTruthRecord, ImageRecord,
    InstanceLabel, Prediction, PresetOptions, Result, SplitRatios, SPLIT_NAMES,
};
use rayon::prelude::*;

pub const DATASET_MANIFEST: &str = "manifest.json";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

pub fn images_dir(dataset: &Path, split: &str) -> PathBuf {
    dataset.join("images").join(split)
}

pub fn labels_dir(dataset: &Path, split: &str) -> PathBuf {
    dataset.join("labels").join(split)
}

pub fn annotations_path(dataset: &Path, split: &str) -> PathBuf {
    dataset.join("annotations").join(format!("{split}.json"))
}

pub fn synth(out: &Path, preset: &str, count: usize, seed: u64) -> Result<CorpusManifest> {
    let options = PresetOptions::named(preset)
        .ok_or_else(|| Error::Validation(format!("unknown generator preset {preset:?}")))?;
    if count == 0 {
        return Err(Error::Validation("--count must be at least 1".into()));
    }
    generate_corpus(&preset_corpus(&options, seed, count), out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Export size `(height, width)`; `None` keeps the scan grid.
    pub resize: Option<(usize, usize)>,
}

fn load_corpus(corpus: &Path) -> Result<CorpusManifest> {
    let manifest_path = corpus.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Validation(format!("no corpus manifest at {}", manifest_path.display())));
    }
    let manifest = CorpusManifest::load(corpus)?;
    if manifest.panels.is_empty() {
        return Err(Error::Validation(format!("corpus {} lists no panels", corpus.display())));
    }
    for entry in &manifest.panels {
        for file in [&entry.volume, &entry.labels] {
            let path = corpus.join(file);
            if !path.is_file() {
                return Err(Error::Validation(format!(
                    "corpus entry {} references missing {}",
                    entry.panel_id,
                    path.display()
                )));
            }
        }
    }
    Ok(manifest)
}

/// Refuse to overwrite a directory that is not an earlier dataset.
fn check_replaceable(out: &Path) -> Result<()> {
    if !out.exists() {
        return Ok(());
    }
    let empty = fs::read_dir(out).map_err(io(out))?.next().is_none();
    if empty || out.join(DATASET_MANIFEST).is_file() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} exists and is not a dataset directory; refusing to replace it",
            out.display()
        )))
    }
}

/// Reduce every corpus volume to a PNG and write manifest, COCO, YOLO labels
/// and `data.yaml`. Output is assembled in a staging directory next to `out`
/// and moved into place only when complete, so a failure leaves no partial
/// dataset behind.
pub fn build_dataset(corpus: &Path, out: &Path, options: &BuildOptions) -> Result<DatasetManifest> {
    let corpus_manifest = load_corpus(corpus)?;
    options.ratios.validate()?;
    if let Some((h, w)) = options.resize {
        if h == 0 || w == 0 {
            return Err(Error::Validation(format!("resize target {h}x{w} must be at least 1x1")));
        }
    }
    check_replaceable(out)?;

    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".ndiscan-dataset-")
        .tempdir_in(&parent)
        .map_err(io(&parent))?;
    let stage = staging.path();
    // Temporary directories are created owner-only; a dataset is shared data.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(stage, fs::Permissions::from_mode(0o755)).map_err(io(stage))?;
    }

    let ids: Vec<u64> = (1..=corpus_manifest.panels.len() as u64).collect();
    let splits = split_dataset(&ids, options.ratios, options.seed)?;
    let split_of = |id: u64| {
        splits
            .iter()
            .find(|(_, members)| members.contains(&id))
            .map(|(name, _)| name.as_str())
            .expect("splits cover every id")
    };
    for split in SPLIT_NAMES {
        let dir = images_dir(stage, split);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
    }

    let exported: Vec<(ImageRecord, Vec<InstanceLabel>)> = corpus_manifest
        .panels
        .par_iter()
        .zip(ids.par_iter())
        .map(|(entry, &image_id)| {
            let volume = load_volume(&corpus.join(&entry.volume))?;
            let record = GroundTruthRecord::load(&corpus.join(&entry.labels))?;
            let native = (volume.height(), volume.width());
            if (record.height, record.width) != native {
                return Err(Error::Validation(format!(
                    "labels of {} are for {}x{}, volume is {}x{}",
                    entry.panel_id, record.height, record.width, native.0, native.1
                )));
            }
            let mut gray = normalize_to_gray(&variance_reduce(&volume));
            drop(volume);
            let mut labels = record.labels(image_id)?;
            if let Some((h, w)) = options.resize {
                gray = resize(&gray, h, w)?;
                labels = scale_labels(&labels, native, (h, w))?;
            }
            let file_name = format!("{}.png", entry.panel_id);
            export_png(&gray, &images_dir(stage, split_of(image_id)).join(&file_name))?;
            let image = ImageRecord {
                image_id,
                file_name,
                width: gray.width(),
                height: gray.height(),
                panel_id: entry.panel_id.clone(),
            };
            Ok((image, labels))
        })
        .collect::<Result<_>>()?;

    let (images, labels): (Vec<ImageRecord>, Vec<Vec<InstanceLabel>>) = exported.into_iter().unzip();
    let labels: Vec<InstanceLabel> = labels.into_iter().flatten().collect();
    let manifest = DatasetManifest::new(images, splits, options.seed)?;
    manifest.save(&stage.join(DATASET_MANIFEST))?;
    write_split_cocos(&manifest, &labels, &stage.join("annotations"))?;
    for split in SPLIT_NAMES {
        coco_to_yolo(&annotations_path(stage, split), &labels_dir(stage, split))?;
    }
    let yaml = stage.join("data.yaml");
    fs::write(&yaml, DATA_YAML).map_err(io(&yaml))?;

    if out.exists() {
        fs::remove_dir_all(out).map_err(io(out))?;
    }
    fs::rename(stage, out).map_err(io(out))?;
    Ok(manifest)
}

const DATA_YAML: &str = "path: .\ntrain: images/train\nval: images/val\ntest: images/test\nnames:\n  0: defect\n";

pub fn load_dataset(dataset: &Path) -> Result<DatasetManifest> {
    let path = dataset.join(DATASET_MANIFEST);
    if !path.is_file() {
        return Err(Error::Validation(format!("no dataset manifest at {}", path.display())));
    }
    DatasetManifest::load(&path)
}

/// Run the baseline detector over every image of `split`, in manifest order.
pub fn detect_split(dataset: &Path, split: &str, params: &DetectorParams) -> Result<Vec<Prediction>> {
    params.validate()?;
    let manifest = load_dataset(dataset)?;
    let images = manifest.split_images(split)?;
    let per_image: Vec<Vec<Prediction>> = images
        .par_iter()
        .map(|image| {
            let gray = read_png(&images_dir(dataset, split).join(&image.file_name))?;
            detect(&gray, params, image.image_id)
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn detect_to_file(dataset: &Path, split: &str, params: &DetectorParams, out: &Path) -> Result<Vec<Prediction>> {
    let predictions = detect_split(dataset, split, params)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    write_results(&predictions, out)?;
    Ok(predictions)
}

fn split_annotations(dataset: &Path, split: &str) -> Result<PathBuf> {
    if !SPLIT_NAMES.contains(&split) {
        return Err(Error::Validation(format!("unknown split {split:?}; expected one of {SPLIT_NAMES:?}")));
    }
    let path = annotations_path(dataset, split);
    if !path.is_file() {
        return Err(Error::Validation(format!("no annotations at {}", path.display())));
    }
    Ok(path)
}

pub fn eval_split(dataset: &Path, split: &str, results: &Path, mode: EvalMode) -> Result<EvalReport> {
    let annotations = split_annotations(dataset, split)?;
    if !results.is_file() {
        return Err(Error::Validation(format!("no results file at {}", results.display())));
    }
    evaluate(&annotations, results, mode)
}

/// Write one overlay PNG per image of `split`, named after the image file.
pub fn overlay_split(dataset: &Path, split: &str, results: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let annotations = split_annotations(dataset, split)?;
    let coco = read_coco(&annotations)?;
    let predictions = predictions_from_results(&read_results(results)?, &coco)?;
    fs::create_dir_all(out).map_err(io(out))?;
    coco.images
        .par_iter()
        .map(|image| {
            let gray = read_png(&images_dir(dataset, split).join(&image.file_name))?;
            let gts = coco.labels_for(image.image_id);
            let preds: Vec<Prediction> =
                predictions.iter().filter(|p| p.image_id == image.image_id).cloned().collect();
            let path = out.join(&image.file_name);
            render_overlay(&gray, &gts, &preds, &path)?;
            Ok(path)
        })
        .collect()
}
