//! Ultrasonic NDI defect-detection toolkit.
//!
//! Pipeline: synthesize 3D ultrasonic volumes with known defects
//! ([`synth`]), collapse each volume to a per-point variance C-scan image
//! ([`reduce`]), export labelled datasets in COCO and YOLO layouts
//! ([`annotate`]), run a classical threshold/connected-component detector
//! ([`detect`]) and score predictions with IoU-matched average precision
//! ([`eval`]).

pub mod annotate;
pub mod detect;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod reduce;
pub mod scan_model;
pub mod synth;

pub use annotate::{
    coco_to_yolo, read_coco, split_dataset, write_coco, write_split_cocos, CocoDataset, DatasetManifest,
    GroundTruthRecord, ImageRecord, InstanceLabel, SplitRatios, Splits, SPLIT_NAMES,
};
pub use detect::{detect, DetectorParams, Polarity, Prediction, ThresholdMode};
pub use error::{Error, Result};
pub use eval::{
    average_precision, evaluate, evaluate_dataset, iou_box, iou_mask, match_predictions, render_overlay,
    EvalMode, EvalReport, MatchResult,
};
pub use geometry::{BBox, Mask, Polygon};
pub use reduce::{export_png, normalize_to_gray, read_png, resize, variance_reduce};
pub use scan_model::{load_volume, read_volume, save_volume, write_volume, Frequency, GrayImage, ScanVolume, VarianceMap};
pub use synth::{
    generate_corpus, generate_volume, preset_corpus, CorpusManifest, DefectShape, DefectSpec, PanelSpec,
    PresetOptions, ThicknessRegion,
};
