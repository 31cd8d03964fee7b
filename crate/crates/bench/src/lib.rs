//! Fixtures shared by the benchmarks.

use ndiscan_core::annotate::{CocoDataset, ImageRecord};
use ndiscan_core::synth::preset_panel;
use ndiscan_core::{
    detect, generate_volume, normalize_to_gray, variance_reduce, DetectorParams, GrayImage, InstanceLabel,
    PresetOptions, Prediction, ScanVolume,
};

/// One full-geometry panel (258x368x512) from the default preset.
pub fn default_panel(index: usize) -> (ScanVolume, Vec<InstanceLabel>) {
    let spec = preset_panel(&PresetOptions::default(), 2024, index);
    generate_volume(&spec).expect("preset panels are valid")
}

pub fn default_image(index: usize) -> (GrayImage, Vec<InstanceLabel>) {
    let (volume, labels) = default_panel(index);
    (normalize_to_gray(&variance_reduce(&volume)), labels)
}

/// A `count`-image test set with baseline predictions, built on the small
/// preset so setup stays quick.
pub fn eval_fixture(count: usize) -> (CocoDataset, Vec<Prediction>) {
    let options = PresetOptions::named("small").expect("built-in preset");
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut predictions = Vec::new();
    for i in 0..count {
        let spec = preset_panel(&options, 99, i);
        let image_id = i as u64 + 1;
        let (volume, panel_labels) = generate_volume(&spec).expect("preset panels are valid");
        let gray = normalize_to_gray(&variance_reduce(&volume));
        predictions.extend(detect(&gray, &DetectorParams::default(), image_id).expect("valid params"));
        labels.extend(panel_labels.into_iter().map(|l| InstanceLabel { image_id, ..l }));
        images.push(ImageRecord {
            image_id,
            file_name: format!("{}.png", spec.panel_id),
            width: spec.width,
            height: spec.height,
            panel_id: spec.panel_id,
        });
    }
    (CocoDataset { images, labels }, predictions)
}
