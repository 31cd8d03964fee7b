//! Seeded generator of synthetic through-transmission scans with embedded
//! insert defects and exact instance ground truth.
//!
//! Every A-scan is the sum of up to three Gaussian-windowed tone bursts plus
//! white Gaussian noise:
//!
//! * a weak front-wall echo centred at `pulse_width / 2`,
//! * the transmitted back-wall pulse at the thickness region's index,
//! * over a defect, a weak insert echo at
//!   `round(front + depth_fraction * (back - front))`, while the back-wall
//!   pulse is scaled by `1 - attenuation` (the insert shadows it).
//!
//! Shadowing removes most of the signal energy at defect points, so defects
//! show up as low-variance regions of the reduced image.
//!
//! Noise at `(row, col)` comes from a ChaCha stream selected by the point, so
//! every A-scan is reproducible on its own and generation order is irrelevant.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{GroundTruthRecord, InstanceLabel};
use crate::error::{Error, Result};
use crate::geometry::{Mask, Polygon};
use crate::scan_model::{save_volume, Frequency, ScanVolume, ALLOWED_SAMPLES};

pub const FRONT_WALL_AMPLITUDE: f64 = 0.1;
/// Reference pulse amplitude; noise levels are quoted relative to it.
pub const BACK_WALL_AMPLITUDE: f64 = 1.0;
/// Insert echo amplitude per unit of attenuation.
pub const DEFECT_REFLECTIVITY: f64 = 0.15;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectShape {
    Rectangle,
    Ellipse,
}

/// One embedded insert. The footprint is the `extent_rows` x `extent_cols`
/// rectangle whose top-left point is `(center_row - extent_rows / 2,
/// center_col - extent_cols / 2)`; ellipses keep the points of that
/// rectangle whose centres fall inside the inscribed ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub center_row: usize,
    pub center_col: usize,
    pub shape: DefectShape,
    pub extent_rows: usize,
    pub extent_cols: usize,
    pub depth_fraction: f64,
    pub attenuation: f64,
}

impl DefectSpec {
    /// `(top, left)` of the footprint rectangle, if it does not underflow.
    fn origin(&self) -> Option<(usize, usize)> {
        Some((
            self.center_row.checked_sub(self.extent_rows / 2)?,
            self.center_col.checked_sub(self.extent_cols / 2)?,
        ))
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        match self.origin() {
            Some((top, left)) => top + self.extent_rows <= height && left + self.extent_cols <= width,
            None => false,
        }
    }

    /// Whether the point `(row, col)` lies in the footprint.
    pub fn covers(&self, row: usize, col: usize) -> bool {
        let Some((top, left)) = self.origin() else {
            return false;
        };
        if row < top || col < left || row >= top + self.extent_rows || col >= left + self.extent_cols {
            return false;
        }
        match self.shape {
            DefectShape::Rectangle => true,
            DefectShape::Ellipse => {
                let ry = self.extent_rows as f64 / 2.0;
                let rx = self.extent_cols as f64 / 2.0;
                let dy = (row - top) as f64 + 0.5 - ry;
                let dx = (col - left) as f64 + 0.5 - rx;
                (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
            }
        }
    }

    pub fn footprint(&self, height: usize, width: usize) -> Mask {
        let mut mask = Mask::empty(height, width);
        if let Some((top, left)) = self.origin() {
            for row in top..(top + self.extent_rows).min(height) {
                for col in left..(left + self.extent_cols).min(width) {
                    if self.covers(row, col) {
                        mask.set(row, col, true);
                    }
                }
            }
        }
        mask
    }

    fn validate(&self, index: usize, height: usize, width: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("defect {index}: {msg}")));
        if self.extent_rows < 2 || self.extent_cols < 2 {
            return fail(format!(
                "extent {}x{} below the 2-point minimum",
                self.extent_rows, self.extent_cols
            ));
        }
        if !(self.depth_fraction > 0.0 && self.depth_fraction < 1.0) {
            return fail(format!("depth_fraction {} outside (0, 1)", self.depth_fraction));
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return fail(format!("attenuation {} outside (0, 1]", self.attenuation));
        }
        if !self.fits(height, width) {
            return fail(format!(
                "footprint centred at ({}, {}) leaves the {height}x{width} grid",
                self.center_row, self.center_col
            ));
        }
        Ok(())
    }
}

/// Columns `[col_start, col_end)` share one back-wall sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThicknessRegion {
    pub col_start: usize,
    pub col_end: usize,
    pub back_wall_index: usize,
}

/// Everything needed to synthesize one panel scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub panel_id: String,
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub frequency_mhz: Frequency,
    pub thickness_regions: Vec<ThicknessRegion>,
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
    pub noise_sigma: f64,
    pub pulse_width_samples: usize,
    pub seed: u64,
}

impl PanelSpec {
    pub fn front_wall_index(&self) -> usize {
        self.pulse_width_samples / 2
    }

    pub fn back_wall_index(&self, col: usize) -> usize {
        self.thickness_regions
            .iter()
            .find(|r| col >= r.col_start && col < r.col_end)
            .map(|r| r.back_wall_index)
            .expect("validated regions partition the columns")
    }

    fn defect_echo_index(&self, defect: &DefectSpec, back: usize) -> usize {
        let front = self.front_wall_index() as f64;
        (front + defect.depth_fraction * (back as f64 - front)).round() as usize
    }

    /// Check every invariant except defect overlap (see [`generate_volume`]).
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("panel {}: {msg}", self.panel_id)));
        if self.height == 0 || self.width == 0 {
            return fail(format!("empty grid {}x{}", self.height, self.width));
        }
        if !ALLOWED_SAMPLES.contains(&self.samples) {
            return fail(format!("samples {} not in {ALLOWED_SAMPLES:?}", self.samples));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if self.pulse_width_samples == 0 {
            return fail("pulse_width_samples must be >= 1".into());
        }
        let mut expected_start = 0;
        for region in &self.thickness_regions {
            if region.col_start != expected_start || region.col_end <= region.col_start {
                return fail(format!(
                    "thickness regions must tile 0..{} in order; got {}..{} where {} was expected",
                    self.width, region.col_start, region.col_end, expected_start
                ));
            }
            if region.back_wall_index >= self.samples
                || region.back_wall_index <= self.pulse_width_samples
            {
                return fail(format!(
                    "back wall index {} must lie in ({}, {})",
                    region.back_wall_index, self.pulse_width_samples, self.samples
                ));
            }
            expected_start = region.col_end;
        }
        if expected_start != self.width {
            return fail(format!(
                "thickness regions cover 0..{expected_start}, grid width is {}",
                self.width
            ));
        }
        let front = self.front_wall_index();
        for (i, defect) in self.defects.iter().enumerate() {
            defect.validate(i, self.height, self.width)?;
            let (_, left) = defect.origin().expect("validated");
            for region in self
                .thickness_regions
                .iter()
                .filter(|r| r.col_start < left + defect.extent_cols && r.col_end > left)
            {
                let echo = self.defect_echo_index(defect, region.back_wall_index);
                if echo <= front || echo >= region.back_wall_index {
                    return fail(format!(
                        "defect {i} echo at sample {echo} is not strictly between front wall {front} and back wall {}",
                        region.back_wall_index
                    ));
                }
            }
        }
        Ok(())
    }

    fn defect_at(&self, row: usize, col: usize) -> Option<&DefectSpec> {
        self.defects.iter().find(|d| d.covers(row, col))
    }
}

/// Gaussian-windowed cosine burst of `width` samples centred at `center`,
/// accumulated into `out`. The window's standard deviation is `width / 6`
/// and the burst is truncated at `±width / 2`.
fn add_pulse(out: &mut [f64], center: usize, width: usize, amplitude: f64, cycles: f64) {
    if amplitude == 0.0 {
        return;
    }
    let half = width / 2;
    let sigma = (width as f64 / 6.0).max(0.5);
    let period = width as f64 / cycles;
    let lo = center.saturating_sub(half);
    let hi = (center + half).min(out.len().saturating_sub(1));
    for (n, slot) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let t = n as f64 - center as f64;
        let envelope = (-0.5 * (t / sigma).powi(2)).exp();
        *slot += amplitude * envelope * (std::f64::consts::TAU * t / period).cos();
    }
}

fn carrier_cycles(frequency: Frequency) -> f64 {
    match frequency {
        Frequency::Mhz2_5 => 2.0,
        Frequency::Mhz5_0 => 4.0,
    }
}

fn synthesize_point(panel: &PanelSpec, row: usize, col: usize, defect: Option<&DefectSpec>, out: &mut [f32]) {
    let mut signal = vec![0.0f64; panel.samples];
    let width = panel.pulse_width_samples;
    let cycles = carrier_cycles(panel.frequency_mhz);
    let back = panel.back_wall_index(col);

    add_pulse(&mut signal, panel.front_wall_index(), width, FRONT_WALL_AMPLITUDE, cycles);
    let mut back_amplitude = BACK_WALL_AMPLITUDE;
    if let Some(d) = defect {
        back_amplitude *= 1.0 - d.attenuation;
        let echo = panel.defect_echo_index(d, back);
        add_pulse(&mut signal, echo, width, DEFECT_REFLECTIVITY * d.attenuation, cycles);
    }
    add_pulse(&mut signal, back, width, back_amplitude, cycles);

    if panel.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(panel.seed);
        rng.set_stream(((row as u64) << 32) | col as u64);
        for s in signal.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *s += panel.noise_sigma * z;
        }
    }
    for (dst, src) in out.iter_mut().zip(&signal) {
        *dst = *src as f32;
    }
}

/// The A-scan at `(row, col)`.
pub fn generate_ascan(panel: &PanelSpec, row: usize, col: usize) -> Result<Vec<f32>> {
    if row >= panel.height || col >= panel.width {
        return Err(Error::OutOfBounds {
            row,
            col,
            height: panel.height,
            width: panel.width,
        });
    }
    panel.validate()?;
    let mut out = vec![0.0; panel.samples];
    synthesize_point(panel, row, col, panel.defect_at(row, col), &mut out);
    Ok(out)
}

fn footprints(panel: &PanelSpec) -> Result<Vec<Mask>> {
    let masks: Vec<Mask> = panel
        .defects
        .iter()
        .map(|d| d.footprint(panel.height, panel.width))
        .collect();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if masks[i].intersection_count(&masks[j]) > 0 {
                return Err(Error::Validation(format!(
                    "panel {}: defects {i} and {j} overlap",
                    panel.panel_id
                )));
            }
        }
    }
    Ok(masks)
}

/// Ground-truth instances for `panel` (image id 0, point coordinates).
pub fn panel_labels(panel: &PanelSpec) -> Result<Vec<InstanceLabel>> {
    panel.validate()?;
    Ok(footprints(panel)?
        .iter()
        .map(|mask| {
            let polygon = Polygon::outline(mask).expect("footprint of at least 2x2 points is non-empty");
            InstanceLabel {
                image_id: 0,
                bbox: mask.bounds().expect("non-empty"),
                polygon: Some(polygon),
            }
        })
        .collect())
}

/// Synthesize the full volume and its instance labels.
pub fn generate_volume(panel: &PanelSpec) -> Result<(ScanVolume, Vec<InstanceLabel>)> {
    let labels = panel_labels(panel)?;
    let masks = footprints(panel)?;
    let (w, s) = (panel.width, panel.samples);
    let mut amplitudes = vec![0.0f32; panel.height * w * s];
    amplitudes
        .par_chunks_mut(w * s)
        .enumerate()
        .for_each(|(row, line)| {
            for (col, ascan) in line.chunks_mut(s).enumerate() {
                let defect = masks
                    .iter()
                    .position(|m| m.get(row, col))
                    .map(|i| &panel.defects[i]);
                synthesize_point(panel, row, col, defect, ascan);
            }
        });
    let volume = ScanVolume::new(
        panel.height,
        w,
        s,
        panel.frequency_mhz,
        amplitudes,
        panel.panel_id.clone(),
    )?;
    Ok((volume, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub panel_id: String,
    pub volume: PathBuf,
    pub labels: PathBuf,
    pub label_count: usize,
    pub seed: u64,
}

/// Index of a generated corpus; paths are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub panels: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }
}

pub fn volume_file_name(panel_id: &str) -> String {
    format!("{panel_id}.usv")
}

pub fn labels_file_name(panel_id: &str) -> String {
    format!("{panel_id}.labels.json")
}

fn validate_corpus(specs: &[PanelSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Validation("corpus needs at least one panel".into()));
    }
    let mut ids = HashSet::new();
    let mut seeds = HashSet::new();
    for spec in specs {
        if spec.panel_id.is_empty()
            || spec.panel_id.contains(['/', '\\'])
            || spec.panel_id.starts_with('.')
        {
            return Err(Error::Validation(format!(
                "panel id {:?} is not a plain file stem",
                spec.panel_id
            )));
        }
        if !ids.insert(spec.panel_id.as_str()) {
            return Err(Error::Validation(format!("duplicate panel_id {}", spec.panel_id)));
        }
        if !seeds.insert(spec.seed) {
            return Err(Error::Validation(format!(
                "panel {} reuses seed {}",
                spec.panel_id, spec.seed
            )));
        }
        spec.validate()?;
        footprints(spec)?;
    }
    Ok(())
}

/// Write one volume and one ground-truth record per spec into `dir`, plus
/// `manifest.json`. All specs are validated before anything is written.
pub fn generate_corpus(specs: &[PanelSpec], dir: &Path) -> Result<CorpusManifest> {
    validate_corpus(specs)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut panels = Vec::with_capacity(specs.len());
    for spec in specs {
        let (volume, labels) = generate_volume(spec)?;
        let volume_name = volume_file_name(&spec.panel_id);
        save_volume(&volume, &dir.join(&volume_name))?;
        drop(volume);

        let labels_name = labels_file_name(&spec.panel_id);
        let record = GroundTruthRecord::new(&spec.panel_id, spec.height, spec.width, &labels);
        record.save(&dir.join(&labels_name))?;

        panels.push(CorpusEntry {
            panel_id: spec.panel_id.clone(),
            volume: volume_name.into(),
            labels: labels_name.into(),
            label_count: labels.len(),
            seed: spec.seed,
        });
    }
    let manifest = CorpusManifest { panels };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Knobs of the procedural panel preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetOptions {
    pub height: usize,
    pub width: usize,
    pub samples: usize,
    pub min_defects: usize,
    pub max_defects: usize,
    pub attenuation: (f64, f64),
    pub noise_sigma: (f64, f64),
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            height: 258,
            width: 368,
            samples: 512,
            min_defects: 3,
            max_defects: 6,
            attenuation: (0.5, 0.9),
            noise_sigma: (0.02, 0.05),
        }
    }
}

impl PresetOptions {
    pub const NAMES: [&'static str; 2] = ["default", "small"];

    /// `default` is the full 258x368x512 geometry; `small` keeps the signal
    /// model but shrinks the grid to 64x96 for quick runs.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "small" => Some(PresetOptions {
                height: 64,
                width: 96,
                min_defects: 1,
                max_defects: 3,
                ..Self::default()
            }),
            _ => None,
        }
    }
}

/// Panel `index` of the procedural preset seeded by `seed`. Each panel draws
/// from its own ChaCha stream, so panel `i` is the same whatever the corpus
/// size.
pub fn preset_panel(options: &PresetOptions, seed: u64, index: usize) -> PanelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);

    let (h, w, s) = (options.height, options.width, options.samples);
    let scale = s as f64 / 512.0;
    let pulse_width = (160.0 * scale) as usize;
    let back_lo = (340.0 * scale) as usize;
    let back_hi = (420.0 * scale) as usize;

    let region_count = rng.random_range(1..=3usize).min(w);
    let mut cuts: Vec<usize> = (1..region_count)
        .map(|_| rng.random_range(1..w.max(2)))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(w);
    let thickness_regions = bounds
        .windows(2)
        .map(|pair| ThicknessRegion {
            col_start: pair[0],
            col_end: pair[1],
            back_wall_index: rng.random_range(back_lo..=back_hi),
        })
        .collect();

    let wanted = rng.random_range(options.min_defects..=options.max_defects.max(options.min_defects));
    let mut defects: Vec<DefectSpec> = Vec::with_capacity(wanted);
    // Padded rectangles already placed: (top, left, bottom, right), exclusive.
    let mut occupied: Vec<(usize, usize, usize, usize)> = Vec::new();
    const MARGIN: usize = 4;
    const GAP: usize = 6;
    let mut attempts = 0;
    while defects.len() < wanted && attempts < 500 {
        attempts += 1;
        let extent_rows = rng.random_range(10..=36usize).min(h.saturating_sub(2 * MARGIN));
        let extent_cols = rng.random_range(10..=56usize).min(w.saturating_sub(2 * MARGIN));
        if extent_rows < 2 || extent_cols < 2 {
            break;
        }
        let top = rng.random_range(MARGIN..=h - MARGIN - extent_rows);
        let left = rng.random_range(MARGIN..=w - MARGIN - extent_cols);
        let (bottom, right) = (top + extent_rows, left + extent_cols);
        let clashes = occupied.iter().any(|&(t, l, b, r)| {
            top < b + GAP && t < bottom + GAP && left < r + GAP && l < right + GAP
        });
        let shape = if rng.random_bool(0.5) {
            DefectShape::Rectangle
        } else {
            DefectShape::Ellipse
        };
        let depth_fraction = rng.random_range(0.25..0.75);
        let attenuation = rng.random_range(options.attenuation.0..=options.attenuation.1);
        if clashes {
            continue;
        }
        occupied.push((top, left, bottom, right));
        defects.push(DefectSpec {
            center_row: top + extent_rows / 2,
            center_col: left + extent_cols / 2,
            shape,
            extent_rows,
            extent_cols,
            depth_fraction,
            attenuation,
        });
    }

    let frequency_mhz = if rng.random_bool(0.5) {
        Frequency::Mhz2_5
    } else {
        Frequency::Mhz5_0
    };
    let noise_sigma = rng.random_range(options.noise_sigma.0..=options.noise_sigma.1);
    let panel_seed = rng.random::<u64>();

    PanelSpec {
        panel_id: format!("panel-{:03}", index + 1),
        height: h,
        width: w,
        samples: s,
        frequency_mhz,
        thickness_regions,
        defects,
        noise_sigma,
        pulse_width_samples: pulse_width,
        seed: panel_seed,
    }
}

/// `count` preset panels.
pub fn preset_corpus(options: &PresetOptions, seed: u64, count: usize) -> Vec<PanelSpec> {
    (0..count).map(|i| preset_panel(options, seed, i)).collect()
}
