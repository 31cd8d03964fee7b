//! `--config` TOML file. Every field is optional; command-line flags win over
//! the file, and the file wins over built-in defaults.
//!
//! ```toml
//! [paths]
//! corpus = "corpus"
//! dataset = "dataset"
//! results = "results"
//!
//! [generator]
//! preset = "default"
//! count = 72
//! seed = 2024
//!
//! [split]
//! train = 0.75
//! val = 0.125
//! test = 0.125
//! seed = 7
//!
//! [dataset]
//! resize = [512, 512]
//!
//! [detector]
//! threshold_mode = { mode = "otsu" }
//! polarity = "dark"
//! min_area = 16
//! morphology_radius = 1
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use ndiscan_core::{DetectorParams, Error, Result, SplitRatios};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub preset: Option<String>,
    pub count: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// `[height, width]` of exported images; omitted means native size.
    pub resize: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    pub dataset: DatasetConfig,
    pub detector: Option<DetectorParams>,
}

pub const DEFAULT_CORPUS_DIR: &str = "corpus";
pub const DEFAULT_DATASET_DIR: &str = "dataset";
pub const DEFAULT_RESULTS_DIR: &str = "results";
pub const DEFAULT_PRESET: &str = "default";
pub const DEFAULT_COUNT: usize = 72;
pub const DEFAULT_GENERATOR_SEED: u64 = 2024;
pub const DEFAULT_SPLIT_SEED: u64 = 7;

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut config = Self::parse(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.paths.corpus,
            &mut config.paths.dataset,
            &mut config.paths.results,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let paths: Vec<&PathBuf> = [&self.paths.corpus, &self.paths.dataset, &self.paths.results]
            .into_iter()
            .flatten()
            .collect();
        for (i, a) in paths.iter().enumerate() {
            if paths[i + 1..].contains(a) {
                return Err(format!("path {} is used for two pipeline stages", a.display()));
            }
        }
        if self.split.train.is_some() || self.split.val.is_some() || self.split.test.is_some() {
            self.split_ratios(None, None, None).map_err(|e| e.to_string())?;
        }
        if let Some(name) = &self.generator.preset {
            if ndiscan_core::PresetOptions::named(name).is_none() {
                return Err(format!("unknown generator preset {name:?}"));
            }
        }
        if let Some(d) = &self.detector {
            d.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn corpus_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.paths.corpus.clone())
            .unwrap_or_else(|| DEFAULT_CORPUS_DIR.into())
    }

    pub fn dataset_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.paths.dataset.clone())
            .unwrap_or_else(|| DEFAULT_DATASET_DIR.into())
    }

    pub fn results_dir(&self) -> PathBuf {
        self.paths
            .results
            .clone()
            .unwrap_or_else(|| DEFAULT_RESULTS_DIR.into())
    }

    /// Ratios from flags, then the file, then the 56/8/8 default. A partial
    /// override keeps the remaining defaults, so the caller must keep the sum
    /// at 1.
    pub fn split_ratios(&self, train: Option<f64>, val: Option<f64>, test: Option<f64>) -> Result<SplitRatios> {
        let d = SplitRatios::DEFAULT;
        let ratios = SplitRatios {
            train: train.or(self.split.train).unwrap_or(d.train),
            val: val.or(self.split.val).unwrap_or(d.val),
            test: test.or(self.split.test).unwrap_or(d.test),
        };
        ratios.validate()?;
        Ok(ratios)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndiscan_core::ThresholdMode;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = PipelineConfig::parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.corpus_dir(None), PathBuf::from("corpus"));
        assert_eq!(c.split_ratios(None, None, None).unwrap(), SplitRatios::DEFAULT);
    }

    #[test]
    fn flags_win_over_file() {
        let c = PipelineConfig::parse("[paths]\ncorpus = \"from-file\"\n").unwrap();
        assert_eq!(c.corpus_dir(None), PathBuf::from("from-file"));
        assert_eq!(c.corpus_dir(Some("flag".into())), PathBuf::from("flag"));
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
            [paths]
            corpus = "c"
            dataset = "d"
            results = "r"
            [generator]
            preset = "small"
            count = 4
            seed = 9
            [split]
            train = 0.5
            val = 0.25
            test = 0.25
            seed = 3
            [dataset]
            resize = [128, 128]
            [detector]
            threshold_mode = { mode = "percentile", p = 20.0 }
            polarity = "dark"
            min_area = 8
        "#;
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.generator.count, Some(4));
        assert_eq!(c.dataset.resize, Some([128, 128]));
        let d = c.detector.unwrap();
        assert_eq!(d.threshold_mode, ThresholdMode::Percentile(20.0));
        assert_eq!(d.min_area, 8);
        assert_eq!(d.morphology_radius, 1);
    }

    #[test]
    fn invalid_files_rejected() {
        assert!(PipelineConfig::parse("[paths]\ncorpus = \"x\"\ndataset = \"x\"\n").is_err());
        assert!(PipelineConfig::parse("[split]\ntrain = 0.9\n").is_err());
        assert!(PipelineConfig::parse("[generator]\npreset = \"huge\"\n").is_err());
        assert!(PipelineConfig::parse("[paths]\ncorpse = \"x\"\n").is_err());
        assert!(PipelineConfig::parse("[detector]\nmin_area = 0\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "[paths]\ncorpus = \"c\"\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.corpus_dir(None), dir.path().join("c"));
        assert!(PipelineConfig::load(&dir.path().join("missing.toml")).unwrap_err().is_io());
    }
}
