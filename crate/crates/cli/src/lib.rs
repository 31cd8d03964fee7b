//! `ndiscan` command-line pipeline.
//!
//! Exit codes: 0 success, 2 validation error (bad flags, config or data),
//! 3 I/O error.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndiscan_core::{DetectorParams, Error, EvalMode, Polarity, ThresholdMode};

use crate::config::{PipelineConfig, DEFAULT_COUNT, DEFAULT_GENERATOR_SEED, DEFAULT_PRESET, DEFAULT_SPLIT_SEED};
use crate::pipeline::BuildOptions;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ndiscan", version, about = "Ultrasonic C-scan defect detection pipeline")]
pub struct Cli {
    /// Pipeline configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus of scan volumes with ground truth.
    Synth(SynthArgs),
    /// Reduce a corpus to PNG C-scans and write COCO/YOLO annotations.
    BuildDataset(BuildArgs),
    /// Run the baseline detector on one split and write a results file.
    Detect(DetectArgs),
    /// Score a results file against one split.
    Eval(EvalArgs),
    /// Draw ground truth and predictions over each image of one split.
    Overlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator preset: `default` (258x368x512) or `small` (64x96x512).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Dataset output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Split shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<f64>,
    #[arg(long)]
    pub val: Option<f64>,
    #[arg(long)]
    pub test: Option<f64>,
    /// Export size as HEIGHTxWIDTH, e.g. 512x512.
    #[arg(long, value_parser = parse_size)]
    pub resize: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Dark,
    Bright,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Results file; defaults to `<results>/<split>.results.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `otsu` or `percentile:P` with P in (0, 100).
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<ThresholdMode>,
    #[arg(long)]
    pub polarity: Option<PolarityArg>,
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long)]
    pub morphology_radius: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Box,
    Mask,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Results file; defaults to `<results>/<split>.results.json`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "box")]
    pub mode: ModeArg,
    /// Report JSON; defaults to `<results>/<split>.<mode>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Row name in the summary table; defaults to the results file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Free-form value for the summary table's Time column.
    #[arg(long)]
    pub wall_time: Option<String>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Defaults to `<results>/overlays/<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("size must be at least 1x1".into());
    }
    Ok((h, w))
}

fn parse_threshold(s: &str) -> Result<ThresholdMode, String> {
    if s == "otsu" {
        return Ok(ThresholdMode::Otsu);
    }
    let p = s
        .strip_prefix("percentile:")
        .ok_or_else(|| format!("expected `otsu` or `percentile:P`, got {s:?}"))?;
    let p: f64 = p.parse().map_err(|e| format!("percentile: {e}"))?;
    if !(p > 0.0 && p < 100.0) {
        return Err(format!("percentile {p} outside (0, 100)"));
    }
    Ok(ThresholdMode::Percentile(p))
}

/// Map a pipeline error to its exit code.
pub fn exit_code(error: &Error) -> i32 {
    if error.is_io() {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

fn results_file(config: &PipelineConfig, flag: Option<PathBuf>, split: &str) -> PathBuf {
    flag.unwrap_or_else(|| config.results_dir().join(format!("{split}.results.json")))
}

fn detector_params(config: &PipelineConfig, args: &DetectArgs) -> DetectorParams {
    let mut params = config.detector.clone().unwrap_or_default();
    if let Some(t) = args.threshold {
        params.threshold_mode = t;
    }
    if let Some(p) = args.polarity {
        params.polarity = match p {
            PolarityArg::Dark => Polarity::Dark,
            PolarityArg::Bright => Polarity::Bright,
        };
    }
    if let Some(a) = args.min_area {
        params.min_area = a;
    }
    if let Some(r) = args.morphology_radius {
        params.morphology_radius = r;
    }
    params
}

/// Run one parsed command, printing a short summary to stdout.
pub fn execute(cli: Cli) -> ndiscan_core::Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Synth(args) => {
            let out = config.corpus_dir(args.out);
            let preset = args
                .preset
                .or_else(|| config.generator.preset.clone())
                .unwrap_or_else(|| DEFAULT_PRESET.into());
            let count = args.count.or(config.generator.count).unwrap_or(DEFAULT_COUNT);
            let seed = args.seed.or(config.generator.seed).unwrap_or(DEFAULT_GENERATOR_SEED);
            let manifest = pipeline::synth(&out, &preset, count, seed)?;
            let defects: usize = manifest.panels.iter().map(|p| p.label_count).sum();
            println!(
                "synth: {} panels, {} defects, preset {preset}, seed {seed} -> {}",
                manifest.panels.len(),
                defects,
                out.display()
            );
        }
        Command::BuildDataset(args) => {
            let corpus = config.corpus_dir(args.corpus);
            let out = config.dataset_dir(args.out);
            if corpus == out {
                return Err(Error::Validation("corpus and dataset directories must differ".into()));
            }
            let options = BuildOptions {
                ratios: config.split_ratios(args.train, args.val, args.test)?,
                seed: args.seed.or(config.split.seed).unwrap_or(DEFAULT_SPLIT_SEED),
                resize: args.resize.or(config.dataset.resize.map(|[h, w]| (h, w))),
            };
            let manifest = pipeline::build_dataset(&corpus, &out, &options)?;
            let sizes: Vec<String> = manifest.split_sizes.iter().map(|(k, v)| format!("{k} {v}")).collect();
            println!(
                "build-dataset: {} images ({}) -> {}",
                manifest.images.len(),
                sizes.join(", "),
                out.display()
            );
        }
        Command::Detect(args) => {
            let dataset = config.dataset_dir(args.split.dataset.clone());
            let params = detector_params(&config, &args);
            let out = results_file(&config, args.out.clone(), &args.split.split);
            let predictions = pipeline::detect_to_file(&dataset, &args.split.split, &params, &out)?;
            println!(
                "detect: {} predictions on split {} -> {}",
                predictions.len(),
                args.split.split,
                out.display()
            );
        }
        Command::Eval(args) => {
            let dataset = config.dataset_dir(args.split.dataset);
            let split = args.split.split;
            let results = results_file(&config, args.results, &split);
            let mode = match args.mode {
                ModeArg::Box => EvalMode::Box,
                ModeArg::Mask => EvalMode::Mask,
            };
            let mut report = pipeline::eval_split(&dataset, &split, &results, mode)?;
            report.name = args.name.unwrap_or_else(|| stem(&results));
            let report_path = args
                .report
                .unwrap_or_else(|| config.results_dir().join(format!("{split}.{mode}.report.json")));
            if let Some(parent) = report_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
            }
            report.save(&report_path)?;
            print!("{}", report.summary_table(args.wall_time.as_deref()));
            println!("report -> {}", report_path.display());
        }
        Command::Overlay(args) => {
            let dataset = config.dataset_dir(args.split.dataset);
            let split = args.split.split;
            let results = results_file(&config, args.results, &split);
            let out = args
                .out
                .unwrap_or_else(|| config.results_dir().join("overlays").join(&split));
            let written = pipeline::overlay_split(&dataset, &split, &results, &out)?;
            println!("overlay: {} images -> {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("results");
    name.strip_suffix(".json")
        .map(|s| s.strip_suffix(".results").unwrap_or(s))
        .unwrap_or(name)
        .to_string()
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
