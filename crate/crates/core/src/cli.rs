//! Command-line front end. Each `cmd_*` function is the library form of one
//! subcommand; [`main`] parses arguments, runs one of them and maps errors to
//! exit codes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::content::{self, ContentDescriptor};
use crate::fidelity::{video_fidelity, FidelityScore, Metric};
use crate::harness::experiment::{
    evaluate_folds, predict_paths, train_folds, Experiment, ExperimentConfig, ExperimentReport,
    FoldTraining, PreprocessOptions,
};
use crate::labeling::{
    compare_variants, label_manifest, plan_sessions, DecayVariant, LabelingManifest, RatingTable,
    SessionPlan, VariantComparison,
};
use crate::stnet::load_checkpoint;
use crate::synth::{generate_toy_dataset, toy_experiment_config, ToyDatasetSpec};
use crate::util::{write_atomic, write_json_atomic};
use crate::vio::open_y4m;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vqlab", version, about = "Compressed-video quality laboratory")]
pub struct RunConfig {
    /// Experiment config (train, eval) or toy dataset spec (synth), TOML or JSON.
    #[arg(long, global = true, env = "VQLAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config; defaults to 0 where nothing sets it.
    #[arg(long, global = true, env = "VQLAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true, env = "VQLAB_JOBS")]
    pub jobs: Option<usize>,
    /// Output directory; the current directory when absent.
    #[arg(long, global = true, env = "VQLAB_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full-reference PSNR / SSIM / MS-SSIM per frame and per video.
    Fidelity {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        distorted: PathBuf,
        /// Comma-separated: psnr, ssim, ms-ssim.
        #[arg(long, value_delimiter = ',', default_value = "psnr")]
        metric: Vec<Metric>,
    },
    /// SI/TI of each video.
    Content {
        #[arg(required = true)]
        videos: Vec<PathBuf>,
    },
    /// Semi-automatic labels from manual anchor ratings.
    Label {
        #[arg(long)]
        manifest: PathBuf,
        /// Manual ratings CSV.
        #[arg(long)]
        manual: PathBuf,
        #[arg(long, default_value = "exp")]
        variant: DecayVariant,
        /// Full-MOS CSV to compare every decay law against.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Which videos to rate manually.
    Plan {
        /// Labeling manifest; the reference grids when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Content count for the reference grids.
        #[arg(long, default_value_t = 130, conflicts_with = "manifest")]
        contents: usize,
        #[arg(long, default_value_t = 1)]
        anchors: usize,
    },
    /// Train every fold of an experiment.
    Train,
    /// Evaluate trained folds.
    Eval,
    /// Score videos with a checkpoint; prints `path,score` lines.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        videos: Vec<PathBuf>,
    },
    /// Write a procedural toy dataset and a matching experiment config.
    Synth,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    schema_version: u32,
    status: &'static str,
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failures: Vec<FileFailure>,
}

/// One failed input of a batch command.
#[derive(Debug, Clone, Serialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub kind: String,
    pub message: String,
}

impl FileFailure {
    fn new(path: &Path, e: &Error) -> Self {
        Self {
            path: path.to_path_buf(),
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

/// Result of a batch command that keeps going past bad inputs.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub rows: Vec<T>,
    pub failures: Vec<FileFailure>,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_INTERNAL
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn metric_slug(m: Metric) -> &'static str {
    match m {
        Metric::Psnr => "psnr",
        Metric::Ssim => "ssim",
        Metric::MsSsim => "ms-ssim",
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{} is not a readable file",
            path.display()
        )))
    }
}

/// Writes `fidelity_<metric>.csv` per metric under `out`.
pub fn cmd_fidelity(
    reference: &Path,
    distorted: &Path,
    metrics: &[Metric],
    out: &Path,
) -> Result<Vec<FidelityScore>> {
    require_file(reference)?;
    require_file(distorted)?;
    let r = open_y4m(reference)?;
    let d = open_y4m(distorted)?;
    let scores = metrics
        .iter()
        .map(|&m| video_fidelity(&r, &d, m))
        .collect::<Result<Vec<_>>>()?;
    for s in &scores {
        let bytes = csv_bytes(|b| s.write_csv(b))?;
        write_atomic(
            &out.join(format!("fidelity_{}.csv", metric_slug(s.metric))),
            &bytes,
        )?;
    }
    Ok(scores)
}

/// Writes `content.csv` with one row per readable video.
pub fn cmd_content(videos: &[PathBuf], out: &Path) -> Result<Batch<ContentDescriptor>> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for p in videos {
        match open_y4m(p).and_then(|v| content::describe(&v)) {
            Ok(d) => rows.push(d),
            Err(e) => failures.push(FileFailure::new(p, &e)),
        }
    }
    let bytes = csv_bytes(|b| content::write_csv(&rows, b))?;
    write_atomic(&out.join("content.csv"), &bytes)?;
    Ok(Batch { rows, failures })
}

fn read_table(path: &Path) -> Result<RatingTable> {
    RatingTable::read_csv(fs::File::open(path)?)
}

/// Writes `imos.csv`, plus `variants.json` and `variants.csv` when a full-MOS
/// table is given.
pub fn cmd_label(
    manifest: &Path,
    manual: &Path,
    variant: DecayVariant,
    compare: Option<&Path>,
    out: &Path,
) -> Result<(RatingTable, Option<VariantComparison>)> {
    let manifest = LabelingManifest::load(manifest)?;
    let manual = read_table(manual)?;
    let full_mos = compare.map(read_table).transpose()?;
    let table = label_manifest(&manifest, &manual, variant)?;
    let comparison = full_mos
        .map(|full| compare_variants(&manual, &full, &manifest))
        .transpose()?;
    write_atomic(&out.join("imos.csv"), &csv_bytes(|b| table.write_csv(b))?)?;
    if let Some(c) = &comparison {
        write_json_atomic(&out.join("variants.json"), c)?;
        write_atomic(&out.join("variants.csv"), &csv_bytes(|b| c.write_csv(b))?)?;
    }
    Ok((table, comparison))
}

/// Writes `sessions.json`.
pub fn cmd_plan(
    manifest: &LabelingManifest,
    anchors: usize,
    seed: u64,
    out: &Path,
) -> Result<SessionPlan> {
    let plan = plan_sessions(manifest, anchors, seed)?;
    write_json_atomic(&out.join("sessions.json"), &plan)?;
    Ok(plan)
}

/// Loads and validates an experiment config, applying a seed override.
pub fn load_experiment(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

/// Trains every fold; also records the resolved config as `config.json`.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<Vec<FoldTraining>> {
    let exp = Experiment::prepare(config.clone())?;
    write_json_atomic(&out.join("config.json"), config)?;
    train_folds(&exp, out)
}

pub fn cmd_eval(config: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let exp = Experiment::prepare(config.clone())?;
    evaluate_folds(&exp, out)
}

/// Scores in input order. Preprocessing follows the settings recorded in
/// the checkpoint, or the defaults when it has none.
pub fn cmd_predict(checkpoint: &Path, videos: &[PathBuf]) -> Result<Batch<(PathBuf, f64)>> {
    let (params, manifest) = load_checkpoint(checkpoint)?;
    let options = PreprocessOptions::from_checkpoint(&manifest)?;
    let pre = options.for_model(&params.config);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (path, score) in predict_paths(&params, &pre, videos) {
        match score {
            Ok(s) => rows.push((path, s)),
            Err(e) => failures.push(FileFailure::new(&path, &e)),
        }
    }
    Ok(Batch { rows, failures })
}

/// Writes the dataset under `out` and `out/experiment.toml` pointing at it.
pub fn cmd_synth(spec: &ToyDatasetSpec, out: &Path) -> Result<PathBuf> {
    generate_toy_dataset(spec, out)?;
    let mut config = toy_experiment_config("dataset.json");
    config.seed = spec.seed;
    let text = toml::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join("experiment.toml");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn load_toy_spec(path: &Path) -> Result<ToyDatasetSpec> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

fn require_config(cli: &RunConfig) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))
}

fn batch_status<T>(batch: &Batch<T>) -> Result<(), (Error, Vec<FileFailure>)> {
    if batch.failures.is_empty() {
        Ok(())
    } else {
        Err((
            Error::InvalidArgument(format!(
                "{} of {} inputs failed",
                batch.failures.len(),
                batch.failures.len() + batch.rows.len()
            )),
            batch.failures.clone(),
        ))
    }
}

fn write_scores(rows: &[(PathBuf, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "score"])?;
    for (p, s) in rows {
        w.write_record([p.display().to_string(), format!("{s:.9}")])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: &RunConfig) -> Result<(), (Error, Vec<FileFailure>)> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = cli.seed.unwrap_or(0);
    let plain = |e: Error| (e, Vec::new());
    match &cli.command {
        Command::Fidelity {
            reference,
            distorted,
            metric,
        } => {
            let scores = cmd_fidelity(reference, distorted, metric, &out).map_err(plain)?;
            for s in scores {
                println!("{},{:.6}", metric_slug(s.metric), s.video_score);
            }
        }
        Command::Content { videos } => {
            let batch = cmd_content(videos, &out).map_err(plain)?;
            for r in &batch.rows {
                println!("{},{:.6},{:.6}", r.content_id, r.si, r.ti);
            }
            batch_status(&batch)?;
        }
        Command::Label {
            manifest,
            manual,
            variant,
            compare,
        } => {
            let (table, comparison) =
                cmd_label(manifest, manual, *variant, compare.as_deref(), &out).map_err(plain)?;
            println!("{} rows", table.len());
            if let Some(c) = comparison {
                print_json(&c).map_err(plain)?;
            }
        }
        Command::Plan {
            manifest,
            contents,
            anchors,
        } => {
            let m = match manifest {
                Some(p) => LabelingManifest::load(p).map_err(plain)?,
                None => LabelingManifest::reference(*contents),
            };
            let plan = cmd_plan(&m, *anchors, seed, &out).map_err(plain)?;
            println!(
                "{} of {} videos rated manually (ratio {:.4})",
                plan.anchors.len(),
                plan.anchors.len() + plan.inferred.len(),
                plan.workload_ratio
            );
        }
        Command::Train => {
            let config =
                load_experiment(require_config(cli).map_err(plain)?, cli.seed).map_err(plain)?;
            let folds = cmd_train(&config, &out).map_err(plain)?;
            print_json(&folds).map_err(plain)?;
        }
        Command::Eval => {
            let config =
                load_experiment(require_config(cli).map_err(plain)?, cli.seed).map_err(plain)?;
            let report = cmd_eval(&config, &out).map_err(plain)?;
            print_json(&report.summary).map_err(plain)?;
        }
        Command::Predict { checkpoint, videos } => {
            let batch = cmd_predict(checkpoint, videos).map_err(plain)?;
            for (p, s) in &batch.rows {
                println!("{},{:.6}", p.display(), s);
            }
            if cli.out.is_some() {
                write_scores(&batch.rows, &out.join("scores.csv")).map_err(plain)?;
            }
            batch_status(&batch)?;
        }
        Command::Synth => {
            let mut spec = match &cli.config {
                Some(p) => load_toy_spec(p).map_err(plain)?,
                None => ToyDatasetSpec::default(),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let path = cmd_synth(&spec, &out).map_err(plain)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the subcommand and returns the process exit code.
/// Failures are reported on stderr as one JSON object.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            return report(
                &Error::InvalidArgument("--jobs must be at least 1".into()),
                Vec::new(),
            );
        }
        // The global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err((e, failures)) => report(&e, failures),
    }
}

fn report(e: &Error, failures: Vec<FileFailure>) -> i32 {
    let body = ErrorBody {
        schema_version: crate::SCHEMA_VERSION,
        status: if failures.is_empty() {
            "error"
        } else {
            "partial"
        },
        kind: e.kind(),
        message: e.to_string(),
        failures,
    };
    eprintln!(
        "{}",
        serde_json::to_string(&body).unwrap_or_else(|_| e.to_string())
    );
    exit_code(e)
}

pub fn main() -> i32 {
    main_with(std::env::args_os())
}
