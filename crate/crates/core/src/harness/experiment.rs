//! Fold-wise training and evaluation of the quality network on a video
//! dataset manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{cross_dataset, holdout_split, make_kfold, SplitPlan};
use super::{write_reports_csv, EvalReport};
use crate::preprocess::{
    preprocess_video, CubeBatch, PreprocessConfig, SaliencySource, DEFAULT_SALIENCY_THRESHOLD,
};
use crate::stnet::{
    global_feature, load_checkpoint, preprocess_for, save_checkpoint, train_stage1, train_stage2,
    CheckpointManifest, NetworkParams, Preset, Stage1Config, Stage2Config, StnetConfig, Tensor,
};
use crate::util::{write_atomic, write_json_atomic};
use crate::vio::open_y4m;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub path: PathBuf,
    pub content_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_step: Option<f64>,
    pub mos: f64,
}

/// Videos with subjective scores. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    /// Native score scale; labels are mapped linearly onto [0, 1] when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos_range: Option<[f64; 2]>,
    pub videos: Vec<VideoEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)?
        } else {
            serde_json::from_str(&text)?
        };
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::Config(format!(
                "dataset `{}` lists no videos",
                self.name
            )));
        }
        if let Some([lo, hi]) = self.mos_range {
            if !(hi > lo) {
                return Err(Error::Config(format!("mos_range [{lo}, {hi}] is empty")));
            }
        }
        for v in &self.videos {
            let l = self.normalize(v.mos);
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::OutOfRange(format!(
                    "{}: score {} falls outside [0, 1] after normalization; set mos_range",
                    v.path.display(),
                    v.mos
                )));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, mos: f64) -> f64 {
        match self.mos_range {
            Some([lo, hi]) => (mos - lo) / (hi - lo),
            None => mos,
        }
    }

    pub fn resolve(&self, entry: &VideoEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn content_ids(&self) -> Vec<String> {
        self.videos
            .iter()
            .map(|v| v.content_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Every referenced file that does not exist.
    pub fn missing_assets(&self) -> Vec<PathBuf> {
        self.videos
            .iter()
            .map(|v| self.resolve(v))
            .filter(|p| !p.is_file())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    Kfold {
        k: usize,
    },
    Holdout {
        test_fraction: f64,
    },
    /// Train on the whole dataset, test on every video of another one.
    CrossDataset {
        test_dataset: PathBuf,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Kfold { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    pub threshold: f64,
    pub saliency: SaliencySource,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_SALIENCY_THRESHOLD,
            saliency: SaliencySource::Heuristic,
        }
    }
}

impl PreprocessOptions {
    /// Settings the trainer recorded in a checkpoint; defaults when absent.
    pub fn from_checkpoint(manifest: &CheckpointManifest) -> Result<Self> {
        match manifest.extra.get("preprocess") {
            Some(v) => Ok(serde_json::from_value(v.clone())?),
            None => Ok(Self::default()),
        }
    }

    pub fn for_model(&self, model: &StnetConfig) -> PreprocessConfig {
        preprocess_for(
            model,
            &PreprocessConfig {
                threshold: self.threshold,
                saliency: self.saliency.clone(),
                ..PreprocessConfig::default()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub dataset: PathBuf,
    pub split: SplitSpec,
    pub preset: Preset,
    /// Full network override; the preset is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<StnetConfig>,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub preprocess: PreprocessOptions,
    pub seed: u64,
    /// Fit a 4-parameter logistic before PLCC/RMSE.
    pub logistic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "experiment".into(),
            dataset: PathBuf::from("dataset.json"),
            split: SplitSpec::default(),
            preset: Preset::Toy,
            model: None,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            preprocess: PreprocessOptions::default(),
            seed: 0,
            logistic: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML or JSON; relative dataset paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        let dir = path.parent().unwrap_or(Path::new(""));
        if c.dataset.is_relative() {
            c.dataset = dir.join(&c.dataset);
        }
        if let SplitSpec::CrossDataset { test_dataset } = &mut c.split {
            if test_dataset.is_relative() {
                *test_dataset = dir.join(&*test_dataset);
            }
        }
        Ok(c)
    }

    pub fn model_config(&self) -> StnetConfig {
        self.model
            .clone()
            .unwrap_or_else(|| StnetConfig::preset(self.preset))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.stage1.batch_size == 0 || self.stage2.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.stage1.lr >= 0.0 && self.stage2.adam.lr >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !(self.preprocess.threshold > 0.0 && self.preprocess.threshold < 1.0) {
            return Err(Error::Config(
                "saliency threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Datasets, split and derived settings of one experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train_set: DatasetManifest,
    pub test_set: Option<DatasetManifest>,
    pub plan: SplitPlan,
}

impl Experiment {
    /// Loads the datasets, checks that every asset exists and builds the
    /// split. Nothing is trained here.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let train_set = DatasetManifest::load(&config.dataset)?;
        let test_set = match &config.split {
            SplitSpec::CrossDataset { test_dataset } => Some(DatasetManifest::load(test_dataset)?),
            _ => None,
        };
        let mut missing = train_set.missing_assets();
        if let Some(t) = &test_set {
            missing.extend(t.missing_assets());
        }
        if !missing.is_empty() {
            return Err(Error::MissingAssets(missing));
        }
        let ids = train_set.content_ids();
        let plan = match &config.split {
            SplitSpec::Kfold { k } => make_kfold(&ids, *k, config.seed)?,
            SplitSpec::Holdout { test_fraction } => {
                holdout_split(&ids, *test_fraction, config.seed)?
            }
            SplitSpec::CrossDataset { .. } => cross_dataset(
                &ids,
                &test_set.as_ref().expect("loaded above").content_ids(),
            )?,
        };
        Ok(Self {
            config,
            train_set,
            test_set,
            plan,
        })
    }

    fn fold_videos<'a>(
        &'a self,
        ids: &[String],
        test: bool,
    ) -> Vec<(&'a DatasetManifest, &'a VideoEntry)> {
        let set = match (&self.test_set, test) {
            (Some(t), true) => t,
            _ => &self.train_set,
        };
        let ids: BTreeSet<&String> = ids.iter().collect();
        set.videos
            .iter()
            .filter(|v| ids.contains(&v.content_id))
            .map(|v| (set, v))
            .collect()
    }

    fn fold_seed(&self, fold: usize) -> u64 {
        self.config.seed.wrapping_add(fold as u64)
    }
}

fn load_batches(
    videos: &[(&DatasetManifest, &VideoEntry)],
    pre: &PreprocessConfig,
) -> Result<Vec<Vec<CubeBatch>>> {
    videos
        .par_iter()
        .map(|(set, v)| {
            let video = open_y4m(&set.resolve(v))?;
            preprocess_video(&video, pre)
        })
        .collect()
}

fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold{fold}"))
}

pub fn checkpoint_path(out: &Path, fold: usize) -> PathBuf {
    fold_dir(out, fold).join("model.json")
}

pub fn plan_path(out: &Path) -> PathBuf {
    out.join("split.json")
}

/// What training produced for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTraining {
    pub fold: usize,
    pub train_videos: usize,
    pub train_cubes: usize,
    pub stage1_final_loss: Option<f64>,
    pub stage2_final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Trains stage 1 then stage 2 on each fold's training contents and writes
/// `split.json`, `fold<i>/model.json` and loss curves under `out`.
pub fn train_folds(exp: &Experiment, out: &Path) -> Result<Vec<FoldTraining>> {
    let model_cfg = exp.config.model_config();
    let pre = exp.config.preprocess.for_model(&model_cfg);
    write_json_atomic(&plan_path(out), &exp.plan)?;
    let mut summaries = Vec::new();
    for (i, fold) in exp.plan.folds.iter().enumerate() {
        let videos = exp.fold_videos(&fold.train, false);
        if videos.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fold {i} has no training videos"
            )));
        }
        let labels: Vec<f64> = videos.iter().map(|(s, v)| s.normalize(v.mos)).collect();
        let batches = load_batches(&videos, &pre)?;
        let mut cubes = Vec::new();
        let mut cube_labels = Vec::new();
        for (b, &label) in batches.iter().zip(&labels) {
            for cube in b.iter().flat_map(|s| &s.cubes) {
                cubes.push(cube.data.clone());
                cube_labels.push(label);
            }
        }
        let seed = exp.fold_seed(i);
        let mut params = NetworkParams::init(model_cfg.clone(), seed)?;
        let s1 = Stage1Config {
            seed,
            ..exp.config.stage1.clone()
        };
        let curve1 = train_stage1(&mut params, &cubes, &cube_labels, &s1)?;
        let globals: Vec<Tensor> = batches
            .iter()
            .map(|b| global_feature(b, &params))
            .collect::<Result<_>>()?;
        let s2 = Stage2Config {
            seed,
            ..exp.config.stage2.clone()
        };
        let curve2 = train_stage2(&mut params, &globals, &labels, &s2)?;
        let dir = fold_dir(out, i);
        curve1.write_csv(&dir.join("loss_stage1.csv"))?;
        curve2.write_csv(&dir.join("loss_stage2.csv"))?;
        let ckpt = checkpoint_path(out, i);
        let extra = serde_json::json!({
            "experiment_id": exp.config.experiment_id,
            "fold": i,
            "preprocess": exp.config.preprocess,
        });
        save_checkpoint(&params, &ckpt, extra)?;
        summaries.push(FoldTraining {
            fold: i,
            train_videos: videos.len(),
            train_cubes: cubes.len(),
            stage1_final_loss: curve1.last(),
            stage2_final_loss: curve2.last(),
            checkpoint: ckpt,
        });
    }
    write_json_atomic(&out.join("training.json"), &summaries)?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub fold: usize,
    pub content_id: String,
    pub path: PathBuf,
    pub label: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment_id: String,
    pub folds: Vec<EvalReport>,
    pub summary: EvalReport,
    pub predictions: Vec<Prediction>,
}

impl ExperimentReport {
    /// `report.json`, `report.csv` (fold rows then the summary row) and
    /// `predictions.csv`.
    pub fn write(&self, out: &Path) -> Result<()> {
        write_json_atomic(&out.join("report.json"), self)?;
        let mut rows = self.folds.clone();
        rows.push(self.summary.clone());
        let mut csv_bytes = Vec::new();
        write_reports_csv(&rows, &mut csv_bytes)?;
        write_atomic(&out.join("report.csv"), &csv_bytes)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fold", "content_id", "path", "label", "predicted"])?;
        for p in &self.predictions {
            w.write_record([
                p.fold.to_string(),
                p.content_id.clone(),
                p.path.display().to_string(),
                format!("{:.9}", p.label),
                format!("{:.9}", p.predicted),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(&out.join("predictions.csv"), &bytes)
    }
}

/// Scores each fold's test videos with the checkpoint written by
/// [`train_folds`] and summarizes the folds by their mean.
pub fn evaluate_folds(exp: &Experiment, out: &Path) -> Result<ExperimentReport> {
    let saved: SplitPlan = serde_json::from_slice(&fs::read(plan_path(out))?)?;
    if saved != exp.plan {
        return Err(Error::Config(format!(
            "{} was written for a different split; retrain first",
            plan_path(out).display()
        )));
    }
    let mut folds = Vec::new();
    let mut predictions = Vec::new();
    for (i, fold) in exp.plan.folds.iter().enumerate() {
        let (params, _) = load_checkpoint(&checkpoint_path(out, i))?;
        let pre = exp.config.preprocess.for_model(&params.config);
        let videos = exp.fold_videos(&fold.test, true);
        if videos.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "fold {i} has no test videos"
            )));
        }
        let batches = load_batches(&videos, &pre)?;
        let predicted = batches
            .iter()
            .map(|b| params.regress(&global_feature(b, &params)?))
            .collect::<Result<Vec<f64>>>()?;
        let labels: Vec<f64> = videos.iter().map(|(s, v)| s.normalize(v.mos)).collect();
        let id = format!("{}/fold{i}", exp.config.experiment_id);
        let report = if exp.config.logistic {
            EvalReport::evaluate_logistic(id, &predicted, &labels)?
        } else {
            EvalReport::evaluate(id, &predicted, &labels)?
        };
        folds.push(
            report
                .with_meta("fold", i)
                .with_meta("test_contents", fold.test.len()),
        );
        for ((_, v), (&p, &l)) in videos.iter().zip(predicted.iter().zip(&labels)) {
            predictions.push(Prediction {
                fold: i,
                content_id: v.content_id.clone(),
                path: v.path.clone(),
                label: l,
                predicted: p,
            });
        }
    }
    let summary = EvalReport::mean_of(format!("{}/mean", exp.config.experiment_id), &folds)?;
    let report = ExperimentReport {
        schema_version: crate::SCHEMA_VERSION,
        experiment_id: exp.config.experiment_id.clone(),
        folds,
        summary,
        predictions,
    };
    report.write(out)?;
    Ok(report)
}

/// Train then evaluate every fold.
pub fn run_experiment(config: ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let exp = Experiment::prepare(config)?;
    train_folds(&exp, out)?;
    evaluate_folds(&exp, out)
}

/// Scores for ad-hoc videos, in input order; failures stay per-file.
pub fn predict_paths(
    params: &NetworkParams,
    pre: &PreprocessConfig,
    paths: &[PathBuf],
) -> Vec<(PathBuf, Result<f64>)> {
    let pre = preprocess_for(&params.config, pre);
    paths
        .par_iter()
        .map(|p| {
            let score =
                open_y4m(p).and_then(|v| crate::stnet::predict_video_quality(&v, params, &pre));
            (p.clone(), score)
        })
        .collect()
}
