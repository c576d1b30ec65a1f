//! Evaluation harness: statistics, split protocols and experiment runs.

pub mod experiment;
pub mod split;
pub mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use split::{holdout_split, make_kfold, SplitPlan};
pub use stats::{krcc, plcc, rmse, srcc};

/// Correlation/error bundle for one named comparison.
///
/// A statistic is `None` when it is undefined for the data (constant
/// predictions, all-tied ranks); `degenerate` is then set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment_id: String,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    pub rmse: f64,
    pub n: usize,
    pub degenerate: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn soft(stat: Result<f64>) -> Result<Option<f64>> {
    match stat {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl EvalReport {
    /// Computes all four statistics of `predicted` against `truth`.
    pub fn evaluate(
        experiment_id: impl Into<String>,
        predicted: &[f64],
        truth: &[f64],
    ) -> Result<Self> {
        let rmse = stats::rmse(predicted, truth)?;
        if predicted.len() < 2 {
            return Err(Error::InvalidArgument(
                "correlations need at least 2 samples".into(),
            ));
        }
        let plcc = soft(stats::plcc(predicted, truth))?;
        let srcc = soft(stats::srcc(predicted, truth))?;
        let krcc = soft(stats::krcc(predicted, truth))?;
        Ok(Self {
            experiment_id: experiment_id.into(),
            degenerate: plcc.is_none() || srcc.is_none() || krcc.is_none(),
            plcc,
            srcc,
            krcc,
            rmse,
            n: predicted.len(),
            metadata: BTreeMap::new(),
        })
    }

    /// Same as [`evaluate`](Self::evaluate), but PLCC and RMSE are taken
    /// after a fitted logistic remap of the predictions.
    pub fn evaluate_logistic(
        experiment_id: impl Into<String>,
        predicted: &[f64],
        truth: &[f64],
    ) -> Result<Self> {
        let mut report = Self::evaluate(experiment_id, predicted, truth)?;
        if report.plcc.is_some() && predicted.len() >= 4 {
            let fit = stats::fit_logistic(predicted, truth)?;
            let mapped: Vec<f64> = predicted.iter().map(|&p| fit.eval(p)).collect();
            report.plcc = soft(stats::plcc(&mapped, truth))?;
            report.rmse = stats::rmse(&mapped, truth)?;
            report.degenerate |= report.plcc.is_none();
            report
                .metadata
                .insert("plcc_mapping".into(), "logistic4".into());
        }
        Ok(report)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    /// Arithmetic mean of each statistic over `reports`; a statistic that is
    /// undefined in any report is undefined in the summary.
    pub fn mean_of(experiment_id: impl Into<String>, reports: &[EvalReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no reports to summarize".into()));
        }
        let k = reports.len() as f64;
        let avg = |f: fn(&EvalReport) -> Option<f64>| -> Option<f64> {
            reports.iter().map(f).sum::<Option<f64>>().map(|s| s / k)
        };
        let plcc = avg(|r| r.plcc);
        let srcc = avg(|r| r.srcc);
        let krcc = avg(|r| r.krcc);
        Ok(Self {
            experiment_id: experiment_id.into(),
            degenerate: plcc.is_none() || srcc.is_none() || krcc.is_none(),
            plcc,
            srcc,
            krcc,
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / k,
            n: reports.iter().map(|r| r.n).sum(),
            metadata: BTreeMap::from([("folds".to_string(), reports.len().to_string())]),
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One CSV row per report.
pub fn write_reports_csv<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "experiment_id",
        "plcc",
        "srcc",
        "krcc",
        "rmse",
        "n",
        "degenerate",
    ])?;
    for r in reports {
        w.write_record([
            r.experiment_id.clone(),
            opt(r.plcc),
            opt(r.srcc),
            opt(r.krcc),
            format!("{:.6}", r.rmse),
            r.n.to_string(),
            r.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
