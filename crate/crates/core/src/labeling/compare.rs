//! Validation of semi-automatic labels and comparison of decay laws.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::law::{fit_all, infer_imos, DecayVariant};
use super::manifest::{GridPoint, LabelingManifest};
use super::table::{Provenance, RatingTable};
use crate::harness::EvalReport;
use crate::{Error, Result};

/// Agreement between full subjective MOS and semi-automatic labels, paired
/// by key.
pub fn validate_semiauto(full_mos: &RatingTable, semi: &RatingTable) -> Result<EvalReport> {
    let missing: Vec<String> = full_mos
        .keys()
        .filter(|k| semi.get(k).is_none())
        .chain(semi.keys().filter(|k| full_mos.get(k).is_none()))
        .take(5)
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing.join(", ")));
    }
    let (truth, labels): (Vec<f64>, Vec<f64>) = full_mos
        .iter()
        .map(|r| (r.mos, semi.get(&r.key()).expect("checked above").mos))
        .unzip();
    Ok(
        EvalReport::evaluate("semi-automatic vs MOS", &labels, &truth)?
            .with_meta("inferred", semi.count(Provenance::Inferred)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: DecayVariant,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-law agreement table, best PLCC first; failed laws sort last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub schema_version: u32,
    pub rows: Vec<VariantRow>,
}

impl VariantComparison {
    pub fn best(&self) -> Option<DecayVariant> {
        self.rows
            .first()
            .filter(|r| r.plcc.is_some())
            .map(|r| r.variant)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["variant", "plcc", "srcc", "krcc"])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.variant.to_string(), f(r.plcc), f(r.srcc), f(r.krcc)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds semi-automatic labels from `manual` under every law and scores
/// each against `full_mos`.
pub fn compare_variants(
    manual: &RatingTable,
    full_mos: &RatingTable,
    manifest: &LabelingManifest,
) -> Result<VariantComparison> {
    let points: Vec<GridPoint> = full_mos
        .iter()
        .map(|r| GridPoint {
            content_id: r.content_id.clone(),
            encoding: r.encoding.clone(),
        })
        .collect();
    let mut rows: Vec<VariantRow> = DecayVariant::ALL
        .iter()
        .map(|&variant| {
            let outcome = fit_all(manual, variant, |e| manifest.s_min(e))
                .and_then(|models| infer_imos(&models, &points, manual))
                .and_then(|semi| validate_semiauto(full_mos, &semi));
            match outcome {
                Ok(report) => VariantRow {
                    variant,
                    plcc: report.plcc,
                    srcc: report.srcc,
                    krcc: report.krcc,
                    error: None,
                },
                Err(e) => VariantRow {
                    variant,
                    plcc: None,
                    srcc: None,
                    krcc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.plcc, b.plcc) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.variant.cmp(&b.variant),
    });
    Ok(VariantComparison {
        schema_version: crate::SCHEMA_VERSION,
        rows,
    })
}
