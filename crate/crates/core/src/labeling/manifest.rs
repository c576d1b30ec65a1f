//! Labeling manifests: which contents are encoded at which levels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{lambda_to_pseudo_qsteps, qp_to_qstep_in, Encoder, EncodingDescriptor, QP_RANGE};
use crate::{Error, Result};

/// Default rank scale for lambda-parameterized encoders.
pub const DEFAULT_RANK_SCALE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderGrid {
    pub encoder: Encoder,
    /// Qp values, or lambdas for learned codecs.
    pub levels: Vec<f64>,
    /// Explicit quantization steps, one per level. Overrides the built-in
    /// mappings when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_steps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_scale: Option<f64>,
}

impl EncoderGrid {
    pub fn new(encoder: Encoder, levels: Vec<f64>) -> Self {
        Self {
            encoder,
            levels,
            q_steps: None,
            qp_range: None,
            rank_scale: None,
        }
    }

    /// Quantization step of every level, in level order.
    pub fn q_steps(&self) -> Result<Vec<f64>> {
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} grid has no levels",
                self.encoder
            )));
        }
        let steps = match &self.q_steps {
            Some(explicit) => {
                if explicit.len() != self.levels.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{}: {} q_steps for {} levels",
                        self.encoder,
                        explicit.len(),
                        self.levels.len()
                    )));
                }
                explicit.clone()
            }
            None if self.encoder.is_qp_based() => self
                .levels
                .iter()
                .map(|&qp| qp_to_qstep_in(&self.encoder, qp, self.qp_range.unwrap_or(QP_RANGE)))
                .collect::<Result<_>>()?,
            None => lambda_to_pseudo_qsteps(
                &self.levels,
                self.rank_scale.unwrap_or(DEFAULT_RANK_SCALE),
            )?,
        };
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "{}: q_steps must be positive",
                self.encoder
            )));
        }
        Ok(steps)
    }

    /// Finest quantization step of the grid.
    pub fn s_min(&self) -> Result<f64> {
        Ok(self.q_steps()?.into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn descriptors(&self) -> Result<Vec<EncodingDescriptor>> {
        Ok(self
            .levels
            .iter()
            .zip(self.q_steps()?)
            .map(|(&level_param, q_step)| EncodingDescriptor {
                encoder: self.encoder.clone(),
                level_param,
                q_step,
            })
            .collect())
    }
}

/// A video to be labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub content_id: String,
    pub encoding: EncodingDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingManifest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub contents: Vec<String>,
    pub encoders: Vec<EncoderGrid>,
}

fn schema_version() -> u32 {
    crate::SCHEMA_VERSION
}

impl LabelingManifest {
    pub fn new(contents: Vec<String>, encoders: Vec<EncoderGrid>) -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            contents,
            encoders,
        }
    }

    /// The three encoder grids of the reference database: VVC and AVS3 at
    /// four Qps each, HLVC at four lambdas.
    pub fn reference_grids() -> Vec<EncoderGrid> {
        vec![
            EncoderGrid::new(Encoder::Vvc, vec![32.0, 37.0, 42.0, 47.0]),
            EncoderGrid::new(Encoder::Avs3, vec![39.0, 45.0, 51.0, 57.0]),
            EncoderGrid::new(Encoder::Hlvc, vec![256.0, 512.0, 1024.0, 2048.0]),
        ]
    }

    /// `n` generated content ids over the reference grids.
    pub fn reference(n_contents: usize) -> Self {
        Self::new(
            (0..n_contents).map(|i| format!("content_{i:03}")).collect(),
            Self::reference_grids(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            _ => serde_json::from_str(&text)?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contents.is_empty() || self.encoders.is_empty() {
            return Err(Error::InvalidArgument(
                "manifest has no contents or no encoders".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.contents {
            if !seen.insert(c) {
                return Err(Error::InvalidArgument(format!("duplicate content `{c}`")));
            }
        }
        let mut enc = std::collections::BTreeSet::new();
        for g in &self.encoders {
            if !enc.insert(&g.encoder) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate encoder `{}`",
                    g.encoder
                )));
            }
            let steps = g.q_steps()?;
            let mut levels = g.levels.clone();
            levels.sort_by(f64::total_cmp);
            if levels.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "{}: duplicate level",
                    g.encoder
                )));
            }
            let mut sorted = steps.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "{}: duplicate q_step",
                    g.encoder
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self, encoder: &Encoder) -> Option<&EncoderGrid> {
        self.encoders.iter().find(|g| &g.encoder == encoder)
    }

    pub fn s_min(&self, encoder: &Encoder) -> Option<f64> {
        self.grid(encoder).and_then(|g| g.s_min().ok())
    }

    /// Every (content, encoding) point, content-major.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let mut out = Vec::new();
        for c in &self.contents {
            for g in &self.encoders {
                for d in g.descriptors()? {
                    out.push(GridPoint {
                        content_id: c.clone(),
                        encoding: d,
                    });
                }
            }
        }
        Ok(out)
    }
}
