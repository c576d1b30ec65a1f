//! Semi-automatic MOS labeling.
//!
//! Perceived quality of a compressed video decays exponentially with the
//! quantization step. With one rated anchor per (content, encoder) the decay
//! parameter is pinned, and every other compression level of that pair can
//! be labeled from the fitted curve (the *inferred* MOS, iMOS).

pub mod compare;
pub mod law;
pub mod manifest;
pub mod session;
pub mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use compare::{compare_variants, validate_semiauto, VariantComparison, VariantRow};
pub use law::{
    fit_all, fit_decay, fit_points, infer_imos, label_manifest, predict_quality, uncovered_pairs,
    DecayModel, DecayVariant,
};
pub use manifest::{EncoderGrid, GridPoint, LabelingManifest};
pub use session::{plan_sessions, SessionPlan};
pub use table::{Provenance, RatingKey, RatingRecord, RatingTable};

/// Legal Qp range for the VVC-family encoders.
pub const QP_RANGE: (f64, f64) = (0.0, 63.0);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Encoder {
    Vvc,
    Avs3,
    Hlvc,
    Other(String),
}

impl Encoder {
    /// Whether the encoder's level parameter is a Qp (as opposed to an R-D
    /// lambda).
    pub fn is_qp_based(&self) -> bool {
        !matches!(self, Encoder::Hlvc)
    }
}

impl fmt::Display for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoder::Vvc => f.write_str("VVC"),
            Encoder::Avs3 => f.write_str("AVS3"),
            Encoder::Hlvc => f.write_str("HLVC"),
            Encoder::Other(name) => f.write_str(name),
        }
    }
}

impl FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty encoder name".into()));
        }
        Ok(match s.to_ascii_uppercase().as_str() {
            "VVC" => Encoder::Vvc,
            "AVS3" => Encoder::Avs3,
            "HLVC" => Encoder::Hlvc,
            _ => Encoder::Other(s.to_string()),
        })
    }
}

impl TryFrom<String> for Encoder {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Encoder> for String {
    fn from(e: Encoder) -> String {
        e.to_string()
    }
}

/// One point of an encoding grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingDescriptor {
    pub encoder: Encoder,
    /// Qp for Qp-based encoders, lambda for learned codecs.
    pub level_param: f64,
    pub q_step: f64,
}

/// Quantization step for a Qp, `2^((qp - 4) / 6)`, over the default range.
pub fn qp_to_qstep(encoder: &Encoder, qp: f64) -> Result<f64> {
    qp_to_qstep_in(encoder, qp, QP_RANGE)
}

pub fn qp_to_qstep_in(encoder: &Encoder, qp: f64, range: (f64, f64)) -> Result<f64> {
    if !encoder.is_qp_based() {
        return Err(Error::InvalidArgument(format!(
            "{encoder} is parameterized by lambda, not Qp"
        )));
    }
    if !qp.is_finite() || qp < range.0 || qp > range.1 {
        return Err(Error::OutOfRange(format!(
            "Qp {qp} outside [{}, {}] for {encoder}",
            range.0, range.1
        )));
    }
    Ok(((qp - 4.0) / 6.0).exp2())
}

/// Pseudo quantization steps for lambda-parameterized codecs: lambdas are
/// ranked from largest (finest) to smallest, and rank `r` (1-based) maps to
/// `r * scale`.
pub fn lambda_to_pseudo_qsteps(lambdas: &[f64], scale: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank scale {scale} must be positive"
        )));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument("lambdas must be positive".into()));
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out = vec![0.0; lambdas.len()];
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && lambdas[order[rank - 1]] == lambdas[i] {
            return Err(Error::InvalidArgument(format!(
                "duplicate lambda {}",
                lambdas[i]
            )));
        }
        out[i] = (rank + 1) as f64 * scale;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qstep_anchors() {
        assert_eq!(qp_to_qstep(&Encoder::Vvc, 4.0).unwrap(), 1.0);
        assert_eq!(qp_to_qstep(&Encoder::Vvc, 22.0).unwrap(), 8.0);
        let q37 = qp_to_qstep(&Encoder::Avs3, 37.0).unwrap();
        assert!((q37 - 45.254_833_995_939).abs() < 1e-9);
        assert!(qp_to_qstep(&Encoder::Vvc, 64.0).is_err());
        assert!(qp_to_qstep(&Encoder::Vvc, -1.0).is_err());
        assert!(qp_to_qstep(&Encoder::Hlvc, 30.0).is_err());
        assert!(qp_to_qstep_in(&Encoder::Other("x".into()), 70.0, (0.0, 80.0)).is_ok());
    }

    #[test]
    fn qstep_is_strictly_increasing() {
        let steps: Vec<f64> = (0..=63)
            .map(|qp| qp_to_qstep(&Encoder::Vvc, qp as f64).unwrap())
            .collect();
        assert!(steps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn lambda_ranks_descend() {
        let q = lambda_to_pseudo_qsteps(&[256.0, 512.0, 1024.0, 2048.0], 16.0).unwrap();
        assert_eq!(q, vec![64.0, 48.0, 32.0, 16.0]);
        assert!(lambda_to_pseudo_qsteps(&[1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn encoder_names() {
        assert_eq!("vvc".parse::<Encoder>().unwrap(), Encoder::Vvc);
        assert_eq!(
            "x265".parse::<Encoder>().unwrap(),
            Encoder::Other("x265".into())
        );
        assert_eq!(Encoder::Avs3.to_string(), "AVS3");
    }
}
