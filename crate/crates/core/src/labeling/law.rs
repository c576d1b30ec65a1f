//! Quality-decay laws, anchor fitting and iMOS inference.
//!
//! Three laws relate normalized quality `Q` to the quantization step `s`:
//!
//! * `Exp`:   `Q = exp(-alpha * s)`
//! * `QStar`: `Q = (1 - exp(-alpha * s_min / s)) / (1 - exp(-alpha))`
//! * `Ma`:    `Q = exp(c) * exp(-c * s / s_min)`
//!
//! `Exp` is normalized so that an uncompressed video (`s -> 0`) has quality
//! 1; the other two are normalized at the finest step of the grid, `s_min`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::{GridPoint, LabelingManifest};
use super::table::{Provenance, RatingKey, RatingRecord, RatingTable};
use super::Encoder;
use crate::{Error, Result};

/// Floor applied to MOS before taking logarithms.
pub const MOS_EPSILON: f64 = 1e-4;

const MAX_GOLDEN_ITERS: usize = 500;
const SWEEP_POINTS: usize = 241;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DecayVariant {
    Exp,
    #[serde(rename = "QSTAR")]
    QStar,
    Ma,
}

impl DecayVariant {
    pub const ALL: [DecayVariant; 3] = [DecayVariant::Exp, DecayVariant::QStar, DecayVariant::Ma];

    pub fn needs_s_min(self) -> bool {
        !matches!(self, DecayVariant::Exp)
    }
}

impl fmt::Display for DecayVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayVariant::Exp => "EXP",
            DecayVariant::QStar => "QSTAR",
            DecayVariant::Ma => "MA",
        })
    }
}

impl FromStr for DecayVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "EXP" => Ok(DecayVariant::Exp),
            "QSTAR" => Ok(DecayVariant::QStar),
            "MA" => Ok(DecayVariant::Ma),
            _ => Err(Error::InvalidArgument(format!(
                "unknown decay variant `{s}`"
            ))),
        }
    }
}

/// A fitted decay law for one `(content, encoder)` pair.
///
/// `param` is alpha for `Exp`/`QStar` and c for `Ma`. It is positive for
/// `Exp` and `Ma`; a `QStar` fit may return a negative alpha when the anchor
/// lies below the law's alpha -> 0 limit `s_min / s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub variant: DecayVariant,
    pub param: f64,
    pub s_min: Option<f64>,
    pub content_id: String,
    pub encoder: Option<Encoder>,
}

impl DecayModel {
    pub fn new(variant: DecayVariant, param: f64, s_min: Option<f64>) -> Result<Self> {
        if !param.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite parameter {param}"
            )));
        }
        if variant.needs_s_min() && !s_min.is_some_and(|s| s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{variant} needs a positive s_min"
            )));
        }
        Ok(Self {
            variant,
            param,
            s_min,
            content_id: String::new(),
            encoder: None,
        })
    }

    pub fn scoped(mut self, content_id: &str, encoder: &Encoder) -> Self {
        self.content_id = content_id.to_string();
        self.encoder = Some(encoder.clone());
        self
    }
}

/// Unclamped law value.
fn raw_quality(variant: DecayVariant, param: f64, s_min: f64, s: f64) -> f64 {
    match variant {
        DecayVariant::Exp => (-param * s).exp(),
        DecayVariant::QStar => {
            let r = s_min / s;
            if param.abs() < 1e-12 {
                // alpha -> 0 limit
                r
            } else {
                (-param * r).exp_m1() / (-param).exp_m1()
            }
        }
        DecayVariant::Ma => (param * (1.0 - s / s_min)).exp(),
    }
}

/// Predicted normalized quality at `q_step`, clamped to `[0, 1]`.
pub fn predict_quality(model: &DecayModel, q_step: f64) -> Result<f64> {
    if !(q_step > 0.0) || !q_step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "q_step {q_step} must be positive"
        )));
    }
    let s_min = model.s_min.unwrap_or(1.0);
    let q = raw_quality(model.variant, model.param, s_min, q_step);
    Ok(if q.is_nan() { 0.0 } else { q.clamp(0.0, 1.0) })
}

/// Fits `variant` to the manual records of a single `(content, encoder)`.
///
/// `s_min` is the finest quantization step of the encoder's grid; it is
/// required for `QStar` and `Ma` and ignored for `Exp`.
pub fn fit_decay(
    records: &[RatingRecord],
    variant: DecayVariant,
    s_min: Option<f64>,
) -> Result<DecayModel> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("fit_decay needs at least one record".into()))?;
    for r in records {
        if r.provenance != Provenance::Manual {
            return Err(Error::InvalidArgument(format!(
                "{} is not a manual rating",
                r.key()
            )));
        }
        if r.content_id != first.content_id || r.encoding.encoder != first.encoding.encoder {
            return Err(Error::InvalidArgument(format!(
                "records mix pairs: {} and {}",
                first.key(),
                r.key()
            )));
        }
    }
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.encoding.q_step, r.mos)).collect();
    let param = fit_points(&points, variant, s_min)?;
    Ok(DecayModel::new(variant, param, s_min)?.scoped(&first.content_id, &first.encoding.encoder))
}

/// Fits the law parameter to `(q_step, mos)` points.
pub fn fit_points(points: &[(f64, f64)], variant: DecayVariant, s_min: Option<f64>) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to fit".into()));
    }
    let s_min = if variant.needs_s_min() {
        s_min
            .filter(|s| *s > 0.0)
            .ok_or_else(|| Error::InvalidArgument(format!("{variant} needs a positive s_min")))?
    } else {
        1.0
    };
    for &(s, mos) in points {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "q_step {s} must be positive"
            )));
        }
        if !(mos > 0.0 && mos <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "MOS {mos} must lie in (0, 1] for fitting"
            )));
        }
        if variant.needs_s_min() && s < s_min {
            return Err(Error::InvalidArgument(format!(
                "q_step {s} is below s_min {s_min}"
            )));
        }
    }
    if points.len() == 1 {
        let (s, mos) = points[0];
        single_anchor(variant, s, mos, s_min)
    } else {
        least_squares(points, variant, s_min)
    }
}

fn single_anchor(variant: DecayVariant, s: f64, mos: f64, s_min: f64) -> Result<f64> {
    match variant {
        DecayVariant::Exp => {
            if mos >= 1.0 {
                return Err(Error::Degenerate(
                    "an anchor at MOS 1 gives alpha = 0".into(),
                ));
            }
            Ok(-mos.max(MOS_EPSILON).ln() / s)
        }
        DecayVariant::Ma => {
            let lever = 1.0 - s / s_min;
            if lever == 0.0 {
                return Err(Error::Degenerate(
                    "an anchor at s_min does not constrain c".into(),
                ));
            }
            if mos >= 1.0 {
                return Err(Error::Degenerate("an anchor at MOS 1 gives c = 0".into()));
            }
            Ok(mos.max(MOS_EPSILON).ln() / lever)
        }
        DecayVariant::QStar => {
            if s == s_min {
                return Err(Error::Degenerate(
                    "an anchor at s_min does not constrain alpha".into(),
                ));
            }
            if mos >= 1.0 {
                return Err(Error::Degenerate(
                    "QSTAR cannot reach MOS 1 away from s_min".into(),
                ));
            }
            solve_qstar(s_min / s, mos.max(MOS_EPSILON))
        }
    }
}

/// Root of `expm1(-a r) / expm1(-a) = target` in `a`; the left side is
/// monotone in `a` for fixed `r < 1`, spanning `(0, 1)`.
fn solve_qstar(r: f64, target: f64) -> Result<f64> {
    let f = |a: f64| raw_quality(DecayVariant::QStar, a, r, 1.0) - target;
    let mut lo = -1.0;
    let mut hi = 1.0;
    while f(lo) > 0.0 {
        lo *= 2.0;
        if lo < -700.0 {
            return Err(Error::Degenerate(format!(
                "MOS {target} unreachable by QSTAR"
            )));
        }
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 700.0 {
            return Err(Error::Degenerate(format!(
                "MOS {target} unreachable by QSTAR"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn search_grid(variant: DecayVariant) -> Vec<f64> {
    let logspace = |lo: f64, hi: f64| -> Vec<f64> {
        (0..SWEEP_POINTS)
            .map(|i| {
                let t = i as f64 / (SWEEP_POINTS - 1) as f64;
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            })
            .collect()
    };
    match variant {
        DecayVariant::Exp | DecayVariant::Ma => logspace(1e-8, 1e3),
        DecayVariant::QStar => {
            let pos = logspace(1e-6, 600.0);
            let mut all: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
            all.push(0.0);
            all.extend(pos);
            all
        }
    }
}

/// Coarse sweep over a log-spaced parameter grid followed by golden-section
/// refinement of the squared-residual objective.
fn least_squares(points: &[(f64, f64)], variant: DecayVariant, s_min: f64) -> Result<f64> {
    let target: Vec<(f64, f64)> = points
        .iter()
        .map(|&(s, m)| {
            (
                s,
                if variant == DecayVariant::Exp {
                    m.max(MOS_EPSILON)
                } else {
                    m
                },
            )
        })
        .collect();
    let sse = |p: f64| -> f64 {
        target
            .iter()
            .map(|&(s, m)| {
                let d = raw_quality(variant, p, s_min, s) - m;
                d * d
            })
            .sum()
    };
    let grid = search_grid(variant);
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, sse(p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..MAX_GOLDEN_ITERS {
        let scale = a.abs().max(b.abs()).max(1e-300);
        if (b - a) <= 1e-13 * scale {
            let x = 0.5 * (a + b);
            return Ok(x);
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse(d);
        }
    }
    Err(Error::NonConvergence(format!(
        "{variant} fit bracket [{a}, {b}] after {MAX_GOLDEN_ITERS} iterations"
    )))
}

/// Fills every grid point: manual ratings pass through, the rest are
/// predicted from the pair's model.
pub fn infer_imos(
    models: &BTreeMap<(String, Encoder), DecayModel>,
    grid: &[GridPoint],
    manual: &RatingTable,
) -> Result<RatingTable> {
    let mut out = RatingTable::new();
    for point in grid {
        let key = RatingKey::new(
            &point.content_id,
            &point.encoding.encoder,
            point.encoding.level_param,
        );
        if let Some(rec) = manual.get(&key) {
            out.insert(rec.clone())?;
            continue;
        }
        let model = models
            .get(&(point.content_id.clone(), point.encoding.encoder.clone()))
            .ok_or_else(|| Error::MissingModel {
                content_id: point.content_id.clone(),
                encoder: point.encoding.encoder.to_string(),
            })?;
        out.insert(RatingRecord {
            content_id: point.content_id.clone(),
            encoding: point.encoding.clone(),
            mos: predict_quality(model, point.encoding.q_step)?,
            provenance: Provenance::Inferred,
        })?;
    }
    Ok(out)
}

/// Fits one model per `(content, encoder)` pair of `manual`.
pub fn fit_all(
    manual: &RatingTable,
    variant: DecayVariant,
    s_min: impl Fn(&Encoder) -> Option<f64>,
) -> Result<BTreeMap<(String, Encoder), DecayModel>> {
    manual
        .by_pair()
        .into_iter()
        .map(|(pair, recs)| {
            let recs: Vec<RatingRecord> = recs.into_iter().cloned().collect();
            let model = fit_decay(&recs, variant, s_min(&pair.1))?;
            Ok((pair, model))
        })
        .collect()
}

/// Every `(content, encoder)` pair of the manifest that has no manual
/// rating, as `content/encoder` strings.
pub fn uncovered_pairs(manifest: &LabelingManifest, manual: &RatingTable) -> Vec<String> {
    let rated = manual.by_pair();
    manifest
        .contents
        .iter()
        .flat_map(|c| {
            manifest
                .encoders
                .iter()
                .map(move |g| (c.clone(), g.encoder.clone()))
        })
        .filter(|pair| !rated.contains_key(pair))
        .map(|(c, e)| format!("{c}/{e}"))
        .collect()
}

/// Full semi-automatic table for a manifest: checks anchor coverage, fits
/// one law per pair and fills in the unrated levels.
pub fn label_manifest(
    manifest: &LabelingManifest,
    manual: &RatingTable,
    variant: DecayVariant,
) -> Result<RatingTable> {
    let missing = uncovered_pairs(manifest, manual);
    if !missing.is_empty() {
        return Err(Error::UncoveredPairs(missing));
    }
    let models = fit_all(manual, variant, |e| manifest.s_min(e))?;
    infer_imos(&models, &manifest.points()?, manual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::EncodingDescriptor;

    fn manual(q_step: f64, mos: f64) -> RatingRecord {
        RatingRecord {
            content_id: "c".into(),
            encoding: EncodingDescriptor {
                encoder: Encoder::Vvc,
                level_param: q_step,
                q_step,
            },
            mos,
            provenance: Provenance::Manual,
        }
    }

    #[test]
    fn exp_prediction_values() {
        let m = DecayModel::new(DecayVariant::Exp, 0.007882, None).unwrap();
        let q = predict_quality(&m, 104.0).unwrap();
        assert!((q - (-0.007882f64 * 104.0).exp()).abs() < 1e-15);
        assert!((q - 0.4406).abs() < 1e-4);
        assert!((predict_quality(&m, 1e-12).unwrap() - 1.0).abs() < 1e-12);
        assert!(predict_quality(&m, 0.0).is_err());
        assert!(predict_quality(&m, -3.0).is_err());
    }

    #[test]
    fn normalized_laws_hit_one_at_s_min() {
        for v in [DecayVariant::QStar, DecayVariant::Ma] {
            for p in [0.1, 1.0, 4.0] {
                let m = DecayModel::new(v, p, Some(25.0)).unwrap();
                assert!((predict_quality(&m, 25.0).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        assert!(DecayModel::new(DecayVariant::Ma, 1.0, None).is_err());
    }

    #[test]
    fn exp_single_anchor_closed_form() {
        let m = fit_decay(&[manual(45.2548, 0.7)], DecayVariant::Exp, None).unwrap();
        assert!((m.param - 0.007_881_48).abs() < 1e-8);
        assert_eq!(m.param, -(0.7f64.ln()) / 45.2548);
        assert!((predict_quality(&m, 45.2548).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            fit_decay(&[manual(45.0, 1.0)], DecayVariant::Exp, None),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_decay(&[manual(45.0, 0.0)], DecayVariant::Exp, None).is_err());
        assert!(fit_decay(&[], DecayVariant::Exp, None).is_err());
    }

    #[test]
    fn multi_anchor_recovers_alpha() {
        let recs: Vec<RatingRecord> = [8.0, 16.0, 32.0, 64.0, 104.0]
            .iter()
            .map(|&s| manual(s, (-0.01f64 * s).exp()))
            .collect();
        let m = fit_decay(&recs, DecayVariant::Exp, None).unwrap();
        assert!(((m.param - 0.01) / 0.01).abs() < 1e-6, "{}", m.param);
    }

    #[test]
    fn single_anchor_round_trips_all_variants() {
        let s_min = 8.0;
        for (v, p) in [
            (DecayVariant::Exp, 0.02),
            (DecayVariant::QStar, 2.5),
            (DecayVariant::Ma, 0.07),
        ] {
            for s in [16.0, 32.0, 104.0] {
                let truth = DecayModel::new(v, p, Some(s_min)).unwrap();
                let mos = predict_quality(&truth, s).unwrap();
                let fit = fit_decay(&[manual(s, mos)], v, Some(s_min)).unwrap();
                assert!(
                    ((fit.param - p) / p).abs() < 1e-9,
                    "{v} at {s}: {}",
                    fit.param
                );
            }
        }
    }

    #[test]
    fn qstar_allows_negative_alpha() {
        // anchor below the alpha -> 0 limit r = 8/32 = 0.25
        let a = fit_points(&[(32.0, 0.1)], DecayVariant::QStar, Some(8.0)).unwrap();
        assert!(a < 0.0);
        let m = DecayModel::new(DecayVariant::QStar, a, Some(8.0)).unwrap();
        assert!((predict_quality(&m, 32.0).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn s_min_anchors_are_degenerate() {
        assert!(matches!(
            fit_points(&[(8.0, 0.9)], DecayVariant::Ma, Some(8.0)),
            Err(Error::Degenerate(_))
        ));
        assert!(fit_points(&[(4.0, 0.9)], DecayVariant::Ma, Some(8.0)).is_err());
        assert!(fit_points(&[(16.0, 0.9)], DecayVariant::Ma, None).is_err());
    }

    #[test]
    fn variant_names() {
        assert_eq!(
            "q-star".parse::<DecayVariant>().unwrap(),
            DecayVariant::QStar
        );
        assert_eq!(
            serde_json::to_string(&DecayVariant::QStar).unwrap(),
            "\"QSTAR\""
        );
    }
}
