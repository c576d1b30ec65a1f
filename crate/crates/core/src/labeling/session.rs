//! Subjective-session planning: which videos people actually rate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{GridPoint, LabelingManifest};
use crate::util::seeded_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub schema_version: u32,
    pub seed: u64,
    pub anchors_per_pair: usize,
    /// Videos to be rated by subjects.
    pub anchors: Vec<GridPoint>,
    /// Videos whose MOS will be inferred.
    pub inferred: Vec<GridPoint>,
    /// Randomized presentation order, as indices into `anchors`.
    pub presentation_order: Vec<usize>,
    /// Rated videos over all videos.
    pub workload_ratio: f64,
}

/// Selects `anchors_per_pair` levels of every (content, encoder) pair for
/// manual rating.
///
/// Anchors are drawn from the interior levels first (all but the finest and
/// coarsest step), then from the extremes, in seeded random order.
pub fn plan_sessions(
    manifest: &LabelingManifest,
    anchors_per_pair: usize,
    seed: u64,
) -> Result<SessionPlan> {
    if manifest.contents.is_empty() || manifest.encoders.is_empty() {
        return Err(Error::InvalidArgument("empty manifest".into()));
    }
    if anchors_per_pair == 0 {
        return Err(Error::OutOfRange(
            "anchors_per_pair must be at least 1".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut anchors = Vec::new();
    let mut inferred = Vec::new();
    let grids = manifest
        .encoders
        .iter()
        .map(|g| {
            let d = g.descriptors()?;
            if anchors_per_pair > d.len() {
                return Err(Error::OutOfRange(format!(
                    "{anchors_per_pair} anchors requested but {} has {} levels",
                    g.encoder,
                    d.len()
                )));
            }
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;

    for content in &manifest.contents {
        for descriptors in &grids {
            let mut by_step: Vec<usize> = (0..descriptors.len()).collect();
            by_step.sort_by(|&a, &b| descriptors[a].q_step.total_cmp(&descriptors[b].q_step));
            let n = by_step.len();
            let (mut interior, mut extremes): (Vec<usize>, Vec<usize>) = if n >= 3 {
                (by_step[1..n - 1].to_vec(), vec![by_step[0], by_step[n - 1]])
            } else {
                (by_step.clone(), Vec::new())
            };
            interior.shuffle(&mut rng);
            extremes.shuffle(&mut rng);
            let chosen: Vec<usize> = interior
                .into_iter()
                .chain(extremes)
                .take(anchors_per_pair)
                .collect();
            for (i, d) in descriptors.iter().enumerate() {
                let point = GridPoint {
                    content_id: content.clone(),
                    encoding: d.clone(),
                };
                if chosen.contains(&i) {
                    anchors.push(point);
                } else {
                    inferred.push(point);
                }
            }
        }
    }
    let mut presentation_order: Vec<usize> = (0..anchors.len()).collect();
    presentation_order.shuffle(&mut rng);
    let total = anchors.len() + inferred.len();
    Ok(SessionPlan {
        schema_version: crate::SCHEMA_VERSION,
        seed,
        anchors_per_pair,
        workload_ratio: anchors.len() as f64 / total as f64,
        anchors,
        inferred,
        presentation_order,
    })
}
