//! Content-disjoint train/test partitions.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::seeded_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

fn unique_sorted(content_ids: &[String]) -> Vec<String> {
    content_ids
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Seeded shuffle, then `k` contiguous test blocks whose sizes differ by at
/// most one. Duplicated ids are collapsed first.
pub fn make_kfold(content_ids: &[String], k: usize, seed: u64) -> Result<SplitPlan> {
    let mut ids = unique_sorted(content_ids);
    if k < 2 || k > ids.len() {
        return Err(Error::OutOfRange(format!(
            "k = {k} must lie in [2, {}]",
            ids.len()
        )));
    }
    ids.shuffle(&mut seeded_rng(seed));
    let n = ids.len();
    let folds = (0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let test = ids[lo..hi].to_vec();
            let train = ids[..lo].iter().chain(&ids[hi..]).cloned().collect();
            Fold { train, test }
        })
        .collect();
    Ok(SplitPlan { folds, seed })
}

/// Single content-disjoint split with `test_fraction` of the contents held
/// out (rounded, at least one on each side).
pub fn holdout_split(content_ids: &[String], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    let mut ids = unique_sorted(content_ids);
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 contents to split".into(),
        ));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::OutOfRange(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    ids.shuffle(&mut seeded_rng(seed));
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let test = ids[..n_test].to_vec();
    let train = ids[n_test..].to_vec();
    Ok(SplitPlan {
        folds: vec![Fold { train, test }],
        seed,
    })
}

/// Train on every content of one dataset, test on every content of another.
/// Content overlap between datasets is allowed.
pub fn cross_dataset(train_ids: &[String], test_ids: &[String]) -> Result<SplitPlan> {
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::InvalidArgument("both datasets need contents".into()));
    }
    Ok(SplitPlan {
        folds: vec![Fold {
            train: unique_sorted(train_ids),
            test: unique_sorted(test_ids),
        }],
        seed: 0,
    })
}

impl SplitPlan {
    /// Checks disjointness within folds and, for k-fold plans, that test
    /// sets partition `all`.
    pub fn validate_kfold(&self, all: &[String]) -> Result<()> {
        let universe: BTreeSet<&String> = all.iter().collect();
        let mut seen = BTreeSet::new();
        for (i, fold) in self.folds.iter().enumerate() {
            let train: BTreeSet<&String> = fold.train.iter().collect();
            let test: BTreeSet<&String> = fold.test.iter().collect();
            if !train.is_disjoint(&test) {
                return Err(Error::InvalidArgument(format!("fold {i} leaks content")));
            }
            let union: BTreeSet<&String> = train.union(&test).copied().collect();
            if union != universe {
                return Err(Error::InvalidArgument(format!(
                    "fold {i} does not cover all contents"
                )));
            }
            for t in test {
                if !seen.insert(t) {
                    return Err(Error::InvalidArgument(format!("`{t}` tested twice")));
                }
            }
        }
        if seen != universe {
            return Err(Error::InvalidArgument(
                "test folds do not cover all contents".into(),
            ));
        }
        Ok(())
    }
}
