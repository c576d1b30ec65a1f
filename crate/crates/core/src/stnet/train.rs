//! Two-stage training: cube regression with SGD, then the sequence head
//! with Adam on frozen global features.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::model::NetworkParams;
use super::optim::{Adam, AdamParams, Sgd};
use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::preprocess::CHANNELS;
use crate::util::{seeded_rng, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 8,
            steps: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub adam: AdamParams,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            adam: AdamParams::default(),
            batch_size: 8,
            steps: 500,
            seed: 0,
        }
    }
}

/// Per-step minibatch loss, recorded before each update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub stage: String,
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stage", "step", "loss"])?;
        for (i, l) in self.losses.iter().enumerate() {
            w.write_record([self.stage.clone(), i.to_string(), format!("{l:.9}")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

/// Draws minibatches from epoch-wise seeded permutations.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.clamp(1, self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Sums per-sample gradients in index order so results do not depend on
/// thread scheduling.
fn reduce(store: &ParamStore, parts: Vec<(f64, Gradients)>, weight: f64) -> (f64, Gradients) {
    let mut total = Gradients {
        grads: vec![None; store.len()],
    };
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l * weight;
        for (slot, gi) in total.grads.iter_mut().zip(g.grads) {
            let Some(mut gi) = gi else { continue };
            gi.data_mut().iter_mut().for_each(|v| *v *= weight);
            match slot {
                Some(t) => t.add_assign(&gi),
                None => *slot = Some(gi),
            }
        }
    }
    (loss, total)
}

fn check_labels(n: usize, labels: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} samples, {} labels",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::OutOfRange(format!("label {l} outside [0, 1]")));
    }
    Ok(())
}

fn cube_tensor(params: &NetworkParams, cube: &[f32]) -> Result<Tensor> {
    let c = &params.config;
    if cube.len() != c.cube_len() {
        return Err(Error::GeometryMismatch(format!(
            "cube of {} samples, network expects {}",
            cube.len(),
            c.cube_len()
        )));
    }
    Tensor::new(
        vec![CHANNELS, c.cube_frames, c.cube_side, c.cube_side],
        cube.iter().map(|&v| v as f64).collect(),
    )
}

/// Squared error of one cube prediction and its parameter gradients.
fn cube_sample(params: &NetworkParams, cube: &[f32], label: f64) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let x = g.input(cube_tensor(params, cube)?);
    let f = params.extract_cube_features(&mut g, x)?;
    let y = params.cube_head(&mut g, f)?;
    let loss = g.mse(y, &[label])?;
    let grads = g.backward(loss, &params.store)?;
    Ok((g.value(loss).data()[0], grads))
}

/// Stage-1 prediction for one cube.
pub fn predict_cube(params: &NetworkParams, cube: &[f32]) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(cube_tensor(params, cube)?);
    let f = params.extract_cube_features(&mut g, x)?;
    let y = params.cube_head(&mut g, f)?;
    Ok(g.value(y).data()[0])
}

/// Mean squared cube-regression error over a dataset.
pub fn stage1_loss(params: &NetworkParams, cubes: &[Vec<f32>], labels: &[f64]) -> Result<f64> {
    let preds = cubes
        .par_iter()
        .map(|c| predict_cube(params, c))
        .collect::<Result<Vec<_>>>()?;
    loss_cube(&preds, labels)
}

/// Minibatch SGD on the cube MSE. Updates the extractor and cube head in
/// place.
pub fn train_stage1(
    params: &mut NetworkParams,
    cubes: &[Vec<f32>],
    labels: &[f64],
    cfg: &Stage1Config,
) -> Result<LossCurve> {
    check_labels(cubes.len(), labels)?;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut batcher = Batcher::new(cubes.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let idx = batcher.next(cfg.batch_size);
        let p: &NetworkParams = params;
        let parts = idx
            .par_iter()
            .map(|&i| cube_sample(p, &cubes[i], labels[i]))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = reduce(&params.store, parts, 1.0 / idx.len() as f64);
        if !loss.is_finite() {
            return Err(Error::Degenerate("stage-1 loss diverged".into()));
        }
        losses.push(loss);
        opt.step(&mut params.store, &grads);
    }
    Ok(LossCurve {
        stage: "stage1".into(),
        losses,
    })
}

fn video_sample(params: &NetworkParams, global: &Tensor, label: f64) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let x = g.input(global.clone());
    let y = params.encode_and_regress(&mut g, x)?;
    let loss = g.l1(y, &[label])?;
    let grads = g.backward(loss, &params.store)?;
    Ok((g.value(loss).data()[0], grads))
}

/// Mean absolute video-regression error over a dataset.
pub fn stage2_loss(params: &NetworkParams, globals: &[Tensor], labels: &[f64]) -> Result<f64> {
    let preds = globals
        .par_iter()
        .map(|x| params.regress(x))
        .collect::<Result<Vec<_>>>()?;
    loss_video(&preds, labels)
}

/// Adam on the video L1 loss. Only the encoder and head receive updates;
/// the global features are constants.
pub fn train_stage2(
    params: &mut NetworkParams,
    globals: &[Tensor],
    labels: &[f64],
    cfg: &Stage2Config,
) -> Result<LossCurve> {
    check_labels(globals.len(), labels)?;
    let mut opt = Adam::new(cfg.adam);
    let mut batcher = Batcher::new(globals.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let idx = batcher.next(cfg.batch_size);
        let p: &NetworkParams = params;
        let parts = idx
            .par_iter()
            .map(|&i| video_sample(p, &globals[i], labels[i]))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = reduce(&params.store, parts, 1.0 / idx.len() as f64);
        losses.push(loss);
        opt.step(&mut params.store, &grads);
    }
    Ok(LossCurve {
        stage: "stage2".into(),
        losses,
    })
}

fn check_pair(pred: &[f64], label: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != label.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            pred.len(),
            label.len()
        )));
    }
    Ok(())
}

/// Mean squared error.
pub fn loss_cube(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_pair(pred, label)?;
    Ok(super::graph::mse_value(pred, label))
}

/// Mean absolute error.
pub fn loss_video(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_pair(pred, label)?;
    Ok(super::graph::l1_value(pred, label))
}
