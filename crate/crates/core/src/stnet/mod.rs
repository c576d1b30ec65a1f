//! Spatio-temporal quality network: an inception-3D cube feature
//! extractor, mean/max feature pooling and a transformer-encoder
//! regression head, with a small reverse-mode autodiff engine to train it.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use graph::{Graph, NodeId};
pub use model::{
    pool_features, pool_subsequence, positional_encoding, NetworkParams, Preset, StnetConfig,
};
pub use optim::{Adam, AdamParams, Sgd};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
pub use train::{
    loss_cube, loss_video, predict_cube, stage1_loss, stage2_loss, train_stage1, train_stage2,
    LossCurve, Stage1Config, Stage2Config,
};

use crate::preprocess::{preprocess_video, CubeBatch, PreprocessConfig};
use crate::vio::VideoSequence;
use crate::{Error, Result};

/// Preprocessing settings matching the network's cube geometry.
pub fn preprocess_for(config: &StnetConfig, base: &PreprocessConfig) -> PreprocessConfig {
    PreprocessConfig {
        cube_side: config.cube_side,
        cube_frames: config.cube_frames,
        ..base.clone()
    }
}

/// Pools the cube features of each batch into one row of the
/// `[L, 2 cube_dim]` global feature.
pub fn global_feature(batches: &[CubeBatch], params: &NetworkParams) -> Result<Tensor> {
    if batches.is_empty() {
        return Err(Error::InvalidArgument("no subsequences".into()));
    }
    let rows = batches
        .iter()
        .map(|b| {
            let feats = b
                .cubes
                .par_iter()
                .map(|c| params.cube_features(&c.data))
                .collect::<Result<Vec<_>>>()?;
            pool_features(&feats)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(vec![rows.len(), params.config.pooled_dim()], rows.concat())
}

/// Full pipeline for one video: preprocess, cube features, pooling and the
/// sequence head.
pub fn predict_video_quality(
    video: &VideoSequence,
    params: &NetworkParams,
    base: &PreprocessConfig,
) -> Result<f64> {
    let batches = preprocess_video(video, &preprocess_for(&params.config, base))?;
    let global = global_feature(&batches, params)?;
    params.regress(&global)
}
