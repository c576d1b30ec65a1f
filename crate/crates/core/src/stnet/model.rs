//! Network topology: inception-3D cube extractor, feature pooling and the
//! transformer regression head.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::preprocess::CHANNELS;
use crate::util::seeded_rng;
use crate::{Error, Result};

pub const ATTENTION_RATIO: usize = 8;

/// Init gain for convolutions, all of which feed a ReLU.
const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Desk,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Preset::Toy),
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StnetConfig {
    pub cube_side: usize,
    pub cube_frames: usize,
    pub stem_width: usize,
    pub stem_stride: [usize; 3],
    /// Output width of each inception block; each must be a multiple of 4.
    pub block_widths: Vec<usize>,
    /// Number of trailing blocks followed by channel attention.
    pub attention_blocks: usize,
    pub attention_ratio: usize,
    /// Cube feature length.
    pub cube_dim: usize,
    /// Transformer width; `None` feeds the pooled features (2 x cube_dim)
    /// straight in, otherwise a linear projection is inserted first.
    pub model_dim: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub positional_encoding: bool,
}

impl Default for StnetConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl StnetConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            cube_side: 32,
            cube_frames: 4,
            stem_width: 8,
            stem_stride: [1, 2, 2],
            block_widths: vec![16, 32, 64],
            attention_blocks: 2,
            attention_ratio: ATTENTION_RATIO,
            cube_dim: 16,
            model_dim: None,
            layers: 2,
            heads: 4,
            ff_mult: 4,
            positional_encoding: true,
        };
        match p {
            Preset::Toy => base,
            Preset::Desk => Self {
                cube_side: 224,
                cube_frames: 16,
                stem_stride: [2, 4, 4],
                cube_dim: 64,
                ..base
            },
            Preset::Full => Self {
                cube_side: 224,
                cube_frames: 16,
                stem_stride: [2, 4, 4],
                cube_dim: 1024,
                model_dim: Some(256),
                ..base
            },
        }
    }

    pub fn pooled_dim(&self) -> usize {
        2 * self.cube_dim
    }

    pub fn transformer_dim(&self) -> usize {
        self.model_dim.unwrap_or(self.pooled_dim())
    }

    pub fn cube_len(&self) -> usize {
        CHANNELS * self.cube_frames * self.cube_side * self.cube_side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cube_side == 0
            || self.cube_frames == 0
            || self.stem_width == 0
            || self.cube_dim == 0
        {
            return bad("sizes must be positive".into());
        }
        if self.stem_stride.contains(&0) {
            return bad("stem stride must be positive".into());
        }
        if self.block_widths.is_empty() {
            return bad("at least one inception block is required".into());
        }
        if let Some(w) = self.block_widths.iter().find(|&&w| w == 0 || w % 4 != 0) {
            return bad(format!("block width {w} is not a positive multiple of 4"));
        }
        if self.attention_blocks > self.block_widths.len() {
            return bad("more attention blocks than inception blocks".into());
        }
        let n = self.block_widths.len();
        for &w in &self.block_widths[n - self.attention_blocks..] {
            if self.attention_ratio == 0 || w % self.attention_ratio != 0 {
                return bad(format!(
                    "attention ratio {} does not divide {w} channels",
                    self.attention_ratio
                ));
            }
        }
        let d = self.transformer_dim();
        if self.heads == 0 || d % self.heads != 0 {
            return bad(format!("{} heads do not divide model dim {d}", self.heads));
        }
        if self.ff_mult == 0 {
            return bad("ff_mult must be positive".into());
        }
        Ok(())
    }
}

/// Downsampling pool applied between blocks: halves every axis of length
/// at least 2.
fn between_pool(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|v| if v >= 2 { 2 } else { 1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: StnetConfig,
    pub seed: u64,
    pub store: ParamStore,
}

fn reduce_width(w: usize) -> usize {
    (w / 4).max(1)
}

impl NetworkParams {
    pub fn init(config: StnetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut s = ParamStore::new();
        let conv = |s: &mut ParamStore,
                    rng: &mut _,
                    name: &str,
                    o: usize,
                    i: usize,
                    k: usize|
         -> Result<()> {
            s.init_weight(
                &format!("{name}.w"),
                &[o, i, k, k, k],
                i * k * k * k,
                RELU_GAIN,
                rng,
            )?;
            s.insert(&format!("{name}.b"), Tensor::zeros(&[o]))?;
            Ok(())
        };
        let lin = |s: &mut ParamStore, rng: &mut _, name: &str, i: usize, o: usize| -> Result<()> {
            s.init_weight(&format!("{name}.w"), &[i, o], i, 1.0, rng)?;
            s.insert(&format!("{name}.b"), Tensor::zeros(&[o]))?;
            Ok(())
        };
        conv(&mut s, &mut rng, "stem", config.stem_width, CHANNELS, 3)?;
        let nb = config.block_widths.len();
        let mut cin = config.stem_width;
        for (i, &w) in config.block_widths.iter().enumerate() {
            let q = w / 4;
            let r = reduce_width(w);
            let p = format!("block{i}");
            conv(&mut s, &mut rng, &format!("{p}.b0"), q, cin, 1)?;
            conv(&mut s, &mut rng, &format!("{p}.b1.reduce"), r, cin, 1)?;
            conv(&mut s, &mut rng, &format!("{p}.b1.conv"), q, r, 3)?;
            conv(&mut s, &mut rng, &format!("{p}.b2.reduce"), r, cin, 1)?;
            conv(&mut s, &mut rng, &format!("{p}.b2.conv"), q, r, 3)?;
            conv(&mut s, &mut rng, &format!("{p}.b3"), q, cin, 1)?;
            if i + config.attention_blocks >= nb {
                let h = w / config.attention_ratio;
                lin(&mut s, &mut rng, &format!("{p}.att.fc1"), w, h)?;
                lin(&mut s, &mut rng, &format!("{p}.att.fc2"), h, w)?;
            }
            cin = w;
        }
        lin(&mut s, &mut rng, "feature", cin, config.cube_dim)?;
        lin(&mut s, &mut rng, "cube_head", config.cube_dim, 1)?;
        let d = config.transformer_dim();
        if config.model_dim.is_some() {
            lin(&mut s, &mut rng, "encoder.input", config.pooled_dim(), d)?;
        }
        for l in 0..config.layers {
            let p = format!("encoder.layer{l}");
            for m in ["q", "k", "v", "o"] {
                lin(&mut s, &mut rng, &format!("{p}.attn.{m}"), d, d)?;
            }
            lin(&mut s, &mut rng, &format!("{p}.ff1"), d, d * config.ff_mult)?;
            lin(&mut s, &mut rng, &format!("{p}.ff2"), d * config.ff_mult, d)?;
            for n in ["norm1", "norm2"] {
                s.insert(&format!("{p}.{n}.gamma"), Tensor::full(&[d], 1.0))?;
                s.insert(&format!("{p}.{n}.beta"), Tensor::zeros(&[d]))?;
            }
        }
        lin(&mut s, &mut rng, "head", d, 1)?;
        Ok(Self {
            config,
            seed,
            store: s,
        })
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        Ok(g.param(&self.store, self.store.id(name)?))
    }

    fn conv(
        &self,
        g: &mut Graph,
        x: NodeId,
        name: &str,
        stride: [usize; 3],
        pad: usize,
    ) -> Result<NodeId> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        let y = g.conv3d(x, w, Some(b), stride, [pad; 3])?;
        Ok(g.relu(y))
    }

    fn linear(&self, g: &mut Graph, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        g.linear(x, w, b)
    }

    /// Squeeze, bottleneck, sigmoid gate and channel rescale.
    pub fn channel_attention(&self, g: &mut Graph, x: NodeId, prefix: &str) -> Result<NodeId> {
        let c = g.value(x).rows();
        let s = g.channel_mean(x);
        let s = g.reshape(s, &[1, c])?;
        let h = self.linear(g, s, &format!("{prefix}.fc1"))?;
        let h = g.relu(h);
        let e = self.linear(g, h, &format!("{prefix}.fc2"))?;
        let gate = g.sigmoid(e);
        g.scale_channels(x, gate)
    }

    fn inception(&self, g: &mut Graph, x: NodeId, i: usize) -> Result<NodeId> {
        let p = format!("block{i}");
        let b0 = self.conv(g, x, &format!("{p}.b0"), [1; 3], 0)?;
        let r1 = self.conv(g, x, &format!("{p}.b1.reduce"), [1; 3], 0)?;
        let b1 = self.conv(g, r1, &format!("{p}.b1.conv"), [1; 3], 1)?;
        let r2 = self.conv(g, x, &format!("{p}.b2.reduce"), [1; 3], 0)?;
        let b2 = self.conv(g, r2, &format!("{p}.b2.conv"), [1; 3], 1)?;
        let m = g.maxpool3d(x, [3; 3], [1; 3], [1; 3])?;
        let b3 = self.conv(g, m, &format!("{p}.b3"), [1; 3], 0)?;
        let y = g.concat_rows(&[b0, b1, b2, b3])?;
        if i + self.config.attention_blocks >= self.config.block_widths.len() {
            self.channel_attention(g, y, &format!("{p}.att"))
        } else {
            Ok(y)
        }
    }

    /// Cube `[3, T, S, S]` to a `[1, cube_dim]` feature row.
    pub fn extract_cube_features(&self, g: &mut Graph, cube: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let expect = [CHANNELS, c.cube_frames, c.cube_side, c.cube_side];
        if g.value(cube).shape() != expect {
            return Err(Error::GeometryMismatch(format!(
                "cube {:?}, network expects {expect:?}",
                g.value(cube).shape()
            )));
        }
        let mut x = self.conv(g, cube, "stem", c.stem_stride, 1)?;
        let n = c.block_widths.len();
        for i in 0..n {
            x = self.inception(g, x, i)?;
            if i + 1 < n {
                let s = g.value(x).shape();
                let k = between_pool([s[1], s[2], s[3]]);
                x = g.maxpool3d(x, k, k, [0; 3])?;
            }
        }
        let w = g.value(x).rows();
        let v = g.channel_mean(x);
        let v = g.reshape(v, &[1, w])?;
        self.linear(g, v, "feature")
    }

    /// Stage-1 regression from one cube feature row.
    pub fn cube_head(&self, g: &mut Graph, feature: NodeId) -> Result<NodeId> {
        self.linear(g, feature, "cube_head")
    }

    /// `[L, 2 cube_dim]` global feature to a quality in `[0, 1]`.
    pub fn encode_and_regress(&self, g: &mut Graph, global: NodeId) -> Result<NodeId> {
        let c = &self.config;
        let shape = g.value(global).shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 || shape[1] != c.pooled_dim() {
            return Err(Error::ShapeMismatch(format!(
                "global feature {shape:?}, expected [L, {}]",
                c.pooled_dim()
            )));
        }
        let l = shape[0];
        let d = c.transformer_dim();
        let mut x = global;
        if c.model_dim.is_some() {
            x = self.linear(g, x, "encoder.input")?;
        }
        if c.positional_encoding {
            let pe = g.input(positional_encoding(l, d));
            x = g.add(x, pe)?;
        }
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in 0..c.layers {
            let p = format!("encoder.layer{layer}");
            let q = self.linear(g, x, &format!("{p}.attn.q"))?;
            let k = self.linear(g, x, &format!("{p}.attn.k"))?;
            let v = self.linear(g, x, &format!("{p}.attn.v"))?;
            let mut heads = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                let kt = g.transpose(kh)?;
                let s = g.matmul(qh, kt)?;
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s)?;
                heads.push(g.matmul(a, vh)?);
            }
            let cat = g.concat_cols(&heads)?;
            let att = self.linear(g, cat, &format!("{p}.attn.o"))?;
            let r = g.add(x, att)?;
            x = self.norm(g, r, &format!("{p}.norm1"))?;
            let f = self.linear(g, x, &format!("{p}.ff1"))?;
            let f = g.relu(f);
            let f = self.linear(g, f, &format!("{p}.ff2"))?;
            let r = g.add(x, f)?;
            x = self.norm(g, r, &format!("{p}.norm2"))?;
        }
        let m = g.mean_rows(x)?;
        let y = self.linear(g, m, "head")?;
        Ok(g.sigmoid(y))
    }

    fn norm(&self, g: &mut Graph, x: NodeId, name: &str) -> Result<NodeId> {
        let gamma = self.p(g, &format!("{name}.gamma"))?;
        let beta = self.p(g, &format!("{name}.beta"))?;
        g.layer_norm_rows(x, gamma, beta)
    }

    /// Inference helper: feature row for one cube given as `f32` samples.
    pub fn cube_features(&self, cube: &[f32]) -> Result<Vec<f64>> {
        let c = &self.config;
        if cube.len() != c.cube_len() {
            return Err(Error::GeometryMismatch(format!(
                "cube of {} samples, network expects {}",
                cube.len(),
                c.cube_len()
            )));
        }
        let t = Tensor::new(
            vec![CHANNELS, c.cube_frames, c.cube_side, c.cube_side],
            cube.iter().map(|&v| v as f64).collect(),
        )?;
        let mut g = Graph::new();
        let x = g.input(t);
        let f = self.extract_cube_features(&mut g, x)?;
        Ok(g.value(f).data().to_vec())
    }

    /// Inference helper for the regression head.
    pub fn regress(&self, global: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(global.clone());
        let y = self.encode_and_regress(&mut g, x)?;
        Ok(g.value(y).data()[0])
    }
}

/// Column mean followed by column max: `[N, D] -> [1, 2D]`.
pub fn pool_subsequence(g: &mut Graph, features: NodeId) -> Result<NodeId> {
    if g.value(features).shape().first() == Some(&0) {
        return Err(Error::InvalidArgument("no cube features to pool".into()));
    }
    let mean = g.mean_rows(features)?;
    let max = g.max_rows(features)?;
    g.concat_cols(&[mean, max])
}

/// Plain-array form of [`pool_subsequence`].
pub fn pool_features(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("no cube features to pool".into()))?;
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("ragged cube features".into()));
    }
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![rows.len(), d], rows.concat())?);
    let y = pool_subsequence(&mut g, x)?;
    Ok(g.value(y).data().to_vec())
}

/// Sinusoidal position table `[l, d]`.
pub fn positional_encoding(l: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; l * d];
    for pos in 0..l {
        for i in 0..d {
            let k = (i / 2 * 2) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(k);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![l, d], data).expect("table size")
}
