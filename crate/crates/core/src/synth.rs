//! Procedural toy datasets: moving-pattern contents, two synthetic
//! "encoders" and exponential-law scores.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::harness::experiment::{DatasetManifest, ExperimentConfig, VideoEntry};
use crate::labeling::{predict_quality, DecayModel, DecayVariant, Encoder};
use crate::stnet::{Preset, Stage1Config};
use crate::util::{seeded_rng, write_json_atomic};
use crate::vio::{save_y4m, Frame, FrameRate, VideoSequence};
use crate::{Error, Result};

/// How a synthetic encoder damages a frame at quantization step `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    /// Additive Gaussian noise, sigma = q / 4 on luma, q / 8 on chroma.
    Noise,
    /// Codec-like damage: every 4x4 block gets a DC error with sigma q / 4,
    /// then samples are requantized to a grid of pitch q / 8.
    Quantize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub name: String,
    pub distortion: Distortion,
    pub q_steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDatasetSpec {
    pub name: String,
    pub contents: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: u32,
    pub encoders: Vec<ToyEncoder>,
    /// Per-content decay rate is drawn uniformly from this range.
    pub alpha_range: [f64; 2],
    pub seed: u64,
    /// Also write the undistorted source of every content.
    pub write_sources: bool,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            name: "toy".into(),
            contents: 12,
            width: 32,
            height: 32,
            frames: 24,
            fps: 16,
            encoders: vec![
                ToyEncoder {
                    name: "noise".into(),
                    distortion: Distortion::Noise,
                    q_steps: vec![8.0, 32.0, 96.0],
                },
                ToyEncoder {
                    name: "quant".into(),
                    distortion: Distortion::Quantize,
                    q_steps: vec![16.0, 48.0, 128.0],
                },
            ],
            alpha_range: [0.009, 0.011],
            seed: 0,
            write_sources: true,
        }
    }
}

const BLOCK: usize = 4;

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Drifting sinusoid grating over a slow gradient, with content-specific
/// frequency, orientation, contrast and speed.
pub fn synth_content(
    spec: &ToyDatasetSpec,
    content_id: &str,
    rng: &mut impl Rng,
) -> Result<VideoSequence> {
    let (w, h) = (spec.width, spec.height);
    let fx = rng.random_range(0.5..3.0) / w as f64;
    let fy = rng.random_range(0.5..3.0) / h as f64;
    let amp = rng.random_range(20.0..45.0);
    let speed = rng.random_range(0.05..0.4);
    let base = rng.random_range(100.0..150.0);
    let slope = rng.random_range(-0.5..0.5);
    let hue = rng.random_range(0.0..TAU);
    let frames = (0..spec.frames)
        .map(|t| {
            let phase = speed * t as f64 * TAU;
            let y = (0..h * w)
                .map(|i| {
                    let (r, c) = ((i / w) as f64, (i % w) as f64);
                    clamp_u8(
                        base + slope * (c - w as f64 / 2.0)
                            + amp * (TAU * (fx * c + fy * r) + phase).sin(),
                    )
                })
                .collect();
            let chroma = |shift: f64| -> Vec<u8> {
                (0..(h / 2) * (w / 2))
                    .map(|i| {
                        let (r, c) = ((i / (w / 2)) as f64, (i % (w / 2)) as f64);
                        clamp_u8(
                            128.0
                                + 20.0
                                    * (TAU * (fx * c + fy * r) * 2.0 + hue + shift + phase).cos(),
                        )
                    })
                    .collect()
            };
            Frame {
                y,
                u: chroma(0.0),
                v: chroma(1.3),
            }
        })
        .collect();
    VideoSequence::new(w, h, FrameRate::new(spec.fps, 1), frames, content_id)
}

pub fn distort(
    src: &VideoSequence,
    kind: Distortion,
    q: f64,
    rng: &mut impl Rng,
) -> Result<VideoSequence> {
    if !(q > 0.0) {
        return Err(Error::OutOfRange(format!("q_step {q} must be positive")));
    }
    let noise =
        |sigma: f64| Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()));
    let frames = match kind {
        Distortion::Noise => {
            let (ny, nc) = (noise(q / 4.0)?, noise(q / 8.0)?);
            src.frames()
                .iter()
                .map(|f| {
                    let mut add = |p: &[u8], n: &Normal<f64>| -> Vec<u8> {
                        p.iter()
                            .map(|&v| clamp_u8(v as f64 + n.sample(rng)))
                            .collect()
                    };
                    Frame {
                        y: add(&f.y, &ny),
                        u: add(&f.u, &nc),
                        v: add(&f.v, &nc),
                    }
                })
                .collect()
        }
        Distortion::Quantize => {
            let (w, h) = (src.width(), src.height());
            let dc = noise(q / 4.0)?;
            let pitch = q / 8.0;
            src.frames()
                .iter()
                .map(|f| {
                    let mut blocks = |p: &[u8], pw: usize, ph: usize, side: usize| -> Vec<u8> {
                        let bw = pw.div_ceil(side);
                        let offsets: Vec<f64> = (0..bw * ph.div_ceil(side))
                            .map(|_| dc.sample(rng))
                            .collect();
                        p.iter()
                            .enumerate()
                            .map(|(i, &v)| {
                                let off = offsets[(i / pw) / side * bw + (i % pw) / side];
                                clamp_u8(((v as f64 + off) / pitch).round() * pitch)
                            })
                            .collect()
                    };
                    Frame {
                        y: blocks(&f.y, w, h, BLOCK),
                        u: blocks(&f.u, w / 2, h / 2, BLOCK / 2),
                        v: blocks(&f.v, w / 2, h / 2, BLOCK / 2),
                    }
                })
                .collect()
        }
    };
    VideoSequence::new(
        src.width(),
        src.height(),
        src.frame_rate(),
        frames,
        src.content_id.clone(),
    )
}

/// Writes every content x encoder x level video plus `dataset.json` into
/// `dir` and returns the manifest. Scores follow the exponential decay law
/// in the quantization step with a per-content rate.
pub fn generate_toy_dataset(spec: &ToyDatasetSpec, dir: &Path) -> Result<DatasetManifest> {
    if spec.contents == 0 || spec.encoders.is_empty() {
        return Err(Error::InvalidArgument(
            "toy dataset needs contents and encoders".into(),
        ));
    }
    let [lo, hi] = spec.alpha_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::OutOfRange(format!("alpha range [{lo}, {hi}]")));
    }
    let mut rng = seeded_rng(spec.seed);
    let mut videos = Vec::new();
    for c in 0..spec.contents {
        let id = format!("toy{c:02}");
        let src = synth_content(spec, &id, &mut rng)?;
        let alpha = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        if spec.write_sources {
            save_y4m(&src, &dir.join("sources").join(format!("{id}.y4m")))?;
        }
        for enc in &spec.encoders {
            let model = DecayModel::new(DecayVariant::Exp, alpha, None)?
                .scoped(&id, &Encoder::Other(enc.name.clone()));
            for &q in &enc.q_steps {
                let out = distort(&src, enc.distortion, q, &mut rng)?;
                let rel = format!("{}/{id}_{}_q{}.y4m", enc.name, enc.name, q);
                save_y4m(&out, &dir.join(&rel))?;
                videos.push(VideoEntry {
                    path: rel.into(),
                    content_id: id.clone(),
                    encoder: Some(enc.name.clone()),
                    q_step: Some(q),
                    mos: predict_quality(&model, q)?,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        schema_version: crate::SCHEMA_VERSION,
        name: spec.name.clone(),
        mos_range: None,
        videos,
        root: dir.to_path_buf(),
    };
    write_json_atomic(&dir.join("dataset.json"), &manifest)?;
    Ok(manifest)
}

/// Five-fold toy-preset experiment over a generated toy dataset.
///
/// Stage 1 runs at ten times the reference learning rate: at 0.001 the toy
/// network needs several thousand steps to leave its initial plateau.
pub fn toy_experiment_config(dataset: impl Into<std::path::PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: "toy".into(),
        dataset: dataset.into(),
        preset: Preset::Toy,
        stage1: Stage1Config {
            lr: 0.01,
            steps: 1200,
            ..Stage1Config::default()
        },
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distortion_grows_with_q() {
        let spec = ToyDatasetSpec::default();
        let mut rng = seeded_rng(1);
        let src = synth_content(&spec, "c", &mut rng).unwrap();
        for kind in [Distortion::Noise, Distortion::Quantize] {
            let mse = |q: f64, rng: &mut _| {
                let d = distort(&src, kind, q, rng).unwrap();
                let a = &src.frames()[0].y;
                let b = &d.frames()[0].y;
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                    .sum::<f64>()
                    / a.len() as f64
            };
            let (m1, m2) = (mse(8.0, &mut rng), mse(96.0, &mut rng));
            assert!(m2 > 4.0 * m1, "{kind:?}: {m1} {m2}");
        }
    }

    #[test]
    fn contents_differ_and_move() {
        let spec = ToyDatasetSpec::default();
        let mut rng = seeded_rng(2);
        let a = synth_content(&spec, "a", &mut rng).unwrap();
        let b = synth_content(&spec, "b", &mut rng).unwrap();
        assert_ne!(a.frames()[0].y, b.frames()[0].y);
        assert_ne!(a.frames()[0].y, a.frames()[5].y);
        assert_eq!(a.frame_count(), 24);
    }
}
