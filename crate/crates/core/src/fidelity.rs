//! Full-reference fidelity metrics on luma: PSNR, SSIM and MS-SSIM.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the
//! window fits entirely inside the plane; the score is the mean of that map.
//! MS-SSIM uses five dyadic scales produced by 2x2 averaging.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::vio::{LumaPlane, VideoSequence};
use crate::{Error, Result};

/// PSNR reported for bit-identical planes.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Per-scale exponents for five-scale MS-SSIM, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Psnr,
    Ssim,
    MsSsim,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Psnr => "PSNR",
            Metric::Ssim => "SSIM",
            Metric::MsSsim => "MS-SSIM",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "ms-ssim" | "msssim" => Ok(Metric::MsSsim),
            _ => Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 255.0,
        }
    }
}

impl SsimParams {
    fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let mut k: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }
}

/// Per-video fidelity result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub metric: Metric,
    pub per_frame: Vec<f64>,
    pub video_score: f64,
}

impl FidelityScore {
    /// Writes `frame_index,value` rows followed by a `mean` summary row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["frame_index", "value"])?;
        for (i, v) in self.per_frame.iter().enumerate() {
            w.write_record([i.to_string(), format_value(*v)])?;
        }
        w.write_record(["mean".to_string(), format_value(self.video_score)])?;
        w.flush()?;
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    format!("{v:.6}")
}

fn check_geometry(a: &LumaPlane<'_>, b: &LumaPlane<'_>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// PSNR in dB with the default cap for identical planes.
pub fn psnr(reference: &LumaPlane<'_>, distorted: &LumaPlane<'_>, peak: f64) -> Result<f64> {
    psnr_capped(reference, distorted, peak, PSNR_CAP_DB)
}

pub fn psnr_capped(
    reference: &LumaPlane<'_>,
    distorted: &LumaPlane<'_>,
    peak: f64,
    cap: f64,
) -> Result<f64> {
    check_geometry(reference, distorted)?;
    let sse: u64 = reference
        .data
        .iter()
        .zip(distorted.data)
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(cap);
    }
    let mse = sse as f64 / reference.data.len() as f64;
    Ok((10.0 * (peak * peak / mse).log10()).min(cap))
}

/// Row-major f64 plane used by the windowed kernels.
#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_luma(p: &LumaPlane<'_>) -> Self {
        Self {
            width: p.width,
            height: p.height,
            data: p.data.iter().map(|&v| v as f64).collect(),
        }
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Separable "valid" filtering: output is (w-k+1)x(h-k+1).
    fn filter_valid(&self, taps: &[f64]) -> Plane {
        let k = taps.len();
        let ow = self.width - k + 1;
        let oh = self.height - k + 1;
        let mut horiz = vec![0.0; ow * self.height];
        for r in 0..self.height {
            let row = &self.data[r * self.width..(r + 1) * self.width];
            let out = &mut horiz[r * ow..(r + 1) * ow];
            for (c, o) in out.iter_mut().enumerate() {
                *o = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
            }
        }
        let mut data = vec![0.0; ow * oh];
        for r in 0..oh {
            let out = &mut data[r * ow..(r + 1) * ow];
            for (i, &t) in taps.iter().enumerate() {
                let src = &horiz[(r + i) * ow..(r + i + 1) * ow];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += t * s;
                }
            }
        }
        Plane {
            width: ow,
            height: oh,
            data,
        }
    }

    fn downsample2(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let i = 2 * r * self.width + 2 * c;
                let s = self.data[i]
                    + self.data[i + 1]
                    + self.data[i + self.width]
                    + self.data[i + self.width + 1];
                data.push(s / 4.0);
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

/// Means of the luminance term and the contrast-structure term, plus the
/// mean of their product (the SSIM score).
struct SsimTerms {
    ssim: f64,
    cs: f64,
}

fn ssim_terms(x: &Plane, y: &Plane, params: &SsimParams) -> SsimTerms {
    let taps = params.kernel();
    let mu_x = x.filter_valid(&taps);
    let mu_y = y.filter_valid(&taps);
    let xx = x.zip_map(x, |a, b| a * b).filter_valid(&taps);
    let yy = y.zip_map(y, |a, b| a * b).filter_valid(&taps);
    let xy = x.zip_map(y, |a, b| a * b).filter_valid(&taps);
    let (c1, c2) = (params.c1(), params.c2());
    let n = mu_x.data.len() as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let sxx = xx.data[i] - mx * mx;
        let syy = yy.data[i] - my * my;
        let sxy = xy.data[i] - mx * my;
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let cs = (2.0 * sxy + c2) / (sxx + syy + c2);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    SsimTerms {
        ssim: ssim_sum / n,
        cs: cs_sum / n,
    }
}

/// Mean SSIM over all positions where the window fits.
pub fn ssim(
    reference: &LumaPlane<'_>,
    distorted: &LumaPlane<'_>,
    params: &SsimParams,
) -> Result<f64> {
    check_geometry(reference, distorted)?;
    if params.window == 0 {
        return Err(Error::InvalidArgument(
            "SSIM window must be non-empty".into(),
        ));
    }
    if reference.width < params.window || reference.height < params.window {
        return Err(Error::TooSmall(format!(
            "{}x{} plane is smaller than the {}x{} SSIM window",
            reference.width, reference.height, params.window, params.window
        )));
    }
    let x = Plane::from_luma(reference);
    let y = Plane::from_luma(distorted);
    Ok(ssim_terms(&x, &y, params).ssim)
}

/// Smallest plane dimension that still leaves a full window at the coarsest
/// scale.
pub fn ms_ssim_min_dimension(params: &SsimParams) -> usize {
    params.window << (MS_SSIM_WEIGHTS.len() - 1)
}

/// Five-scale MS-SSIM with the standard exponents.
///
/// Negative per-scale terms are clamped to zero before exponentiation so the
/// product stays real.
pub fn ms_ssim(reference: &LumaPlane<'_>, distorted: &LumaPlane<'_>) -> Result<f64> {
    ms_ssim_with(reference, distorted, &SsimParams::default())
}

pub fn ms_ssim_with(
    reference: &LumaPlane<'_>,
    distorted: &LumaPlane<'_>,
    params: &SsimParams,
) -> Result<f64> {
    check_geometry(reference, distorted)?;
    let min_dim = ms_ssim_min_dimension(params);
    if reference.width.min(reference.height) < min_dim {
        return Err(Error::TooSmall(format!(
            "MS-SSIM needs both dimensions >= {min_dim}, got {}x{}",
            reference.width, reference.height
        )));
    }
    let mut x = Plane::from_luma(reference);
    let mut y = Plane::from_luma(distorted);
    let last = MS_SSIM_WEIGHTS.len() - 1;
    let mut score = 1.0;
    for (scale, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let terms = ssim_terms(&x, &y, params);
        let value = if scale == last { terms.ssim } else { terms.cs };
        score *= value.max(0.0).powf(weight);
        if scale != last {
            x = x.downsample2();
            y = y.downsample2();
        }
    }
    Ok(score)
}

pub fn frame_score(
    metric: Metric,
    reference: &LumaPlane<'_>,
    distorted: &LumaPlane<'_>,
) -> Result<f64> {
    match metric {
        Metric::Psnr => psnr(reference, distorted, 255.0),
        Metric::Ssim => ssim(reference, distorted, &SsimParams::default()),
        Metric::MsSsim => ms_ssim(reference, distorted),
    }
}

/// Scores every frame pair and averages them.
pub fn video_fidelity(
    reference: &VideoSequence,
    distorted: &VideoSequence,
    metric: Metric,
) -> Result<FidelityScore> {
    if !reference.same_geometry(distorted) {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            distorted.width(),
            distorted.height()
        )));
    }
    if reference.frame_count() != distorted.frame_count() {
        return Err(Error::GeometryMismatch(format!(
            "frame counts differ: {} vs {}",
            reference.frame_count(),
            distorted.frame_count()
        )));
    }
    let per_frame = (0..reference.frame_count())
        .into_par_iter()
        .map(|i| frame_score(metric, &reference.luma(i), &distorted.luma(i)))
        .collect::<Result<Vec<_>>>()?;
    let video_score = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(FidelityScore {
        metric,
        per_frame,
        video_score,
    })
}
