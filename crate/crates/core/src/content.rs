//! Spatial and temporal information (SI/TI) content descriptors.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::util::mean_std;
use crate::vio::{LumaPlane, VideoSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentDescriptor {
    pub content_id: String,
    pub si: f64,
    pub ti: f64,
}

/// Population std of the Sobel gradient magnitude over interior pixels.
pub fn frame_si(plane: &LumaPlane<'_>) -> Result<f64> {
    let (w, h) = (plane.width, plane.height);
    if w < 3 || h < 3 {
        return Err(Error::TooSmall(format!(
            "SI needs at least 3x3, got {w}x{h}"
        )));
    }
    let p = |r: usize, c: usize| plane.at(r, c) as f64;
    let mut mags = Vec::with_capacity((w - 2) * (h - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let gx = (p(r - 1, c + 1) + 2.0 * p(r, c + 1) + p(r + 1, c + 1))
                - (p(r - 1, c - 1) + 2.0 * p(r, c - 1) + p(r + 1, c - 1));
            let gy = (p(r + 1, c - 1) + 2.0 * p(r + 1, c) + p(r + 1, c + 1))
                - (p(r - 1, c - 1) + 2.0 * p(r - 1, c) + p(r - 1, c + 1));
            mags.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(mean_std(mags.iter().copied()).1)
}

/// Population std of the luma difference `current - previous`.
pub fn frame_pair_ti(previous: &LumaPlane<'_>, current: &LumaPlane<'_>) -> f64 {
    let diff = current
        .data
        .iter()
        .zip(previous.data)
        .map(|(&c, &p)| c as f64 - p as f64);
    mean_std(diff).1
}

pub fn spatial_information(video: &VideoSequence) -> Result<f64> {
    let per_frame = (0..video.frame_count())
        .into_par_iter()
        .map(|i| frame_si(&video.luma(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_frame.into_iter().fold(0.0, f64::max))
}

pub fn temporal_information(video: &VideoSequence) -> Result<f64> {
    if video.frame_count() < 2 {
        return Err(Error::TooSmall(format!(
            "TI needs at least 2 frames, got {}",
            video.frame_count()
        )));
    }
    Ok((1..video.frame_count())
        .into_par_iter()
        .map(|i| frame_pair_ti(&video.luma(i - 1), &video.luma(i)))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max))
}

pub fn describe(video: &VideoSequence) -> Result<ContentDescriptor> {
    Ok(ContentDescriptor {
        content_id: video.content_id.clone(),
        si: spatial_information(video)?,
        ti: temporal_information(video)?,
    })
}

/// `content_id,si,ti` rows, one per descriptor.
pub fn write_csv<W: Write>(rows: &[ContentDescriptor], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["content_id", "si", "ti"])?;
    for r in rows {
        w.write_record([
            r.content_id.clone(),
            format!("{:.9}", r.si),
            format!("{:.9}", r.ti),
        ])?;
    }
    w.flush()?;
    Ok(())
}
