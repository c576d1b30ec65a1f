//! Video to network input: half-second subsequences, saliency crop and
//! non-overlapping spatiotemporal cubes.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::vio::{FrameRate, VideoSequence};
use crate::{Error, Result};

pub const DEFAULT_CUBE_SIDE: usize = 224;
pub const DEFAULT_CUBE_FRAMES: usize = 16;
pub const DEFAULT_SALIENCY_THRESHOLD: f64 = 0.5;
pub const MIN_CUBE_SIDE: usize = 16;
pub const CHANNELS: usize = 3;

const SALIENCY_MAGIC: &str = "VQSAL1";

/// Start frames of the subsequences of a `frame_count`-frame video.
///
/// The video is cut into half-second segments (`round(fps / 2)` frames).
/// Each segment contributes one clip of `length` frames starting at the
/// segment start; a clip that would run past the end is shifted back to
/// end on the last frame. Identical starts are merged.
pub fn subsequence_starts(
    frame_count: usize,
    frame_rate: FrameRate,
    length: usize,
) -> Result<Vec<usize>> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "subsequence length must be positive".into(),
        ));
    }
    if frame_count < length {
        return Err(Error::TooSmall(format!(
            "{frame_count} frames is shorter than one {length}-frame subsequence"
        )));
    }
    let stride = ((frame_rate.as_f64() / 2.0).round() as usize).max(1);
    let segments = (frame_count / stride).max(1);
    let last_start = frame_count - length;
    let mut starts: Vec<usize> = (0..segments)
        .map(|i| (i * stride).min(last_start))
        .collect();
    starts.dedup();
    Ok(starts)
}

pub fn split_subsequences(video: &VideoSequence, length: usize) -> Result<Vec<VideoSequence>> {
    subsequence_starts(video.frame_count(), video.frame_rate(), length)?
        .into_iter()
        .map(|s| video.slice_clip(s, length))
        .collect()
}

/// Per-pixel saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::GeometryMismatch(format!(
                "{} saliency values for {width}x{height}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange(
                "saliency values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// `VQSAL1 <width> <height>\n` followed by little-endian f32 samples.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SALIENCY_MAGIC} {} {}", self.width, self.height)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::InvalidArgument("saliency file has no header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::InvalidArgument("saliency header is not ASCII".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(SALIENCY_MAGIC) {
            return Err(Error::InvalidArgument("not a saliency map file".into()));
        }
        let mut dim = || -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument("bad saliency dimensions".into()))
        };
        let (width, height) = (dim()?, dim()?);
        let payload = &bytes[nl + 1..];
        if payload.len() != width * height * 4 {
            return Err(Error::TruncatedFrame {
                frame: 0,
                expected: width * height * 4,
                got: payload.len(),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(width, height, values)
    }
}

fn max_normalize(v: &mut [f64]) {
    let max = v.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
}

/// Gradient-plus-motion saliency heuristic on luma.
///
/// Spatial energy is the central-difference gradient magnitude, temporal
/// energy the absolute frame difference; each is averaged over the clip and
/// max-normalized, then blended 50/50 and max-normalized again.
pub fn detect_saliency(clip: &VideoSequence) -> Result<SaliencyMap> {
    if clip.frame_count() < 2 {
        return Err(Error::TooSmall("saliency needs at least 2 frames".into()));
    }
    let (w, h) = (clip.width(), clip.height());
    let mut spatial = vec![0.0f64; w * h];
    let mut temporal = vec![0.0f64; w * h];
    for t in 0..clip.frame_count() {
        let y = &clip.frames()[t].y;
        let p = |r: usize, c: usize| y[r * w + c] as f64;
        for r in 0..h {
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            for c in 0..w {
                let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
                let gx = (p(r, cr) - p(r, cl)) / (cr - cl).max(1) as f64;
                let gy = (p(rd, c) - p(ru, c)) / (rd - ru).max(1) as f64;
                spatial[r * w + c] += (gx * gx + gy * gy).sqrt();
            }
        }
        if t > 0 {
            let prev = &clip.frames()[t - 1].y;
            for (acc, (&a, &b)) in temporal.iter_mut().zip(y.iter().zip(prev)) {
                *acc += (a as f64 - b as f64).abs();
            }
        }
    }
    max_normalize(&mut spatial);
    max_normalize(&mut temporal);
    let mut blend: Vec<f64> = spatial
        .iter()
        .zip(&temporal)
        .map(|(s, t)| 0.5 * s + 0.5 * t)
        .collect();
    max_normalize(&mut blend);
    SaliencyMap::new(w, h, blend.into_iter().map(|v| v as f32).collect())
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            row: 0,
            col: 0,
            height,
            width,
        }
    }
}

/// Tightest rectangle holding every pixel with saliency `>= threshold`; the
/// whole frame when no pixel qualifies.
pub fn min_bounding_rect(map: &SaliencyMap, threshold: f64) -> Rect {
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for r in 0..map.height {
        for c in 0..map.width {
            if map.at(r, c) as f64 >= threshold {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if r0 == usize::MAX {
        return Rect::full(map.width, map.height);
    }
    Rect {
        row: r0,
        col: c0,
        height: r1 - r0 + 1,
        width: c1 - c0 + 1,
    }
}

/// One `[channel][frame][row][col]` pixel cube, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeBatch {
    pub side: usize,
    pub frames: usize,
    pub subsequence: usize,
    /// Region actually tiled, after expansion to whole cubes.
    pub region: Rect,
    pub cubes: Vec<Cube>,
}

impl CubeBatch {
    pub fn cube_len(&self) -> usize {
        CHANNELS * self.frames * self.side * self.side
    }
}

/// Planes at luma geometry, normalized to `[0, 1]`: Y, then U and V
/// bilinearly upsampled.
fn yuv_planes(clip: &VideoSequence, t: usize) -> [Vec<f32>; 3] {
    let (w, h) = (clip.width(), clip.height());
    let (cw, ch) = (w / 2, h / 2);
    let f = &clip.frames()[t];
    let y = f.y.iter().map(|&v| v as f32 / 255.0).collect();
    let up = |plane: &[u8]| -> Vec<f32> {
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            let sy = ((r as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (ch - 1) as f32);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(ch - 1);
            let fy = sy - y0 as f32;
            for c in 0..w {
                let sx = ((c as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (cw - 1) as f32);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(cw - 1);
                let fx = sx - x0 as f32;
                let p = |yy: usize, xx: usize| plane[yy * cw + xx] as f32;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) / 255.0);
            }
        }
        out
    };
    [y, up(&f.u), up(&f.v)]
}

/// Grows `[start, start + len)` to a whole number of tiles, keeping it
/// inside the frame when it fits and anchoring at 0 (to be edge-padded)
/// when it does not. Returns `(origin, tiles)`.
fn expand_axis(start: usize, len: usize, frame_len: usize, side: usize) -> (usize, usize) {
    let tiles = len.div_ceil(side).max(1);
    let target = tiles * side;
    if target <= frame_len {
        let grow = target - len;
        let origin = start.saturating_sub(grow / 2).min(frame_len - target);
        (origin, tiles)
    } else {
        (0, tiles)
    }
}

/// Cuts the expanded rectangle into non-overlapping `side x side` tiles
/// spanning every frame of `clip`.
pub fn tile_cubes(clip: &VideoSequence, rect: Rect, side: usize) -> Result<CubeBatch> {
    if side < MIN_CUBE_SIDE {
        return Err(Error::InvalidArgument(format!(
            "cube side {side} is below the minimum {MIN_CUBE_SIDE}"
        )));
    }
    let (w, h) = (clip.width(), clip.height());
    if rect.width == 0
        || rect.height == 0
        || rect.col + rect.width > w
        || rect.row + rect.height > h
    {
        return Err(Error::OutOfRange(format!(
            "{rect:?} does not fit a {w}x{h} frame"
        )));
    }
    let (row0, tiles_v) = expand_axis(rect.row, rect.height, h, side);
    let (col0, tiles_h) = expand_axis(rect.col, rect.width, w, side);
    let frames = clip.frame_count();
    let planes: Vec<[Vec<f32>; 3]> = (0..frames).map(|t| yuv_planes(clip, t)).collect();

    let mut cubes = Vec::with_capacity(tiles_v * tiles_h);
    for tv in 0..tiles_v {
        for th in 0..tiles_h {
            let mut data = Vec::with_capacity(CHANNELS * frames * side * side);
            for ch in 0..CHANNELS {
                for frame in &planes {
                    let plane = &frame[ch];
                    for r in 0..side {
                        let sr = (row0 + tv * side + r).min(h - 1);
                        for c in 0..side {
                            let sc = (col0 + th * side + c).min(w - 1);
                            data.push(plane[sr * w + sc]);
                        }
                    }
                }
            }
            cubes.push(Cube { data });
        }
    }
    Ok(CubeBatch {
        side,
        frames,
        subsequence: 0,
        region: Rect {
            row: row0,
            col: col0,
            height: tiles_v * side,
            width: tiles_h * side,
        },
        cubes,
    })
}

/// Where saliency maps come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SaliencySource {
    #[default]
    Heuristic,
    /// `<dir>/<content_id>_<subsequence>.sal` when present, else the
    /// heuristic.
    Sidecar { dir: PathBuf },
}

impl SaliencySource {
    pub fn sidecar_path(dir: &Path, content_id: &str, subsequence: usize) -> PathBuf {
        dir.join(format!("{content_id}_{subsequence}.sal"))
    }

    fn map_for(&self, clip: &VideoSequence, subsequence: usize) -> Result<SaliencyMap> {
        if let SaliencySource::Sidecar { dir } = self {
            let path = Self::sidecar_path(dir, &clip.content_id, subsequence);
            if path.exists() {
                let map = SaliencyMap::read(std::fs::File::open(&path)?)?;
                if map.width != clip.width() || map.height != clip.height() {
                    return Err(Error::GeometryMismatch(format!(
                        "{} is {}x{}, video is {}x{}",
                        path.display(),
                        map.width,
                        map.height,
                        clip.width(),
                        clip.height()
                    )));
                }
                return Ok(map);
            }
        }
        detect_saliency(clip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub cube_side: usize,
    pub cube_frames: usize,
    pub threshold: f64,
    #[serde(default)]
    pub saliency: SaliencySource,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cube_side: DEFAULT_CUBE_SIDE,
            cube_frames: DEFAULT_CUBE_FRAMES,
            threshold: DEFAULT_SALIENCY_THRESHOLD,
            saliency: SaliencySource::Heuristic,
        }
    }
}

/// Full preprocessing of one video: one [`CubeBatch`] per subsequence.
pub fn preprocess_video(
    video: &VideoSequence,
    config: &PreprocessConfig,
) -> Result<Vec<CubeBatch>> {
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::OutOfRange(format!(
            "saliency threshold {} must lie in (0, 1)",
            config.threshold
        )));
    }
    let clips = split_subsequences(video, config.cube_frames)?;
    clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let map = config.saliency.map_for(clip, i)?;
            let rect = min_bounding_rect(&map, config.threshold);
            let mut batch = tile_cubes(clip, rect, config.cube_side)?;
            batch.subsequence = i;
            Ok(batch)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CubeDumpHeader {
    schema_version: u32,
    dtype: String,
    layout: String,
    shape: [usize; 5],
    subsequence: Vec<usize>,
    data_file: String,
}

/// Debug dump: `<stem>.json` shape header plus `<stem>.bin` with every cube
/// as little-endian f32 in `[cube][channel][frame][row][col]` order.
pub fn write_cube_dump(batches: &[CubeBatch], dir: &Path, stem: &str) -> Result<()> {
    let first = batches
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to dump".into()))?;
    let mut bin = Vec::new();
    let mut subsequence = Vec::new();
    for b in batches {
        if b.side != first.side || b.frames != first.frames {
            return Err(Error::ShapeMismatch(
                "batches disagree on cube shape".into(),
            ));
        }
        for c in &b.cubes {
            subsequence.push(b.subsequence);
            for v in &c.data {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CubeDumpHeader {
        schema_version: crate::SCHEMA_VERSION,
        dtype: "float32-le".into(),
        layout: "NCDHW".into(),
        shape: [
            subsequence.len(),
            CHANNELS,
            first.frames,
            first.side,
            first.side,
        ],
        subsequence,
        data_file: format!("{stem}.bin"),
    };
    crate::util::write_atomic(&dir.join(format!("{stem}.bin")), &bin)?;
    crate::util::write_json_atomic(&dir.join(format!("{stem}.json")), &header)
}
