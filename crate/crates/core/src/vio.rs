//! Raw video ingest: Y4M parsing/writing and frame-range slicing.
//!
//! Only 8-bit 4:2:0 streams are accepted. Anything else is rejected with
//! [`Error::UnsupportedFormat`] instead of being silently converted.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SIGNATURE: &str = "YUV4MPEG2";
const FRAME_TAG: &[u8] = b"FRAME";

/// Frame rate as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.num, self.den)
    }
}

/// One decoded 8-bit 4:2:0 picture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

impl Frame {
    /// Mid-gray frame with neutral chroma.
    pub fn gray(width: usize, height: usize, luma: u8) -> Self {
        Self {
            y: vec![luma; width * height],
            u: vec![128; (width / 2) * (height / 2)],
            v: vec![128; (width / 2) * (height / 2)],
        }
    }

    pub fn from_luma(width: usize, height: usize, y: Vec<u8>) -> Self {
        assert_eq!(y.len(), width * height, "luma plane length");
        let mut f = Self::gray(width, height, 0);
        f.y = y;
        f
    }
}

/// Borrowed view of a single luma plane.
#[derive(Debug, Clone, Copy)]
pub struct LumaPlane<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [u8],
}

impl<'a> LumaPlane<'a> {
    pub fn new(width: usize, height: usize, data: &'a [u8]) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::GeometryMismatch(format!(
                "plane of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }
}

/// Header tags that are carried through untouched so a parsed stream can be
/// written back out.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Y4mTags {
    /// Interlacing tag without the leading `I` (e.g. `p`).
    pub interlace: Option<String>,
    /// Pixel aspect without the leading `A` (e.g. `1:1`).
    pub aspect: Option<String>,
    /// Chroma tag without the leading `C` (e.g. `420jpeg`).
    pub chroma: Option<String>,
    /// `X` comments, verbatim without the leading `X`.
    pub comments: Vec<String>,
}

/// A decoded video clip held entirely in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSequence {
    width: usize,
    height: usize,
    frame_rate: FrameRate,
    frames: Vec<Frame>,
    pub content_id: String,
    pub tags: Y4mTags,
}

impl VideoSequence {
    /// Builds a sequence, checking every geometry invariant.
    pub fn new(
        width: usize,
        height: usize,
        frame_rate: FrameRate,
        frames: Vec<Frame>,
        content_id: impl Into<String>,
    ) -> Result<Self> {
        validate_geometry(width, height)?;
        if frame_rate.num == 0 || frame_rate.den == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame rate {frame_rate} must be positive"
            )));
        }
        if frames.is_empty() {
            return Err(Error::InvalidArgument(
                "a video needs at least one frame".into(),
            ));
        }
        let (luma, chroma) = (width * height, (width / 2) * (height / 2));
        for (i, f) in frames.iter().enumerate() {
            if f.y.len() != luma || f.u.len() != chroma || f.v.len() != chroma {
                return Err(Error::GeometryMismatch(format!(
                    "frame {i} planes ({}, {}, {}) do not match {width}x{height} 4:2:0",
                    f.y.len(),
                    f.u.len(),
                    f.v.len()
                )));
            }
        }
        Ok(Self {
            width,
            height,
            frame_rate,
            frames,
            content_id: content_id.into(),
            tags: Y4mTags::default(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_rate(&self) -> FrameRate {
        self.frame_rate
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn luma(&self, index: usize) -> LumaPlane<'_> {
        LumaPlane {
            width: self.width,
            height: self.height,
            data: &self.frames[index].y,
        }
    }

    pub fn same_geometry(&self, other: &VideoSequence) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies `length` consecutive frames starting at `start`.
    pub fn slice_clip(&self, start: usize, length: usize) -> Result<VideoSequence> {
        if length == 0 {
            return Err(Error::OutOfRange("clip length must be at least 1".into()));
        }
        let end = start
            .checked_add(length)
            .filter(|&e| e <= self.frames.len())
            .ok_or_else(|| {
                Error::OutOfRange(format!(
                    "frames [{start}, {}) requested from a {}-frame video",
                    start.saturating_add(length),
                    self.frames.len()
                ))
            })?;
        Ok(VideoSequence {
            width: self.width,
            height: self.height,
            frame_rate: self.frame_rate,
            frames: self.frames[start..end].to_vec(),
            content_id: self.content_id.clone(),
            tags: self.tags.clone(),
        })
    }
}

fn validate_geometry(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "geometry {width}x{height} must be non-zero"
        )));
    }
    if width % 2 != 0 || height % 2 != 0 {
        return Err(Error::UnsupportedFormat(format!(
            "4:2:0 requires even dimensions, got {width}x{height}"
        )));
    }
    Ok(())
}

pub fn slice_clip(video: &VideoSequence, start: usize, length: usize) -> Result<VideoSequence> {
    video.slice_clip(start, length)
}

struct Header {
    width: usize,
    height: usize,
    frame_rate: FrameRate,
    tags: Y4mTags,
}

fn parse_header(line: &str) -> Result<Header> {
    let mut parts = line.split(' ').filter(|s| !s.is_empty());
    if parts.next() != Some(SIGNATURE) {
        return Err(Error::MalformedHeader(format!(
            "missing {SIGNATURE} signature"
        )));
    }
    let mut width = None;
    let mut height = None;
    let mut frame_rate = None;
    let mut tags = Y4mTags::default();
    for token in parts {
        let (tag, value) = token.split_at(1);
        match tag {
            "W" => width = Some(parse_dim(value, "W")?),
            "H" => height = Some(parse_dim(value, "H")?),
            "F" => frame_rate = Some(parse_ratio(value)?),
            "I" => tags.interlace = Some(value.to_string()),
            "A" => tags.aspect = Some(value.to_string()),
            "C" => tags.chroma = Some(value.to_string()),
            "X" => tags.comments.push(value.to_string()),
            _ => {
                return Err(Error::MalformedHeader(format!("unknown tag `{token}`")));
            }
        }
    }
    let width = width.ok_or_else(|| Error::MalformedHeader("missing W tag".into()))?;
    let height = height.ok_or_else(|| Error::MalformedHeader("missing H tag".into()))?;
    let frame_rate = frame_rate.ok_or_else(|| Error::MalformedHeader("missing F tag".into()))?;
    if let Some(c) = &tags.chroma {
        match c.as_str() {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => {}
            other => {
                return Err(Error::UnsupportedFormat(format!(
                    "chroma `{other}` (only 8-bit 4:2:0 is supported)"
                )))
            }
        }
    }
    if let Some(depth) = tags.comments.iter().find_map(|c| c.strip_prefix("YSCSS=")) {
        if depth != "420JPEG" && depth != "420MPEG2" && depth != "420PALDV" && depth != "420" {
            return Err(Error::UnsupportedFormat(format!("YSCSS={depth}")));
        }
    }
    validate_geometry(width, height).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::MalformedHeader(m),
        other => other,
    })?;
    Ok(Header {
        width,
        height,
        frame_rate,
        tags,
    })
}

fn parse_dim(value: &str, tag: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::MalformedHeader(format!("bad {tag} value `{value}`")))
}

fn parse_ratio(value: &str) -> Result<FrameRate> {
    let (n, d) = value
        .split_once(':')
        .ok_or_else(|| Error::MalformedHeader(format!("bad F value `{value}`")))?;
    let num = n
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad F numerator `{n}`")))?;
    let den = d
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad F denominator `{d}`")))?;
    if num == 0 || den == 0 {
        return Err(Error::MalformedHeader(format!(
            "zero in frame rate `{value}`"
        )));
    }
    Ok(FrameRate { num, den })
}

/// Reads until `\n`, failing on EOF before the terminator.
fn read_line<R: BufRead>(reader: &mut R, what: &str) -> Result<Option<Vec<u8>>> {
    let mut buf = Vec::new();
    let n = reader.read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader(format!("unterminated {what} line")));
    }
    buf.pop();
    Ok(Some(buf))
}

/// Decodes a complete Y4M stream.
pub fn read_y4m<R: Read>(reader: R, content_id: impl Into<String>) -> Result<VideoSequence> {
    let mut reader = BufReader::new(reader);
    let header_line = read_line(&mut reader, "header")?
        .ok_or_else(|| Error::MalformedHeader("empty stream".into()))?;
    let header_line = String::from_utf8(header_line)
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let header = parse_header(&header_line)?;

    let luma = header.width * header.height;
    let chroma = (header.width / 2) * (header.height / 2);
    let frame_bytes = luma + 2 * chroma;

    let mut frames = Vec::new();
    while let Some(marker) = read_line(&mut reader, "FRAME")? {
        if !marker.starts_with(FRAME_TAG)
            || !(marker.len() == FRAME_TAG.len() || marker[FRAME_TAG.len()] == b' ')
        {
            return Err(Error::MalformedHeader(format!(
                "expected FRAME marker before frame {}",
                frames.len()
            )));
        }
        let mut payload = vec![0u8; frame_bytes];
        let got = read_fully(&mut reader, &mut payload)?;
        if got != frame_bytes {
            return Err(Error::TruncatedFrame {
                frame: frames.len(),
                expected: frame_bytes,
                got,
            });
        }
        let v = payload.split_off(luma + chroma);
        let u = payload.split_off(luma);
        frames.push(Frame { y: payload, u, v });
    }
    if frames.is_empty() {
        return Err(Error::MalformedHeader("stream has no frames".into()));
    }
    let mut video = VideoSequence::new(
        header.width,
        header.height,
        header.frame_rate,
        frames,
        content_id,
    )?;
    video.tags = header.tags;
    Ok(video)
}

fn read_fully<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Opens and decodes a Y4M file; the file stem becomes the content id.
pub fn open_y4m(path: &Path) -> Result<VideoSequence> {
    let file = std::fs::File::open(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_y4m(file, id)
}

/// Serializes a sequence as Y4M. Tags parsed from an input stream are
/// written back in canonical order (W H F I A C X...).
pub fn write_y4m<W: Write>(video: &VideoSequence, mut writer: W) -> Result<()> {
    let mut header = format!(
        "{SIGNATURE} W{} H{} F{}",
        video.width, video.height, video.frame_rate
    );
    let tags = &video.tags;
    if let Some(i) = &tags.interlace {
        header.push_str(&format!(" I{i}"));
    }
    if let Some(a) = &tags.aspect {
        header.push_str(&format!(" A{a}"));
    }
    if let Some(c) = &tags.chroma {
        header.push_str(&format!(" C{c}"));
    }
    for x in &tags.comments {
        header.push_str(&format!(" X{x}"));
    }
    header.push('\n');
    writer.write_all(header.as_bytes())?;
    for f in &video.frames {
        writer.write_all(b"FRAME\n")?;
        writer.write_all(&f.y)?;
        writer.write_all(&f.u)?;
        writer.write_all(&f.v)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_y4m(video: &VideoSequence, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_y4m(video, &mut buf)?;
    crate::util::write_atomic(path, &buf)
}
