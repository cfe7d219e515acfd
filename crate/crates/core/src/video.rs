//! Image sequences and the repo-wide coordinate convention.
//!
//! Coordinates are `(x, y)` with `x` the column (growing rightward) and `y`
//! the row (growing downward). The origin is the center of the top-left
//! pixel, so pixel `(i, j)` has its center at exactly `x = i, y = j`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("path not found: {0}")]
    NotFound(PathBuf),
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("unsupported bit depth or sample format: {0}")]
    UnsupportedDepth(String),
    #[error("sequence has {0} frame(s), at least 2 required")]
    TooShort(usize),
    #[error("invalid target size {0}x{1}, both dimensions must be >= 2")]
    BadSize(usize, usize),
    #[error("channel {channel} requested but image has {available} channel(s)")]
    BadChannel { channel: usize, available: usize },
    #[error("failed to decode {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sub-pixel image location.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2D {
    type Output = Point2D;
    fn add(self, o: Point2D) -> Point2D {
        Point2D::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2D {
    type Output = Point2D;
    fn sub(self, o: Point2D) -> Point2D {
        Point2D::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    /// Intensities normalized to `[0, 1]`.
    pub pixels: Grid,
}

/// An ordered stack of equally sized grayscale frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    width: usize,
    height: usize,
    source_path: String,
    bit_depth: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    TiffStack,
    ImageDir,
}

impl std::str::FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiff_stack" | "tiff" => Ok(SourceKind::TiffStack),
            "image_dir" | "dir" => Ok(SourceKind::ImageDir),
            other => Err(format!("unknown source kind '{other}'")),
        }
    }
}

/// Options that affect how raw samples become normalized intensities.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Use this channel of multi-channel data instead of the channel mean.
    pub channel: Option<usize>,
}

impl VideoSequence {
    /// Builds a sequence from already-normalized planes.
    pub fn from_planes(planes: Vec<Grid>, bit_depth: u8, source_path: impl Into<String>) -> Result<Self, VideoError> {
        if planes.len() < 2 {
            return Err(VideoError::TooShort(planes.len()));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(VideoError::UnsupportedDepth(format!("{bit_depth}-bit")));
        }
        let (width, height) = (planes[0].width(), planes[0].height());
        for (index, p) in planes.iter().enumerate() {
            if p.width() != width || p.height() != height {
                return Err(VideoError::DimensionMismatch {
                    index,
                    want_w: width,
                    want_h: height,
                    got_w: p.width(),
                    got_h: p.height(),
                });
            }
        }
        let frames = planes
            .into_iter()
            .enumerate()
            .map(|(index, pixels)| Frame { index, pixels })
            .collect();
        Ok(Self {
            frames,
            width,
            height,
            source_path: source_path.into(),
            bit_depth,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }
}

/// Raw decoded frame before sequence-level normalization.
struct RawFrame {
    width: usize,
    height: usize,
    depth: u8,
    /// Single-channel samples in source units.
    samples: Vec<f32>,
}

fn reduce_channels(interleaved: &[f32], channels: usize, opts: LoadOptions) -> Result<Vec<f32>, VideoError> {
    if channels == 1 {
        return Ok(interleaved.to_vec());
    }
    // Alpha never contributes to luminance.
    let color = if channels == 2 || channels == 4 { channels - 1 } else { channels };
    if let Some(c) = opts.channel {
        if c >= color {
            return Err(VideoError::BadChannel {
                channel: c,
                available: color,
            });
        }
        return Ok(interleaved.chunks_exact(channels).map(|px| px[c]).collect());
    }
    Ok(interleaved
        .chunks_exact(channels)
        .map(|px| px[..color].iter().sum::<f32>() / color as f32)
        .collect())
}

fn decode_image_file(path: &Path, opts: LoadOptions) -> Result<RawFrame, VideoError> {
    use image::DynamicImage as D;
    let img = image::open(path).map_err(|e| VideoError::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (depth, channels, raw): (u8, usize, Vec<f32>) = match &img {
        D::ImageLuma8(b) => (8, 1, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageLumaA8(b) => (8, 2, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageRgb8(b) => (8, 3, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageRgba8(b) => (8, 4, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageLuma16(b) => (16, 1, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageLumaA16(b) => (16, 2, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageRgb16(b) => (16, 3, b.as_raw().iter().map(|&v| v as f32).collect()),
        D::ImageRgba16(b) => (16, 4, b.as_raw().iter().map(|&v| v as f32).collect()),
        other => return Err(VideoError::UnsupportedDepth(format!("{:?}", other.color()))),
    };
    Ok(RawFrame {
        width,
        height,
        depth,
        samples: reduce_channels(&raw, channels, opts)?,
    })
}

fn tiff_err(path: &Path, e: tiff::TiffError) -> VideoError {
    VideoError::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn decode_tiff_stack(path: &Path, opts: LoadOptions) -> Result<Vec<RawFrame>, VideoError> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::ColorType;

    let file = BufReader::new(File::open(path)?);
    let mut dec = Decoder::new(file).map_err(|e| tiff_err(path, e))?;
    let mut out = Vec::new();
    loop {
        let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
        let color = dec.colortype().map_err(|e| tiff_err(path, e))?;
        let (channels, depth) = match color {
            ColorType::Gray(d) => (1, d),
            ColorType::GrayA(d) => (2, d),
            ColorType::RGB(d) => (3, d),
            ColorType::RGBA(d) => (4, d),
            other => return Err(VideoError::UnsupportedDepth(format!("{other:?}"))),
        };
        if depth != 8 && depth != 16 {
            return Err(VideoError::UnsupportedDepth(format!("{depth}-bit")));
        }
        let raw: Vec<f32> = match dec.read_image().map_err(|e| tiff_err(path, e))? {
            DecodingResult::U8(v) => v.into_iter().map(|s| s as f32).collect(),
            DecodingResult::U16(v) => v.into_iter().map(|s| s as f32).collect(),
            other => {
                return Err(VideoError::UnsupportedDepth(format!(
                    "sample buffer {:?}",
                    std::mem::discriminant(&other)
                )))
            }
        };
        out.push(RawFrame {
            width: w as usize,
            height: h as usize,
            depth,
            samples: reduce_channels(&raw, channels, opts)?,
        });
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, e))?;
    }
    Ok(out)
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm", "tif", "tiff"];

fn list_image_dir(dir: &Path) -> Result<Vec<PathBuf>, VideoError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    .unwrap_or(false)
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads a multi-page TIFF or a directory of image files as a normalized
/// grayscale sequence.
///
/// 8-bit data is divided by 255. 16-bit data is divided by the maximum
/// sample found anywhere in the sequence.
pub fn load_sequence(path: &Path, kind: SourceKind) -> Result<VideoSequence, VideoError> {
    load_sequence_with(path, kind, LoadOptions::default())
}

pub fn load_sequence_with(path: &Path, kind: SourceKind, opts: LoadOptions) -> Result<VideoSequence, VideoError> {
    if !path.exists() {
        return Err(VideoError::NotFound(path.to_path_buf()));
    }
    let raw = match kind {
        SourceKind::TiffStack => decode_tiff_stack(path, opts)?,
        SourceKind::ImageDir => list_image_dir(path)?
            .iter()
            .map(|p| decode_image_file(p, opts))
            .collect::<Result<Vec<_>, _>>()?,
    };
    if raw.len() < 2 {
        return Err(VideoError::TooShort(raw.len()));
    }
    let (w, h) = (raw[0].width, raw[0].height);
    for (index, f) in raw.iter().enumerate() {
        if f.width != w || f.height != h {
            return Err(VideoError::DimensionMismatch {
                index,
                want_w: w,
                want_h: h,
                got_w: f.width,
                got_h: f.height,
            });
        }
    }
    let depth = raw.iter().map(|f| f.depth).max().unwrap_or(8);
    let scale = if depth == 8 {
        255.0
    } else {
        let max = raw
            .iter()
            .flat_map(|f| f.samples.iter().copied())
            .fold(0.0f32, f32::max);
        if max > 0.0 {
            max
        } else {
            1.0
        }
    };
    let planes = raw
        .into_iter()
        .map(|f| Grid::from_vec(w, h, f.samples.into_iter().map(|s| s / scale).collect()))
        .collect();
    VideoSequence::from_planes(planes, depth, path.display().to_string())
}

/// Resamples every frame to `new_w x new_h` with bilinear interpolation.
pub fn rescale_sequence(video: &VideoSequence, new_w: usize, new_h: usize) -> Result<VideoSequence, VideoError> {
    if new_w < 2 || new_h < 2 {
        return Err(VideoError::BadSize(new_w, new_h));
    }
    let planes = video
        .frames
        .iter()
        .map(|f| f.pixels.resize_bilinear(new_w, new_h))
        .collect();
    VideoSequence::from_planes(planes, video.bit_depth, video.source_path.clone())
}

/// Maps points between pixel grids: `x' = x * to_w / from_w`, same for `y`.
pub fn rescale_points(points: &[Point2D], from: (usize, usize), to: (usize, usize)) -> Vec<Point2D> {
    let sx = to.0 as f64 / from.0 as f64;
    let sy = to.1 as f64 / from.1 as f64;
    points
        .iter()
        .map(|p| Point2D::new(p.x * sx, p.y * sy))
        .collect()
}

/// Writes a sequence as a multi-page 16-bit grayscale TIFF.
pub fn write_tiff_stack(video: &VideoSequence, path: &Path) -> Result<(), VideoError> {
    use tiff::encoder::{colortype, TiffEncoder};
    let file = std::io::BufWriter::new(File::create(path)?);
    let mut enc = TiffEncoder::new(file).map_err(|e| tiff_err(path, e))?;
    for f in &video.frames {
        let data: Vec<u16> = f
            .pixels
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        enc.write_image::<colortype::Gray16>(video.width as u32, video.height as u32, &data)
            .map_err(|e| tiff_err(path, e))?;
    }
    Ok(())
}

/// Encodes one plane as an 8-bit grayscale PNG.
pub fn encode_png(plane: &Grid) -> Vec<u8> {
    use image::{codecs::png::PngEncoder, ImageEncoder};
    let bytes: Vec<u8> = plane
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            &bytes,
            plane.width() as u32,
            plane.height() as u32,
            image::ExtendedColorType::L8,
        )
        .expect("in-memory PNG encoding cannot fail for valid dimensions");
    out
}
