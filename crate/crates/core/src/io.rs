//! Video file I/O: the raw `SWVT` tensor format and PNG frame directories.
//!
//! `SWVT` layout, all integers little-endian:
//!
//! | bytes | field                         |
//! |-------|-------------------------------|
//! | 0..4  | magic `53 57 56 54`           |
//! | 4..6  | version, u16 = 1              |
//! | 6..8  | reserved, u16 = 0             |
//! | 8..24 | T, H, W, C as u32             |
//! | 24    | dtype code, u8 = 1 (f32 LE)   |
//! | 25..28| padding, zero                 |
//! | 28..  | T*H*W*C f32 values, T-major   |

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::video::{FrameShape, Video, VideoError};

pub const MAGIC: [u8; 4] = *b"SWVT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32_LE: u8 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{found} unexpected bytes after the payload")]
    TrailingData { found: usize },
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("png decode failed for {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("frame {path} is {found}, expected {expected}")]
    FrameShapeMismatch {
        path: PathBuf,
        expected: FrameShape,
        found: FrameShape,
    },
    #[error("no png frames in {0}")]
    NoFrames(PathBuf),
    #[error(transparent)]
    Video(#[from] VideoError),
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoFormat {
    RawTensor,
    ImageSequence,
}

impl VideoFormat {
    /// Directories are image sequences, everything else is raw.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            VideoFormat::ImageSequence
        } else {
            VideoFormat::RawTensor
        }
    }
}

/// A loaded video and the number of source elements clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub video: Video,
    pub clamped: usize,
}

pub fn load_video(path: &Path, format: VideoFormat) -> Result<Loaded, IoError> {
    match format {
        VideoFormat::RawTensor => {
            let bytes = fs::read(path).map_err(io_failure(path))?;
            decode_raw(&bytes)
        }
        VideoFormat::ImageSequence => load_png_dir(path),
    }
}

pub fn save_video(video: &Video, path: &Path) -> Result<(), IoError> {
    if path.as_os_str().is_empty() {
        return Err(IoError::IoFailure {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "empty path"),
        });
    }
    let file = fs::File::create(path).map_err(io_failure(path))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_raw(video))
        .and_then(|_| out.flush())
        .map_err(io_failure(path))
}

pub fn encode_raw(video: &Video) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * video.data().len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    for dim in [video.frames(), video.height(), video.width(), video.channels()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.push(DTYPE_F32_LE);
    buf.extend_from_slice(&[0; 3]);
    for v in video.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_raw(bytes: &[u8]) -> Result<Loaded, IoError> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::MalformedHeader(format!(
            "{} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(IoError::MalformedHeader(format!("bad magic {:02x?}", &bytes[0..4])));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = u16_at(4);
    if version != VERSION {
        return Err(IoError::MalformedHeader(format!("unsupported version {version}")));
    }
    let dims = [u32_at(8), u32_at(12), u32_at(16), u32_at(20)];
    if dims.contains(&0) {
        return Err(IoError::MalformedHeader(format!("zero dimension in {dims:?}")));
    }
    if bytes[24] != DTYPE_F32_LE {
        return Err(IoError::UnsupportedDtype(format!("code {}", bytes[24])));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IoError::MalformedHeader(format!("dimensions {dims:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count {
        return Err(IoError::TruncatedPayload {
            expected: count,
            found: payload.len(),
        });
    }
    if payload.len() > count {
        return Err(IoError::TrailingData {
            found: payload.len() - count,
        });
    }
    let mut data = Vec::with_capacity(count / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if v.is_nan() {
            return Err(IoError::NonFinite(i));
        }
        data.push(v);
    }
    let (video, clamped) =
        Video::new_clamped(dims[0], FrameShape::new(dims[1], dims[2], dims[3]), data)?;
    Ok(Loaded { video, clamped })
}

/// Loads lexicographically sorted `*.png` files from a directory; 8-bit only.
fn load_png_dir(dir: &Path) -> Result<Loaded, IoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_failure(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::NoFrames(dir.to_path_buf()));
    }
    let mut shape = None;
    let mut data = Vec::new();
    for path in &paths {
        let (frame_shape, pixels) = decode_png(path)?;
        match shape {
            None => shape = Some(frame_shape),
            Some(expected) if expected != frame_shape => {
                return Err(IoError::FrameShapeMismatch {
                    path: path.clone(),
                    expected,
                    found: frame_shape,
                })
            }
            Some(_) => {}
        }
        data.extend(pixels.into_iter().map(|b| b as f32 / 255.0));
    }
    let video = Video::new(paths.len(), shape.unwrap(), data)?;
    Ok(Loaded { video, clamped: 0 })
}

fn decode_png(path: &Path) -> Result<(FrameShape, Vec<u8>), IoError> {
    let png_err = |message: String| IoError::Png {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(io_failure(path))?;
    let mut decoder = png::Decoder::new(io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| png_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(IoError::UnsupportedDtype(format!(
            "{}: {:?} bit png",
            path.display(),
            info.bit_depth
        )));
    }
    let channels = info.color_type.samples();
    buf.truncate(info.buffer_size());
    let shape = FrameShape::new(info.height as usize, info.width as usize, channels);
    if info.line_size != shape.width * channels {
        // Rows are packed for 8-bit images; anything else means an
        // unexpected layout.
        return Err(png_err(format!("unexpected row stride {}", info.line_size)));
    }
    Ok((shape, buf))
}
