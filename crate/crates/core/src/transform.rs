//! Post-processing transforms used by the robustness and length sweeps.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::video::{FrameShape, Video, VideoError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Keep the central `floor(H/2) x floor(W/2)` region.
    CenterCrop50,
    /// Mirror every frame left to right.
    FlipH,
    /// Mirror every frame top to bottom.
    FlipV,
    /// Add i.i.d. `N(0, sigma^2)` to every element, then clamp to `[0, 1]`.
    GaussianNoise { sigma: f64 },
    /// Keep the first `ceil(fraction * T)` frames.
    Truncate { fraction: f64 },
}

impl Transform {
    /// Applies the transform. `seed` drives the noise generator and is
    /// ignored by the deterministic transforms.
    pub fn apply(&self, video: &Video, seed: u64) -> Result<Video, VideoError> {
        match *self {
            Transform::CenterCrop50 => center_crop(video),
            Transform::FlipH => Ok(flip(video, true)),
            Transform::FlipV => Ok(flip(video, false)),
            Transform::GaussianNoise { sigma } => gaussian_noise(video, sigma, seed),
            Transform::Truncate { fraction } => truncate(video, fraction),
        }
    }
}

fn center_crop(video: &Video) -> Result<Video, VideoError> {
    let shape = video.shape();
    if shape.height < 2 || shape.width < 2 {
        return Err(VideoError::DegenerateDimensions(format!(
            "center crop of {}x{} frames",
            shape.height, shape.width
        )));
    }
    let (h, w) = (shape.height / 2, shape.width / 2);
    let top = (shape.height - h) / 2;
    let left = (shape.width - w) / 2;
    let c = shape.channels;
    let out_shape = FrameShape::new(h, w, c);
    let mut data = Vec::with_capacity(video.frames() * out_shape.len());
    for frame in video.frames_iter() {
        for y in top..top + h {
            let row = (y * shape.width + left) * c;
            data.extend_from_slice(&frame[row..row + w * c]);
        }
    }
    Ok(Video::from_parts_unchecked(video.frames(), out_shape, data))
}

fn flip(video: &Video, horizontal: bool) -> Video {
    let shape = video.shape();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut data = Vec::with_capacity(video.data().len());
    for frame in video.frames_iter() {
        for y in 0..h {
            let sy = if horizontal { y } else { h - 1 - y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                let at = (sy * w + sx) * c;
                data.extend_from_slice(&frame[at..at + c]);
            }
        }
    }
    Video::from_parts_unchecked(video.frames(), shape, data)
}

fn gaussian_noise(video: &Video, sigma: f64, seed: u64) -> Result<Video, VideoError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(VideoError::DegenerateDimensions(format!("noise sigma {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated above");
    let data = video
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Video::from_parts_unchecked(video.frames(), video.shape(), data))
}

fn truncate(video: &Video, fraction: f64) -> Result<Video, VideoError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(VideoError::DegenerateDimensions(format!(
            "truncate fraction {fraction} outside (0, 1]"
        )));
    }
    let keep = ((fraction * video.frames() as f64).ceil() as usize).clamp(1, video.frames());
    let len = video.shape().len();
    Ok(Video::from_parts_unchecked(
        keep,
        video.shape(),
        video.data()[..keep * len].to_vec(),
    ))
}

#[derive(Debug, thiserror::Error)]
#[error("unknown transform `{0}` (expected crop50, fliph, flipv, noise:<sigma> or truncate:<fraction>)")]
pub struct ParseTransformError(String);

impl FromStr for Transform {
    type Err = ParseTransformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTransformError(s.to_string());
        let number = |v: &str| v.parse::<f64>().map_err(|_| err());
        match s.split_once(':') {
            None => match s {
                "crop50" => Ok(Transform::CenterCrop50),
                "fliph" => Ok(Transform::FlipH),
                "flipv" => Ok(Transform::FlipV),
                _ => Err(err()),
            },
            Some(("noise", v)) => Ok(Transform::GaussianNoise { sigma: number(v)? }),
            Some(("truncate", v)) => Ok(Transform::Truncate { fraction: number(v)? }),
            Some(_) => Err(err()),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::CenterCrop50 => f.write_str("crop50"),
            Transform::FlipH => f.write_str("fliph"),
            Transform::FlipV => f.write_str("flipv"),
            Transform::GaussianNoise { sigma } => write!(f, "noise:{sigma}"),
            Transform::Truncate { fraction } => write!(f, "truncate:{fraction}"),
        }
    }
}
