//! A linear chunk autoencoder with an analytically known decoder range.
//!
//! Each `K`-frame chunk is cut into spatial tiles; every tile is encoded by
//! the same `d_t x (K*th*tw*C)` matrix `P` with orthonormal rows and decoded
//! by its transpose around the mid-grey level:
//!
//! ```text
//! R(c) = 0.5 + P^T P (c - 0.5)
//! ```
//!
//! The fixed points of `R` are exactly the videos the decoder can emit, and a
//! window that straddles chunk boundaries leaves that set. Sharing one tile
//! basis across positions makes the map translation-equivariant at the tile
//! stride, like a convolutional VAE, so tile-aligned crops stay decodable.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_chunked, parse_shape, OracleError, Reconstructor};
use crate::video::{FrameShape, Video};

/// Centre of the affine projection.
const CENTRE: f64 = 0.5;
/// Decoded belonging content stays within `CENTRE +- AMPLITUDE`.
const AMPLITUDE: f64 = 0.25;
const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    /// Frames per chunk.
    pub k: usize,
    /// Nominal frame shape of videos the model generates.
    pub dims: FrameShape,
    /// Latent dimension per chunk over the nominal frame, summed over tiles.
    pub latent_dim: usize,
    /// Spatial tile `(height, width)`; `None` picks the largest of 4, 2, 1
    /// dividing each side.
    pub tile: Option<(usize, usize)>,
    /// Shrinkage `lambda` in `x + lambda (R(x) - x)`, emulating a decoder
    /// with a denoising step.
    pub denoise: Option<f64>,
}

impl ToyConfig {
    pub fn new(seed: u64, k: usize, dims: FrameShape, latent_dim: usize) -> Self {
        Self {
            seed,
            k,
            dims,
            latent_dim,
            tile: None,
            denoise: None,
        }
    }

    /// Default desk-scale model: `K = 4`, 16x16 grey frames, 64 latent dims.
    pub fn desk(seed: u64) -> Self {
        Self::new(seed, 4, FrameShape::new(16, 16, 1), 64)
    }

    pub fn resolved_tile(&self) -> (usize, usize) {
        self.tile.unwrap_or_else(|| {
            let side = |n: usize| [4, 2, 1].into_iter().find(|t| n.is_multiple_of(*t)).unwrap();
            (side(self.dims.height), side(self.dims.width))
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

impl fmt::Display for ToyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.seed, self.k, self.dims, self.latent_dim)?;
        if let Some((h, w)) = self.tile {
            write!(f, ",tile={h}x{w}")?;
        }
        if let Some(l) = self.denoise {
            write!(f, ",denoise={l}")?;
        }
        Ok(())
    }
}

impl FromStr for ToyConfig {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OracleError::BadSpec(format!("toy:{s}"));
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() < 4 {
            return Err(bad());
        }
        let mut cfg = ToyConfig::new(
            parts[0].parse().map_err(|_| bad())?,
            parts[1].parse().map_err(|_| bad())?,
            parse_shape(parts[2]).ok_or_else(bad)?,
            parts[3].parse().map_err(|_| bad())?,
        );
        for opt in &parts[4..] {
            match opt.split_once('=') {
                Some(("tile", v)) => {
                    let (h, w) = v.split_once('x').ok_or_else(bad)?;
                    cfg.tile = Some((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?));
                }
                Some(("denoise", v)) => cfg.denoise = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct ToyChunkAutoencoder {
    id: String,
    config: ToyConfig,
    tile: (usize, usize),
    /// Length of one tile vector, `K * th * tw * C`.
    tile_dim: usize,
    /// Rows of the tile basis.
    tile_latent: usize,
    /// `tile_latent x tile_dim`, row-major, orthonormal rows.
    basis: Arc<[f64]>,
}

impl ToyChunkAutoencoder {
    /// Seeded Gaussian rows, orthonormalised by Gram-Schmidt.
    pub fn build(config: ToyConfig) -> Result<Self, OracleError> {
        let (tile, tile_dim, tile_latent) = geometry(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(tile_latent);
        while rows.len() < tile_latent {
            let mut v: Vec<f64> = (0..tile_dim).map(|_| rng.sample(StandardNormal)).collect();
            // Two passes of modified Gram-Schmidt keep rows orthogonal to
            // machine precision.
            for _ in 0..2 {
                for r in &rows {
                    let dot = dot(r, &v);
                    v.iter_mut().zip(r).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
        Ok(Self::assemble(config, tile, tile_dim, tile_latent, rows.concat()))
    }

    /// Uses a caller-supplied tile basis (`rows`, each `K*th*tw*C` long).
    pub fn from_tile_basis(config: ToyConfig, rows: &[Vec<f64>]) -> Result<Self, OracleError> {
        let (tile, tile_dim, tile_latent) = geometry(&config)?;
        if rows.len() != tile_latent || rows.iter().any(|r| r.len() != tile_dim) {
            return Err(OracleError::BadBasis(format!(
                "expected {tile_latent} rows of length {tile_dim}"
            )));
        }
        for (i, a) in rows.iter().enumerate() {
            for (j, b) in rows.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot(a, b) - target).abs() > ORTHONORMAL_TOL {
                    return Err(OracleError::BadBasis(format!("rows {i} and {j} are not orthonormal")));
                }
            }
        }
        Ok(Self::assemble(config, tile, tile_dim, tile_latent, rows.concat()))
    }

    fn assemble(
        config: ToyConfig,
        tile: (usize, usize),
        tile_dim: usize,
        tile_latent: usize,
        basis: Vec<f64>,
    ) -> Self {
        Self {
            id: format!("toy:{config}"),
            config,
            tile,
            tile_dim,
            tile_latent,
            basis: basis.into(),
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn tile(&self) -> (usize, usize) {
        self.tile
    }

    pub fn tile_dim(&self) -> usize {
        self.tile_dim
    }

    pub fn tile_latent(&self) -> usize {
        self.tile_latent
    }

    pub fn tile_basis_row(&self, r: usize) -> &[f64] {
        &self.basis[r * self.tile_dim..(r + 1) * self.tile_dim]
    }

    /// The block-structured `d x (K*H*W*C)` basis over one nominal chunk,
    /// rows ordered tile-major then latent index.
    pub fn full_basis(&self) -> Vec<Vec<f64>> {
        let dims = self.config.dims;
        let (th, tw) = self.tile;
        let chunk_dim = self.config.k * dims.len();
        let mut rows = Vec::with_capacity(self.config.latent_dim);
        for ty in 0..dims.height / th {
            for tx in 0..dims.width / tw {
                for r in 0..self.tile_latent {
                    let mut row = vec![0.0; chunk_dim];
                    let src = self.tile_basis_row(r);
                    for (ti, ci) in self.tile_indices(dims, ty, tx).enumerate() {
                        row[ci] = src[ti];
                    }
                    rows.push(row);
                }
            }
        }
        rows
    }

    /// Chunk-vector indices (frame-major within a `K`-frame chunk) of tile
    /// `(ty, tx)`, in tile-vector order.
    fn tile_indices(&self, shape: FrameShape, ty: usize, tx: usize) -> impl Iterator<Item = usize> + '_ {
        let (th, tw) = self.tile;
        let c = shape.channels;
        (0..self.config.k).flat_map(move |f| {
            (0..th).flat_map(move |yy| {
                let y = ty * th + yy;
                (0..tw * c).map(move |xc| (f * shape.height + y) * shape.width * c + tx * tw * c + xc)
            })
        })
    }

    /// Projects one centred tile vector in place: `v <- P^T P v`.
    fn project(&self, v: &mut [f64], coeffs: &mut [f64]) {
        for (r, c) in coeffs.iter_mut().enumerate() {
            *c = dot(self.tile_basis_row(r), v);
        }
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, &c) in coeffs.iter().enumerate() {
            v.iter_mut()
                .zip(self.tile_basis_row(r))
                .for_each(|(x, b)| *x += c * b);
        }
    }

    fn check_shape(&self, window: &Video) -> Result<(), OracleError> {
        check_chunked(window, self.config.k)?;
        let (th, tw) = self.tile;
        let shape = window.shape();
        if shape.channels != self.config.dims.channels || !shape.height.is_multiple_of(th) || !shape.width.is_multiple_of(tw) {
            return Err(OracleError::ShapeMismatch(format!(
                "frames {shape} incompatible with {th}x{tw} tiles of {} channels",
                self.config.dims.channels
            )));
        }
        Ok(())
    }

    /// Decodes one chunk of nominal-size tiles from per-tile latent codes
    /// (`n_tiles x tile_latent`, tile-major), rescaled into `[0.25, 0.75]`.
    fn decode_chunk(&self, latents: &[f64], out: &mut [f64]) {
        let dims = self.config.dims;
        let (th, tw) = self.tile;
        let mut tile_vec = vec![0.0; self.tile_dim];
        let mut idx = 0;
        for ty in 0..dims.height / th {
            for tx in 0..dims.width / tw {
                let z = &latents[idx * self.tile_latent..(idx + 1) * self.tile_latent];
                idx += 1;
                tile_vec.iter_mut().for_each(|x| *x = 0.0);
                for (r, &zr) in z.iter().enumerate() {
                    tile_vec
                        .iter_mut()
                        .zip(self.tile_basis_row(r))
                        .for_each(|(x, b)| *x += zr * b);
                }
                let peak = tile_vec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let scale = if peak > 0.0 { AMPLITUDE / peak } else { 0.0 };
                for (ti, ci) in self.tile_indices(dims, ty, tx).enumerate() {
                    out[ci] = CENTRE + scale * tile_vec[ti];
                }
            }
        }
    }

    fn n_tiles(&self) -> usize {
        let (th, tw) = self.tile;
        (self.config.dims.height / th) * (self.config.dims.width / tw)
    }
}

fn geometry(config: &ToyConfig) -> Result<((usize, usize), usize, usize), OracleError> {
    let dims = config.dims;
    if config.k < 2 {
        return Err(OracleError::BadSpec(format!("chunk size {} < 2", config.k)));
    }
    if dims.is_empty() {
        return Err(OracleError::BadSpec(format!("frame shape {dims}")));
    }
    let chunk_dim = config.k * dims.len();
    if config.latent_dim == 0 || config.latent_dim >= chunk_dim {
        return Err(OracleError::BadLatentDim(format!(
            "need 1 <= d < {chunk_dim}, got {}",
            config.latent_dim
        )));
    }
    let (th, tw) = config.resolved_tile();
    if th == 0 || tw == 0 || !dims.height.is_multiple_of(th) || !dims.width.is_multiple_of(tw) {
        return Err(OracleError::BadSpec(format!("tile {th}x{tw} does not divide {dims}")));
    }
    let n_tiles = (dims.height / th) * (dims.width / tw);
    if !config.latent_dim.is_multiple_of(n_tiles) {
        return Err(OracleError::BadLatentDim(format!(
            "d = {} is not a multiple of the {n_tiles} tiles",
            config.latent_dim
        )));
    }
    let tile_dim = config.k * th * tw * dims.channels;
    let tile_latent = config.latent_dim / n_tiles;
    if tile_latent >= tile_dim {
        return Err(OracleError::BadLatentDim(format!(
            "{tile_latent} latent dims per tile of size {tile_dim}"
        )));
    }
    if let Some(l) = config.denoise {
        if !(l.is_finite() && l > 0.0 && l <= 1.0) {
            return Err(OracleError::BadSpec(format!("denoise lambda {l} outside (0, 1]")));
        }
    }
    Ok(((th, tw), tile_dim, tile_latent))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Reconstructor for ToyChunkAutoencoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn chunk_frames(&self) -> usize {
        self.config.k
    }

    fn reconstruct(&mut self, window: &Video) -> Result<Video, OracleError> {
        self.check_shape(window)?;
        let shape = window.shape();
        let (th, tw) = self.tile;
        let k = self.config.k;
        let chunk_len = k * shape.len();
        let lambda = self.config.denoise.unwrap_or(1.0);
        let mut out = vec![0.0f32; window.data().len()];
        let mut v = vec![0.0; self.tile_dim];
        let mut coeffs = vec![0.0; self.tile_latent];
        let mut idx = Vec::with_capacity(self.tile_dim);
        for (chunk_in, chunk_out) in window
            .data()
            .chunks_exact(chunk_len)
            .zip(out.chunks_exact_mut(chunk_len))
        {
            for ty in 0..shape.height / th {
                for tx in 0..shape.width / tw {
                    idx.clear();
                    idx.extend(self.tile_indices(shape, ty, tx));
                    for (x, &i) in v.iter_mut().zip(&idx) {
                        *x = chunk_in[i] as f64 - CENTRE;
                    }
                    self.project(&mut v, &mut coeffs);
                    for (&p, &i) in v.iter().zip(&idx) {
                        let x = chunk_in[i] as f64;
                        let recon = x + lambda * (CENTRE + p - x);
                        chunk_out[i] = recon.clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
        Ok(Video::from_parts_unchecked(window.frames(), shape, out))
    }
}

/// A video "generated" by `model`: per chunk and tile, a latent
/// `z ~ N(0, I)` is decoded, rescaled into `[0.25, 0.75]`, and perturbed by
/// `N(0, sigma_b^2)` noise.
pub fn synthesize_belonging(
    model: &ToyChunkAutoencoder,
    n_chunks: usize,
    sigma_b: f64,
    seed: u64,
) -> Result<Video, OracleError> {
    if n_chunks < 2 {
        return Err(OracleError::ShapeMismatch(format!("{n_chunks} chunks, need at least 2")));
    }
    if !(sigma_b.is_finite() && sigma_b >= 0.0) {
        return Err(OracleError::BadSpec(format!("sigma_b {sigma_b}")));
    }
    let dims = model.config.dims;
    let chunk_len = model.config.k * dims.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean = vec![0.0; n_chunks * chunk_len];
    let mut latents = vec![0.0; model.n_tiles() * model.tile_latent];
    for chunk in clean.chunks_exact_mut(chunk_len) {
        latents.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        model.decode_chunk(&latents, chunk);
    }
    let data = clean
        .into_iter()
        .map(|x| {
            let noise: f64 = if sigma_b > 0.0 {
                sigma_b * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (x + noise).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Video::from_parts_unchecked(n_chunks * model.config.k, dims, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonBelonging {
    /// i.i.d. `U[0, 1]` elements.
    UniformNoise,
    /// A belonging video of a toy model with the same geometry and a
    /// different seed.
    OtherToy { model_seed: u64 },
}

impl NonBelonging {
    pub fn tag(&self) -> &'static str {
        match self {
            NonBelonging::UniformNoise => "uniform-noise",
            NonBelonging::OtherToy { .. } => "other-toy",
        }
    }
}

/// A video outside `target`'s decoder range, with `target`'s geometry.
pub fn synthesize_nonbelonging(
    target: &ToyChunkAutoencoder,
    kind: NonBelonging,
    n_chunks: usize,
    sigma_b: f64,
    seed: u64,
) -> Result<Video, OracleError> {
    match kind {
        NonBelonging::UniformNoise => {
            if n_chunks == 0 {
                return Err(OracleError::ShapeMismatch("zero chunks".into()));
            }
            let dims = target.config.dims;
            let frames = n_chunks * target.config.k;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..frames * dims.len()).map(|_| rng.random::<f32>()).collect();
            Ok(Video::from_parts_unchecked(frames, dims, data))
        }
        NonBelonging::OtherToy { model_seed } => {
            let other = ToyChunkAutoencoder::build(target.config.with_seed(model_seed))?;
            synthesize_belonging(&other, n_chunks, sigma_b, seed)
        }
    }
}
