//! Reconstruction oracles: deterministic same-shape maps standing in for a
//! target model's 3D autoencoder.

mod aedr;
mod external;
mod toy;
pub mod wire;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::video::{FrameShape, Video};

pub use aedr::{aedr_signal, AedrSignal};
pub use external::{connect_external, Endpoint, ExternalOracle};
pub use toy::{
    synthesize_belonging, synthesize_nonbelonging, NonBelonging, ToyChunkAutoencoder, ToyConfig,
};

/// Default timeout for external oracle handshakes and requests.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("latent dimension rejected: {0}")]
    BadLatentDim(String),
    #[error("basis rejected: {0}")]
    BadBasis(String),
    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("handshake failed: {0}")]
    HandshakeFailure(String),
    #[error("server speaks protocol version {server}, client supports up to {client_max}")]
    VersionMismatch { server: u32, client_max: u32 },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("server error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("invalid oracle spec `{0}`")]
    BadSpec(String),
}

/// A reconstruction oracle. `reconstruct` must be deterministic and return a
/// tensor of exactly the input shape.
pub trait Reconstructor: Send {
    fn id(&self) -> &str;

    /// Frames per chunk the oracle expects (the temporal compression ratio).
    fn chunk_frames(&self) -> usize;

    fn reconstruct(&mut self, window: &Video) -> Result<Video, OracleError>;
}

impl<R: Reconstructor + ?Sized> Reconstructor for Box<R> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn chunk_frames(&self) -> usize {
        (**self).chunk_frames()
    }

    fn reconstruct(&mut self, window: &Video) -> Result<Video, OracleError> {
        (**self).reconstruct(window)
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone)]
pub struct IdentityOracle {
    k: usize,
    id: String,
}

impl IdentityOracle {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            id: format!("identity:{k}"),
        }
    }
}

impl Reconstructor for IdentityOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn chunk_frames(&self) -> usize {
        self.k
    }

    fn reconstruct(&mut self, window: &Video) -> Result<Video, OracleError> {
        check_chunked(window, self.k)?;
        Ok(window.clone())
    }
}

pub(crate) fn check_chunked(window: &Video, k: usize) -> Result<(), OracleError> {
    if !window.frames().is_multiple_of(k) {
        return Err(OracleError::ShapeMismatch(format!(
            "{} frames is not a multiple of chunk size {k}",
            window.frames()
        )));
    }
    Ok(())
}

/// Where to find the target oracle, as written on the command line and in
/// manifests.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    /// `toy:<seed>,<K>,<H>x<W>x<C>,<d>[,tile=<h>x<w>][,denoise=<lambda>]`
    Toy(ToyConfig),
    /// `exec:<program> [args...]`, speaking the wire protocol on stdio.
    Exec(String),
    /// `tcp:<host>:<port>`
    Tcp { host: String, port: u16 },
    /// `identity:<K>`
    Identity(usize),
}

impl OracleSpec {
    /// Opens a fresh oracle instance; external specs get their own connection.
    pub fn open(&self, timeout: Duration) -> Result<Box<dyn Reconstructor>, OracleError> {
        Ok(match self {
            OracleSpec::Toy(cfg) => Box::new(ToyChunkAutoencoder::build(cfg.clone())?),
            OracleSpec::Identity(k) => Box::new(IdentityOracle::new(*k)),
            OracleSpec::Exec(cmd) => {
                let mut parts = cmd.split_whitespace().map(str::to_string);
                let program = parts
                    .next()
                    .ok_or_else(|| OracleError::BadSpec(self.to_string()))?;
                Box::new(connect_external(
                    &Endpoint::Exec {
                        program,
                        args: parts.collect(),
                    },
                    timeout,
                )?)
            }
            OracleSpec::Tcp { host, port } => Box::new(connect_external(
                &Endpoint::Tcp {
                    host: host.clone(),
                    port: *port,
                },
                timeout,
            )?),
        })
    }

    pub fn toy(&self) -> Option<&ToyConfig> {
        match self {
            OracleSpec::Toy(cfg) => Some(cfg),
            _ => None,
        }
    }
}

impl FromStr for OracleSpec {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OracleError::BadSpec(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "toy" => rest.parse().map(OracleSpec::Toy).map_err(|_| bad()),
            "exec" if !rest.trim().is_empty() => Ok(OracleSpec::Exec(rest.trim().to_string())),
            "tcp" => {
                let (host, port) = rest.rsplit_once(':').ok_or_else(bad)?;
                let port = port.parse().map_err(|_| bad())?;
                if host.is_empty() {
                    return Err(bad());
                }
                Ok(OracleSpec::Tcp {
                    host: host.to_string(),
                    port,
                })
            }
            "identity" => match rest.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(OracleSpec::Identity(k)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Toy(cfg) => write!(f, "toy:{cfg}"),
            OracleSpec::Exec(cmd) => write!(f, "exec:{cmd}"),
            OracleSpec::Tcp { host, port } => write!(f, "tcp:{host}:{port}"),
            OracleSpec::Identity(k) => write!(f, "identity:{k}"),
        }
    }
}

pub(crate) fn parse_shape(s: &str) -> Option<FrameShape> {
    let mut it = s.split('x').map(|p| p.parse::<usize>().ok());
    let shape = FrameShape::new(it.next()??, it.next()??, it.next()??);
    (it.next().is_none() && !shape.is_empty()).then_some(shape)
}
