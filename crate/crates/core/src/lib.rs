//! Training-free attribution of generated videos to a target model.
//!
//! A video produced by a model whose 3D autoencoder compresses `K` frames
//! into one latent reconstructs almost perfectly through chunk-aligned
//! windows and poorly through misaligned ones. The ratio of the two
//! per-frame losses, thresholded by a kernel-density cutoff calibrated on a
//! few known outputs, decides whether the video belongs to the model.

pub mod attribution;
pub mod calibration;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod transform;
pub mod video;

pub use attribution::{
    attribution_signal, classify, select_window_pair, AttributionError, AttributionSignal, Decision, PairStrategy,
    WindowPair, WindowPairChoice,
};
pub use calibration::{threshold, zero_shot, BandwidthRule, CalibrationError, Kernel, ThresholdModel};
pub use metrics::{LossSeries, MetricKind};
pub use oracle::{OracleError, OracleSpec, Reconstructor, ToyChunkAutoencoder, ToyConfig};
pub use transform::Transform;
pub use video::{ChunkLayout, FrameRange, FrameShape, Video, VideoError, WindowKind, WindowSpec};
