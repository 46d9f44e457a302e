//! Double-reconstruction ratio baseline from the image domain.

use super::{OracleError, Reconstructor};
use crate::metrics::{loss_series, MetricKind, MSE_FLOOR};
use crate::video::{chunk_layout, FrameRange, Video};
use crate::AttributionError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AedrSignal {
    /// `max(L(x1, v), floor) / max(L(x2, x1), floor)`.
    pub ratio: f64,
    pub first_loss: f64,
    pub second_loss: f64,
    /// The second-pass loss fell below the floor.
    pub degenerate: bool,
}

/// `x1 = R(v)`, `x2 = R(x1)` over the usable frames; mean per-frame losses.
pub fn aedr_signal(
    oracle: &mut dyn Reconstructor,
    video: &Video,
    metric: MetricKind,
) -> Result<AedrSignal, AttributionError> {
    let layout = chunk_layout(video, oracle.chunk_frames())?;
    let range = FrameRange::new(1, layout.usable_frames())?;
    let v = video.slice(range)?;
    let x1 = oracle.reconstruct(&v)?;
    let x2 = oracle.reconstruct(&x1)?;
    check_shape(&v, &x1)?;
    check_shape(&x1, &x2)?;
    let first_loss = loss_series(&v, &x1, metric, range)?.mean();
    let second_loss = loss_series(&x1, &x2, metric, range)?.mean();
    Ok(AedrSignal {
        ratio: first_loss.max(MSE_FLOOR) / second_loss.max(MSE_FLOOR),
        first_loss,
        second_loss,
        degenerate: second_loss < MSE_FLOOR,
    })
}

fn check_shape(a: &Video, b: &Video) -> Result<(), OracleError> {
    if a.frames() != b.frames() || a.shape() != b.shape() {
        return Err(OracleError::ShapeMismatch(format!(
            "oracle returned {}x{} for {}x{}",
            b.frames(),
            b.shape(),
            a.frames(),
            a.shape()
        )));
    }
    Ok(())
}
