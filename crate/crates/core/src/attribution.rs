//! The window-pair loss-ratio signal, window-pair selection and the
//! threshold decision.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::metrics::{loss_series, LossSeries, MetricError, MetricKind, MSE_FLOOR};
use crate::oracle::{OracleError, Reconstructor};
use crate::video::{
    chunk_layout, extract_window, overlap_frames, ChunkLayout, FrameRange, Video, VideoError, WindowKind,
};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid window pair: {0}")]
    InvalidPair(String),
    #[error("window search needs at least one calibration video")]
    EmptyCalibrationSet,
}

/// Offsets of the normal and the corrupted window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowPair {
    normal: usize,
    corrupted: usize,
}

impl WindowPair {
    pub fn new(normal: usize, corrupted: usize, k: usize) -> Result<Self, AttributionError> {
        if k < 2 || normal > k || corrupted > k {
            return Err(AttributionError::InvalidPair(format!(
                "offsets ({normal}, {corrupted}) outside 0..={k}"
            )));
        }
        if WindowKind::of(normal, k) != WindowKind::Normal {
            return Err(AttributionError::InvalidPair(format!("offset {normal} is not chunk-aligned for K={k}")));
        }
        if WindowKind::of(corrupted, k) != WindowKind::Corrupted {
            return Err(AttributionError::InvalidPair(format!("offset {corrupted} is chunk-aligned for K={k}")));
        }
        Ok(Self { normal, corrupted })
    }

    /// `(0, K-1)`.
    pub fn fixed(k: usize) -> Result<Self, AttributionError> {
        Self::new(0, k.saturating_sub(1), k)
    }

    pub fn normal(&self) -> usize {
        self.normal
    }

    pub fn corrupted(&self) -> usize {
        self.corrupted
    }
}

impl fmt::Display for WindowPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.normal, self.corrupted)
    }
}

/// How the window pair is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStrategy {
    Fixed,
    Searched,
    Explicit { normal: usize, corrupted: usize },
}

impl FromStr for PairStrategy {
    type Err = AttributionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(PairStrategy::Fixed),
            "searched" => Ok(PairStrategy::Searched),
            _ => {
                let bad = || AttributionError::InvalidPair(format!("`{s}` (expected fixed, searched or <jnor>,<jcor>)"));
                let (a, b) = s.split_once(',').ok_or_else(bad)?;
                Ok(PairStrategy::Explicit {
                    normal: a.trim().parse().map_err(|_| bad())?,
                    corrupted: b.trim().parse().map_err(|_| bad())?,
                })
            }
        }
    }
}

impl fmt::Display for PairStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairStrategy::Fixed => f.write_str("fixed"),
            PairStrategy::Searched => f.write_str("searched"),
            PairStrategy::Explicit { normal, corrupted } => write!(f, "{normal},{corrupted}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionSignal {
    /// Mean over the overlap of normal loss / corrupted loss.
    pub t: f64,
    pub pair: WindowPair,
    pub metric: MetricKind,
    pub oracle_id: String,
    pub overlap: FrameRange,
    /// Overlap frames whose corrupted loss hit the floor.
    pub capped_frames: usize,
    /// Trailing frames ignored by the chunk layout.
    pub dropped_frames: usize,
}

impl AttributionSignal {
    pub fn decide(&self, tau: f64) -> Decision {
        classify(self.t, tau)
    }
}

/// Mean of per-frame `normal / corrupted` over `overlap`, both losses floored
/// at `1e-12`. Returns `(t, capped_frames)`.
pub fn signal_from_series(
    normal: &LossSeries,
    corrupted: &LossSeries,
    overlap: FrameRange,
) -> Result<(f64, usize), AttributionError> {
    let mut sum = 0.0;
    let mut capped = 0;
    for frame in overlap.iter() {
        let (Some(num), Some(den)) = (normal.at(frame), corrupted.at(frame)) else {
            return Err(AttributionError::InvalidPair(format!(
                "frame {frame} of overlap {overlap} missing from a loss series"
            )));
        };
        if den < MSE_FLOOR {
            capped += 1;
        }
        sum += num.max(MSE_FLOOR) / den.max(MSE_FLOOR);
    }
    Ok((sum / overlap.count() as f64, capped))
}

fn reconstruct_window(
    video: &Video,
    layout: &ChunkLayout,
    offset: usize,
    oracle: &mut dyn Reconstructor,
    metric: MetricKind,
) -> Result<LossSeries, AttributionError> {
    let (spec, window) = extract_window(video, layout, offset)?;
    let recon = oracle.reconstruct(&window)?;
    if recon.frames() != window.frames() || recon.shape() != window.shape() {
        return Err(OracleError::ShapeMismatch(format!(
            "oracle returned {}x{} for a {}x{} window",
            recon.frames(),
            recon.shape(),
            window.frames(),
            window.shape()
        ))
        .into());
    }
    Ok(loss_series(&window, &recon, metric, spec.frames())?)
}

pub fn attribution_signal(
    video: &Video,
    oracle: &mut dyn Reconstructor,
    pair: WindowPair,
    metric: MetricKind,
) -> Result<AttributionSignal, AttributionError> {
    let layout = chunk_layout(video, oracle.chunk_frames())?;
    if pair.normal.max(pair.corrupted) > layout.k() || WindowKind::of(pair.corrupted, layout.k()) == WindowKind::Normal {
        return Err(AttributionError::InvalidPair(format!(
            "pair ({pair}) does not fit K={}",
            layout.k()
        )));
    }
    let normal = reconstruct_window(video, &layout, pair.normal, oracle, metric)?;
    let corrupted = reconstruct_window(video, &layout, pair.corrupted, oracle, metric)?;
    let overlap = overlap_frames(pair.normal, pair.corrupted, &layout)?;
    let (t, capped_frames) = signal_from_series(&normal, &corrupted, overlap)?;
    Ok(AttributionSignal {
        t,
        pair,
        metric,
        oracle_id: oracle.id().to_string(),
        overlap,
        capped_frames,
        dropped_frames: layout.dropped_frames(),
    })
}

/// Mean whole-window reconstruction loss of window `offset`.
pub fn window_loss(
    video: &Video,
    oracle: &mut dyn Reconstructor,
    offset: usize,
    metric: MetricKind,
) -> Result<f64, AttributionError> {
    let layout = chunk_layout(video, oracle.chunk_frames())?;
    Ok(reconstruct_window(video, &layout, offset, oracle, metric)?.mean())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPairChoice {
    pub pair: WindowPair,
    pub strategy: PairStrategy,
    /// `(offset, mean window loss)` for every offset `0..=K`; empty unless
    /// searched.
    pub table: Vec<(usize, f64)>,
}

/// Per-offset mean window loss over `calib`, for offsets `0..=K`.
pub fn corruption_table(
    calib: &[Video],
    oracle: &mut dyn Reconstructor,
    metric: MetricKind,
) -> Result<Vec<(usize, f64)>, AttributionError> {
    if calib.is_empty() {
        return Err(AttributionError::EmptyCalibrationSet);
    }
    let k = oracle.chunk_frames();
    let mut table = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let mut sum = 0.0;
        for v in calib {
            sum += window_loss(v, oracle, j, metric)?;
        }
        table.push((j, sum / calib.len() as f64));
    }
    Ok(table)
}

pub fn select_window_pair(
    calib: &[Video],
    oracle: &mut dyn Reconstructor,
    strategy: PairStrategy,
    metric: MetricKind,
) -> Result<WindowPairChoice, AttributionError> {
    let k = oracle.chunk_frames();
    match strategy {
        PairStrategy::Fixed => Ok(WindowPairChoice {
            pair: WindowPair::fixed(k)?,
            strategy,
            table: Vec::new(),
        }),
        PairStrategy::Explicit { normal, corrupted } => Ok(WindowPairChoice {
            pair: WindowPair::new(normal, corrupted, k)?,
            strategy,
            table: Vec::new(),
        }),
        PairStrategy::Searched => {
            let table = corruption_table(calib, oracle, metric)?;
            let best = argmax_corrupted(&table, k)?;
            Ok(WindowPairChoice {
                pair: WindowPair::new(0, best, k)?,
                strategy,
                table,
            })
        }
    }
}

/// Offset with the largest loss among corrupted offsets; ties go to the
/// smallest offset.
pub fn argmax_corrupted(table: &[(usize, f64)], k: usize) -> Result<usize, AttributionError> {
    let mut best: Option<(usize, f64)> = None;
    for &(j, loss) in table {
        if WindowKind::of(j, k) == WindowKind::Corrupted && best.is_none_or(|(_, b)| loss > b) {
            best = Some((j, loss));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| AttributionError::InvalidPair("no corrupted offset in table".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Decision {
    Belonging,
    NonBelonging,
}

impl Decision {
    /// Token used in manifests and CSV files.
    pub fn token(&self) -> &'static str {
        match self {
            Decision::Belonging => "belonging",
            Decision::NonBelonging => "non_belonging",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Belonging => "belonging",
            Decision::NonBelonging => "non-belonging",
        })
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "belonging" => Ok(Decision::Belonging),
            "non_belonging" | "non-belonging" => Ok(Decision::NonBelonging),
            _ => Err(format!("unknown label `{s}`")),
        }
    }
}

/// Belonging iff `t < tau`.
pub fn classify(t: f64, tau: f64) -> Decision {
    if t < tau {
        Decision::Belonging
    } else {
        Decision::NonBelonging
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{
        synthesize_belonging, synthesize_nonbelonging, IdentityOracle, NonBelonging, ToyChunkAutoencoder, ToyConfig,
    };
    use crate::video::FrameShape;
    use proptest::prelude::*;

    #[test]
    fn pair_validation() {
        assert_eq!(WindowPair::fixed(4).unwrap(), WindowPair::new(0, 3, 4).unwrap());
        assert!(WindowPair::new(0, 4, 4).is_err());
        assert!(WindowPair::new(1, 3, 4).is_err());
        assert!(WindowPair::new(0, 5, 4).is_err());
        assert!(WindowPair::new(4, 3, 4).is_ok());
        assert_eq!("2,1".parse::<PairStrategy>().unwrap(), PairStrategy::Explicit { normal: 2, corrupted: 1 });
        assert!("x".parse::<PairStrategy>().is_err());
    }

    #[test]
    fn classify_is_strict() {
        assert_eq!(classify(0.5, 1.0), Decision::Belonging);
        assert_eq!(classify(1.0, 1.0), Decision::NonBelonging);
        assert_eq!(classify(1.3, 0.9), Decision::NonBelonging);
    }

    #[test]
    fn identity_oracle_caps_everything() {
        let v = Video::filled(16, FrameShape::new(2, 2, 1), 0.4).unwrap();
        let mut o = IdentityOracle::new(4);
        let s = attribution_signal(&v, &mut o, WindowPair::fixed(4).unwrap(), MetricKind::Mse).unwrap();
        assert_eq!(s.t, 1.0);
        assert_eq!(s.capped_frames, s.overlap.count());
        assert_eq!(s.overlap, FrameRange::new(4, 12).unwrap());
    }

    #[test]
    fn trailing_frames_do_not_matter() {
        let mut toy = ToyChunkAutoencoder::build(ToyConfig::desk(7)).unwrap();
        let v = synthesize_belonging(&toy, 4, 0.01, 3).unwrap();
        let mut data = v.data().to_vec();
        data.extend(std::iter::repeat_n(0.9, 3 * 256));
        let longer = Video::new(19, v.shape(), data).unwrap();
        let pair = WindowPair::fixed(4).unwrap();
        let a = attribution_signal(&v, &mut toy, pair, MetricKind::Mse).unwrap();
        let b = attribution_signal(&longer, &mut toy, pair, MetricKind::Mse).unwrap();
        assert_eq!(a.t, b.t);
        assert_eq!(b.dropped_frames, 3);
    }

    #[test]
    fn toy_separates() {
        let mut toy = ToyChunkAutoencoder::build(ToyConfig::desk(7)).unwrap();
        let pair = WindowPair::fixed(4).unwrap();
        let own = synthesize_belonging(&toy, 8, 0.01, 1).unwrap();
        let noise = synthesize_nonbelonging(&toy, NonBelonging::UniformNoise, 8, 0.01, 2).unwrap();
        let t_own = attribution_signal(&own, &mut toy, pair, MetricKind::Mse).unwrap().t;
        let t_noise = attribution_signal(&noise, &mut toy, pair, MetricKind::Mse).unwrap().t;
        assert!(t_own < 0.2, "{t_own}");
        assert!((0.9..1.1).contains(&t_noise), "{t_noise}");
    }

    #[test]
    fn searched_picks_a_corrupted_offset() {
        let mut toy = ToyChunkAutoencoder::build(ToyConfig::desk(7)).unwrap();
        let calib: Vec<Video> = (0..3).map(|s| synthesize_belonging(&toy, 8, 0.01, s).unwrap()).collect();
        let choice = select_window_pair(&calib, &mut toy, PairStrategy::Searched, MetricKind::Mse).unwrap();
        assert_eq!(choice.table.len(), 5);
        assert_eq!(choice.pair.normal(), 0);
        assert_ne!(choice.pair.corrupted() % 4, 0);
        assert!(matches!(
            select_window_pair(&[], &mut toy, PairStrategy::Searched, MetricKind::Mse),
            Err(AttributionError::EmptyCalibrationSet)
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        let table = [(0, 9.0), (1, 2.0), (2, 3.0), (3, 3.0), (4, 9.0)];
        assert_eq!(argmax_corrupted(&table, 4).unwrap(), 2);
    }

    proptest! {
        #[test]
        fn t_is_scale_invariant(
            values in prop::collection::vec((1e-6f64..1.0, 1e-6f64..1.0), 12),
            scale in 1e-3f64..1e3,
        ) {
            let frames = FrameRange::new(1, 12).unwrap();
            let series = |f: &dyn Fn(&(f64, f64)) -> f64, c: f64| LossSeries {
                metric: MetricKind::Mse,
                frames,
                values: values.iter().map(|v| c * f(v)).collect(),
            };
            let overlap = FrameRange::new(4, 12).unwrap();
            let (t1, _) = signal_from_series(&series(&|v| v.0, 1.0), &series(&|v| v.1, 1.0), overlap).unwrap();
            let (t2, _) = signal_from_series(&series(&|v| v.0, scale), &series(&|v| v.1, scale), overlap).unwrap();
            prop_assert!(t1 > 0.0 && t1.is_finite());
            prop_assert!((t1 - t2).abs() <= 1e-12 * t1.max(1.0));
        }

        #[test]
        fn raising_tau_never_unbelongs(t in 0.0f64..3.0, tau in 0.01f64..3.0, bump in 0.0f64..2.0) {
            if classify(t, tau) == Decision::Belonging {
                prop_assert_eq!(classify(t, tau + bump), Decision::Belonging);
            }
        }
    }
}
