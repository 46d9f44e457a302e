//! Video tensors and the chunk / window geometry used by the sliding-window
//! reconstruction.
//!
//! Storage is 0-based and frame-major (`T`, then `H`, `W`, `C`). All geometry
//! below ([`ChunkLayout`], [`WindowSpec`], [`FrameRange`]) speaks 1-based frame
//! indices; the conversion happens only in this module.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VideoError {
    #[error("dimensions must be positive, got {frames}x{height}x{width}x{channels}")]
    EmptyDimensions {
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("data length {actual} does not match dimensions (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("element {index} is not finite or outside [0, 1]: {value}")]
    OutOfRange { index: usize, value: f32 },
    #[error("video has {frames} frames but chunk size {k} needs at least {needed}")]
    TooFewFrames { frames: usize, k: usize, needed: usize },
    #[error("chunk size must be at least 2, got {0}")]
    BadChunkSize(usize),
    #[error("window offset {offset} outside [0, {k}]")]
    OffsetOutOfRange { offset: usize, k: usize },
    #[error("offsets {0} and {0} are identical, overlap is undefined")]
    SameOffset(usize),
    #[error("windows at offsets {j1} and {j2} share no frames when windows span {len}")]
    NoOverlap { j1: usize, j2: usize, len: usize },
    #[error("frame range {start}..={end} is empty or outside the video")]
    BadFrameRange { start: usize, end: usize },
    #[error("transform needs larger frames: {0}")]
    DegenerateDimensions(String),
}

/// Shape of a single frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FrameShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for FrameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A `T x H x W x C` sequence of frames with every element in `[0, 1]`.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: usize,
    shape: FrameShape,
    data: Vec<f32>,
}

impl Video {
    /// Builds a video, rejecting non-finite or out-of-range elements.
    pub fn new(frames: usize, shape: FrameShape, data: Vec<f32>) -> Result<Self, VideoError> {
        check_dims(frames, shape, data.len())?;
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(VideoError::OutOfRange { index, value });
        }
        Ok(Self {
            frames,
            shape,
            data,
        })
    }

    /// Builds a video, clamping elements into `[0, 1]`.
    ///
    /// Returns the video and the number of elements that had to be clamped.
    /// NaN is an error; infinities clamp.
    pub fn new_clamped(
        frames: usize,
        shape: FrameShape,
        mut data: Vec<f32>,
    ) -> Result<(Self, usize), VideoError> {
        check_dims(frames, shape, data.len())?;
        let mut clamped = 0;
        for (index, v) in data.iter_mut().enumerate() {
            if v.is_nan() {
                return Err(VideoError::OutOfRange { index, value: *v });
            }
            if !(0.0..=1.0).contains(v) {
                *v = v.clamp(0.0, 1.0);
                clamped += 1;
            }
        }
        Ok((
            Self {
                frames,
                shape,
                data,
            },
            clamped,
        ))
    }

    /// A video filled with one value.
    pub fn filled(frames: usize, shape: FrameShape, value: f32) -> Result<Self, VideoError> {
        Self::new(frames, shape, vec![value; frames * shape.len()])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Frame by 0-based storage index.
    pub fn frame(&self, index: usize) -> &[f32] {
        let len = self.shape.len();
        &self.data[index * len..(index + 1) * len]
    }

    /// Frame by 1-based frame number.
    pub fn frame_1based(&self, number: usize) -> &[f32] {
        assert!(number >= 1 && number <= self.frames, "frame {number} out of range");
        self.frame(number - 1)
    }

    /// Copies frames `range.start ..= range.end` (1-based) into a new video.
    pub fn slice(&self, range: FrameRange) -> Result<Video, VideoError> {
        if range.start < 1 || range.end > self.frames || range.start > range.end {
            return Err(VideoError::BadFrameRange {
                start: range.start,
                end: range.end,
            });
        }
        let len = self.shape.len();
        let data = self.data[(range.start - 1) * len..range.end * len].to_vec();
        Ok(Video {
            frames: range.count(),
            shape: self.shape,
            data,
        })
    }

    pub fn frames_iter(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.shape.len())
    }

    pub(crate) fn from_parts_unchecked(frames: usize, shape: FrameShape, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), frames * shape.len());
        Self {
            frames,
            shape,
            data,
        }
    }
}

fn check_dims(frames: usize, shape: FrameShape, len: usize) -> Result<(), VideoError> {
    if frames == 0 || shape.height == 0 || shape.width == 0 || shape.channels == 0 {
        return Err(VideoError::EmptyDimensions {
            frames,
            height: shape.height,
            width: shape.width,
            channels: shape.channels,
        });
    }
    let expected = frames * shape.len();
    if len != expected {
        return Err(VideoError::LengthMismatch {
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Inclusive, 1-based range of frame numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn new(start: usize, end: usize) -> Result<Self, VideoError> {
        if start == 0 || start > end {
            return Err(VideoError::BadFrameRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn count(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn intersect(&self, other: &FrameRange) -> Option<FrameRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(FrameRange { start, end })
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

/// The `K`-frame chunk grid over the first `K * N` frames of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    k: usize,
    n: usize,
    /// Trailing frames beyond `K * N` that the layout ignores.
    dropped: usize,
}

impl ChunkLayout {
    /// Pure geometry: `k >= 2` frames per chunk, `n >= 2` chunks.
    pub fn new(k: usize, n: usize) -> Result<Self, VideoError> {
        if k < 2 {
            return Err(VideoError::BadChunkSize(k));
        }
        if n < 2 {
            return Err(VideoError::TooFewFrames {
                frames: k * n,
                k,
                needed: 2 * k,
            });
        }
        Ok(Self { k, n, dropped: 0 })
    }

    /// Chunk size, the temporal compression ratio.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Chunk count.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn usable_frames(&self) -> usize {
        self.k * self.n
    }

    pub fn dropped_frames(&self) -> usize {
        self.dropped
    }

    /// Frames of chunk `i` (1-based): `K(i-1)+1 ..= Ki`.
    pub fn chunk(&self, i: usize) -> FrameRange {
        assert!(i >= 1 && i <= self.n, "chunk {i} outside 1..={}", self.n);
        FrameRange {
            start: self.k * (i - 1) + 1,
            end: self.k * i,
        }
    }

    /// Frames per window, `K(N-1)`.
    pub fn window_len(&self) -> usize {
        self.k * (self.n - 1)
    }

    pub fn window(&self, offset: usize) -> Result<WindowSpec, VideoError> {
        if offset > self.k {
            return Err(VideoError::OffsetOutOfRange { offset, k: self.k });
        }
        Ok(WindowSpec {
            offset,
            len: self.window_len(),
            kind: WindowKind::of(offset, self.k),
        })
    }
}

/// Splits the first `K * floor(T / K)` frames into chunks of `k`.
pub fn chunk_layout(video: &Video, k: usize) -> Result<ChunkLayout, VideoError> {
    if k < 2 {
        return Err(VideoError::BadChunkSize(k));
    }
    let frames = video.frames();
    if frames < 2 * k {
        return Err(VideoError::TooFewFrames {
            frames,
            k,
            needed: 2 * k,
        });
    }
    let n = frames / k;
    Ok(ChunkLayout {
        k,
        n,
        dropped: frames - k * n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    /// Chunk-aligned: `j mod K == 0`.
    Normal,
    /// Misaligned with the chunk grid.
    Corrupted,
}

impl WindowKind {
    pub fn of(offset: usize, k: usize) -> Self {
        if offset.is_multiple_of(k) {
            WindowKind::Normal
        } else {
            WindowKind::Corrupted
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Normal => "normal",
            WindowKind::Corrupted => "corrupted",
        })
    }
}

/// A window of `K(N-1)` frames starting after `offset` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub offset: usize,
    pub len: usize,
    pub kind: WindowKind,
}

impl WindowSpec {
    /// Covered frames: `offset+1 ..= offset+len`.
    pub fn frames(&self) -> FrameRange {
        FrameRange {
            start: self.offset + 1,
            end: self.offset + self.len,
        }
    }
}

pub fn extract_window(
    video: &Video,
    layout: &ChunkLayout,
    offset: usize,
) -> Result<(WindowSpec, Video), VideoError> {
    let spec = layout.window(offset)?;
    if layout.usable_frames() > video.frames() {
        return Err(VideoError::TooFewFrames {
            frames: video.frames(),
            k: layout.k(),
            needed: layout.usable_frames(),
        });
    }
    let window = video.slice(spec.frames())?;
    Ok((spec, window))
}

/// Frames covered by both windows `j1` and `j2`.
pub fn overlap_frames(j1: usize, j2: usize, layout: &ChunkLayout) -> Result<FrameRange, VideoError> {
    if j1 == j2 {
        return Err(VideoError::SameOffset(j1));
    }
    let a = layout.window(j1)?.frames();
    let b = layout.window(j2)?.frames();
    // Empty only when N = 2 and the offsets are K apart.
    let range = a.intersect(&b).ok_or(VideoError::NoOverlap {
        j1,
        j2,
        len: layout.window_len(),
    })?;
    debug_assert_eq!(range.start, j1.max(j2) + 1);
    debug_assert_eq!(range.end, layout.window_len() + j1.min(j2));
    Ok(range)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, shape: FrameShape) -> Video {
        let n = frames * shape.len();
        let data = (0..n).map(|i| i as f32 / n as f32).collect();
        Video::new(frames, shape, data).unwrap()
    }

    #[test]
    fn layout_drops_trailing_frames() {
        let v = ramp(129, FrameShape::new(1, 1, 1));
        let layout = chunk_layout(&v, 4).unwrap();
        assert_eq!(layout.n(), 32);
        assert_eq!(layout.usable_frames(), 128);
        assert_eq!(layout.dropped_frames(), 1);

        let v = ramp(8, FrameShape::new(1, 1, 1));
        let layout = chunk_layout(&v, 4).unwrap();
        assert_eq!((layout.n(), layout.usable_frames()), (2, 8));
    }

    #[test]
    fn layout_needs_two_chunks() {
        let v = ramp(7, FrameShape::new(1, 1, 1));
        assert!(matches!(
            chunk_layout(&v, 4),
            Err(VideoError::TooFewFrames { frames: 7, .. })
        ));
        assert!(matches!(chunk_layout(&v, 1), Err(VideoError::BadChunkSize(1))));
    }

    #[test]
    fn chunks_tile_the_usable_frames() {
        let layout = ChunkLayout::new(4, 3).unwrap();
        assert_eq!(layout.chunk(1), FrameRange { start: 1, end: 4 });
        assert_eq!(layout.chunk(3), FrameRange { start: 9, end: 12 });
    }

    #[test]
    fn windows_match_offsets() {
        let v = ramp(16, FrameShape::new(1, 1, 1));
        let layout = chunk_layout(&v, 4).unwrap();

        let (spec, w) = extract_window(&v, &layout, 0).unwrap();
        assert_eq!(spec.kind, WindowKind::Normal);
        assert_eq!(spec.frames(), FrameRange { start: 1, end: 12 });
        assert_eq!(w.frames(), 12);
        assert_eq!(w.frame(0), v.frame_1based(1));

        let (spec, w) = extract_window(&v, &layout, 3).unwrap();
        assert_eq!(spec.kind, WindowKind::Corrupted);
        assert_eq!(spec.frames(), FrameRange { start: 4, end: 15 });
        assert_eq!(w.frame(11), v.frame_1based(15));

        let (spec, _) = extract_window(&v, &layout, 4).unwrap();
        assert_eq!(spec.kind, WindowKind::Normal);

        assert!(matches!(
            extract_window(&v, &layout, 5),
            Err(VideoError::OffsetOutOfRange { offset: 5, k: 4 })
        ));
    }

    #[test]
    fn overlap_examples() {
        let layout = ChunkLayout::new(4, 4).unwrap();
        let r = overlap_frames(0, 3, &layout).unwrap();
        assert_eq!((r.start, r.end, r.count()), (4, 12, 9));

        let layout = ChunkLayout::new(8, 4).unwrap();
        let r = overlap_frames(0, 7, &layout).unwrap();
        assert_eq!((r.start, r.end, r.count()), (8, 24, 17));

        assert!(matches!(overlap_frames(0, 0, &layout), Err(VideoError::SameOffset(0))));
        let two = ChunkLayout::new(4, 2).unwrap();
        assert!(matches!(overlap_frames(0, 4, &two), Err(VideoError::NoOverlap { len: 4, .. })));
        assert_eq!(overlap_frames(0, 3, &two).unwrap().count(), 1);
        let r = overlap_frames(4, 3, &ChunkLayout::new(4, 4).unwrap()).unwrap();
        assert_eq!((r.start, r.end), (5, 15));
    }

    #[test]
    fn constructor_validates() {
        let shape = FrameShape::new(1, 1, 1);
        assert!(matches!(
            Video::new(2, shape, vec![0.0]),
            Err(VideoError::LengthMismatch { expected: 2, actual: 1 })
        ));
        assert!(matches!(
            Video::new(1, shape, vec![1.5]),
            Err(VideoError::OutOfRange { .. })
        ));
        assert!(Video::new(0, shape, vec![]).is_err());
        let (v, clamped) = Video::new_clamped(2, shape, vec![-0.5, 2.0]).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(v.data(), &[0.0, 1.0]);
        assert!(Video::new_clamped(1, shape, vec![f32::NAN]).is_err());
    }
}
