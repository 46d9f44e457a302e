use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use vidattr_core::io::{load_video, IoError, VideoFormat};

/// Pixel value of the test pattern: 8x8 squares whose phase shifts each
/// frame, with a different level per channel.
fn pattern(frame: usize, y: usize, x: usize, ch: usize) -> u8 {
    let on = ((y / 8) + (x / 8) + frame).is_multiple_of(2);
    let levels = [[255, 0], [200, 17], [90, 3]];
    levels[ch][if on { 0 } else { 1 }]
}

fn write_frame(path: &Path, frame: usize, filter: png::Filter) {
    let mut pixels = Vec::with_capacity(64 * 64 * 3);
    for y in 0..64 {
        for x in 0..64 {
            for ch in 0..3 {
                pixels.push(pattern(frame, y, x, ch));
            }
        }
    }
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path).unwrap()), 64, 64);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_filter(filter);
    enc.write_header().unwrap().write_image_data(&pixels).unwrap();
}

#[test]
fn checkerboard_sequence_loads_in_order_with_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let filters = [png::Filter::NoFilter, png::Filter::Sub, png::Filter::Up, png::Filter::Paeth];
    // Written out of order to check the lexicographic sort.
    for frame in (0..8).rev() {
        write_frame(&dir.path().join(format!("frame_{frame:03}.png")), frame, filters[frame % 4]);
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    assert_eq!(VideoFormat::detect(dir.path()), VideoFormat::ImageSequence);
    let loaded = load_video(dir.path(), VideoFormat::ImageSequence).unwrap();
    let v = loaded.video;
    assert_eq!((v.frames(), v.height(), v.width(), v.channels()), (8, 64, 64, 3));
    assert_eq!(loaded.clamped, 0);
    for f in 0..8 {
        let frame = v.frame(f);
        for y in 0..64 {
            for x in 0..64 {
                for ch in 0..3 {
                    let want = pattern(f, y, x, ch) as f32 / 255.0;
                    assert_eq!(frame[(y * 64 + x) * 3 + ch], want, "f{f} y{y} x{x} c{ch}");
                }
            }
        }
    }
}

#[test]
fn mixed_frame_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(&dir.path().join("a.png"), 0, png::Filter::NoFilter);
    let mut enc = png::Encoder::new(BufWriter::new(File::create(dir.path().join("b.png")).unwrap()), 32, 64);
    enc.set_color(png::ColorType::Rgb);
    enc.write_header().unwrap().write_image_data(&vec![0; 32 * 64 * 3]).unwrap();
    let err = load_video(dir.path(), VideoFormat::ImageSequence).unwrap_err();
    assert!(matches!(err, IoError::FrameShapeMismatch { .. }), "{err}");
}

#[test]
fn empty_directory_has_no_frames() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_video(dir.path(), VideoFormat::ImageSequence).unwrap_err();
    assert!(matches!(err, IoError::NoFrames(_)));
}
