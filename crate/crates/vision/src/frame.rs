//! Grayscale frames and the two on-disk sequence formats.
//!
//! Directory format: one binary PGM per frame named `frame_%06d.pgm`
//! (`P5\n<w> <h>\n255\n` then `w·h` bytes, row-major), numbered from 0
//! without gaps. Frame `i` gets timestamp `i` seconds.
//!
//! Stream format, little-endian:
//!
//! | offset | size | field                        |
//! |--------|------|------------------------------|
//! | 0      | 8    | magic `OTOFRM01`             |
//! | 8      | 4    | width (u32)                  |
//! | 12     | 4    | height (u32)                 |
//! | 16     | 4    | frame count (u32)            |
//! | 20     | 4    | frames per second (f32)      |
//! | 24     | …    | `count` frames of `w·h` bytes |
//!
//! Intensities are stored as `round(255·v)` and read back as `byte / 255`.

use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame data length {actual} does not match {width}x{height}")]
    DataLength { width: usize, height: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frames not found: {0}")]
    NotFound(PathBuf),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("frame {index} is {got:?}, expected {want:?}")]
    SizeMismatch { index: usize, got: [usize; 2], want: [usize; 2] },
}

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub index: usize,
    /// Seconds from the start of the sequence.
    pub timestamp: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, FrameError> {
        if data.len() != width * height {
            return Err(FrameError::DataLength {
                width,
                height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
            index: 0,
            timestamp: 0.0,
        })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self::new(width, height, vec![v; width * height]).expect("consistent length")
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at a continuous pixel coordinate, `None` outside
    /// `[0, w−1] × [0, h−1]`.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, FrameError> {
        Self::new(width, height, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    /// The same frame after an 8-bit store and reload.
    pub fn quantized(&self) -> Self {
        let mut f = Self::from_bytes(self.width, self.height, &self.to_bytes()).expect("same size");
        f.index = self.index;
        f.timestamp = self.timestamp;
        f
    }
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:06}.pgm")
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.to_bytes());
    out
}

fn format_err(path: &Path, message: impl Into<String>) -> FrameError {
    FrameError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses the three header fields of a binary PNM with the given magic.
/// Returns `(width, height, payload offset)`.
pub(crate) fn pnm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize), String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!("missing `{}` magic", String::from_utf8_lossy(magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("malformed header at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed header at byte {start}"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format!("malformed header at byte {pos}")),
    }
    if fields[2] != 255 {
        return Err(format!("unsupported maxval {}", fields[2]));
    }
    if fields[0] == 0 || fields[1] == 0 {
        return Err("zero image dimension".into());
    }
    Ok((fields[0], fields[1], pos))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Frame, String> {
    let (w, h, off) = pnm_header(bytes, b"P5")?;
    let need = w * h;
    let payload = &bytes[off..];
    if payload.len() < need {
        return Err(format!("truncated payload at byte {}", bytes.len()));
    }
    Frame::from_bytes(w, h, &payload[..need]).map_err(|e| e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FrameError + '_ {
    move |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_frame_dir(dir: &Path, frames: &[Frame]) -> Result<(), FrameError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        fs::write(&path, encode_pgm(f)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Number of consecutive `frame_%06d.pgm` files starting at 0.
pub fn count_frames(dir: &Path) -> Result<usize, FrameError> {
    if !dir.is_dir() {
        return Err(FrameError::NotFound(dir.to_path_buf()));
    }
    let n = (0..).take_while(|&i| dir.join(frame_file_name(i)).is_file()).count();
    if n == 0 {
        return Err(FrameError::NotFound(dir.to_path_buf()));
    }
    Ok(n)
}

pub fn read_frame(dir: &Path, i: usize) -> Result<Frame, FrameError> {
    let path = dir.join(frame_file_name(i));
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let mut f = decode_pgm(&bytes).map_err(|m| format_err(&path, m))?;
    f.index = i;
    f.timestamp = i as f64;
    Ok(f)
}

/// Reads a whole frame directory; all frames must share one size.
pub fn read_frame_dir(dir: &Path) -> Result<Vec<Frame>, FrameError> {
    let n = count_frames(dir)?;
    let frames = (0..n).map(|i| read_frame(dir, i)).collect::<Result<Vec<_>, _>>()?;
    let want = [frames[0].width, frames[0].height];
    if let Some(f) = frames.iter().find(|f| [f.width, f.height] != want) {
        return Err(FrameError::SizeMismatch {
            index: f.index,
            got: [f.width, f.height],
            want,
        });
    }
    Ok(frames)
}

pub const STREAM_MAGIC: &[u8; 8] = b"OTOFRM01";
const STREAM_HEADER: usize = 24;

pub fn encode_stream(frames: &[Frame], fps: f32) -> Vec<u8> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut out = Vec::with_capacity(STREAM_HEADER + frames.len() * w * h);
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&fps.to_le_bytes());
    for f in frames {
        assert_eq!((f.width, f.height), (w, h), "stream frames share one size");
        out.extend(f.to_bytes());
    }
    out
}

pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Frame>, String> {
    if bytes.len() < STREAM_HEADER || &bytes[..8] != STREAM_MAGIC {
        return Err("missing `OTOFRM01` header".into());
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, n) = (word(8), word(12), word(16));
    let fps = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
    if !(fps > 0.0) {
        return Err(format!("invalid frame rate {fps}"));
    }
    let size = w * h;
    let need = STREAM_HEADER + n * size;
    if bytes.len() < need {
        return Err(format!("truncated payload at byte {}, need {need}", bytes.len()));
    }
    (0..n)
        .map(|i| {
            let start = STREAM_HEADER + i * size;
            let mut f = Frame::from_bytes(w, h, &bytes[start..start + size]).map_err(|e| e.to_string())?;
            f.index = i;
            f.timestamp = i as f64 / f64::from(fps);
            Ok(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::new(w, h, (0..w * h).map(|i| (i % 256) as f32 / 255.0).collect()).unwrap()
    }

    #[test]
    fn pgm_round_trip() {
        let f = ramp(7, 5);
        let back = decode_pgm(&encode_pgm(&f)).unwrap();
        assert_eq!(back.to_bytes(), f.to_bytes());
        assert_eq!(&encode_pgm(&f)[..11], b"P5\n7 5\n255\n");
    }

    #[test]
    fn stream_round_trip_and_truncation() {
        let frames = vec![ramp(4, 3), ramp(4, 3)];
        let bytes = encode_stream(&frames, 1.0);
        assert_eq!(bytes.len(), 24 + 2 * 12);
        let back = decode_stream(&bytes).unwrap();
        assert_eq!(back[1].index, 1);
        assert_eq!(back[1].to_bytes(), frames[1].to_bytes());
        assert!(decode_stream(&bytes[..30]).unwrap_err().contains("truncated"));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![ramp(5, 5), ramp(5, 5), ramp(5, 5)];
        write_frame_dir(dir.path(), &frames).unwrap();
        let back = read_frame_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].timestamp, 2.0);
        assert!(matches!(read_frame_dir(&dir.path().join("nope")), Err(FrameError::NotFound(_))));
    }

    #[test]
    fn bilinear_sampling() {
        let f = Frame::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.sample(0.5, 0.5), Some(0.5));
        assert_eq!(f.sample(1.5, 0.0), None);
    }
}
