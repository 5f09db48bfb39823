//! Overlay rasterization and binary PPM images.
//!
//! Primitives are rasterized by a centre-distance test: a pixel `(x, y)`
//! (centre at integer coordinates) is part of the axis line iff its distance
//! to the segment is at most `width / 2`, and part of a dot iff its distance to
//! the dot centre is at most `radius`. Dots are drawn after the line.

use otoar_core::{Landmark, LandmarkSet};

use crate::frame::{to_byte, Frame};
use crate::homography::{apply_homography, Homography};
use crate::registration::{clip_segment, CameraMatrix, Segment};
use crate::Point2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlaySpec {
    pub axis_color: [u8; 3],
    pub axis_width: f64,
    pub dot_color: [u8; 3],
    pub dot_radius: f64,
}

impl Default for OverlaySpec {
    fn default() -> Self {
        Self {
            axis_color: [255, 0, 0],
            axis_width: 2.0,
            dot_color: [255, 255, 0],
            dot_radius: 3.0,
        }
    }
}

impl OverlaySpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.axis_width >= 1.0) {
            return Err(format!("axis width must be at least 1, got {}", self.axis_width));
        }
        if !(self.dot_radius >= 1.0) {
            return Err(format!("dot radius must be at least 1, got {}", self.dot_radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_gray(frame: &Frame) -> Self {
        Self {
            width: frame.width,
            height: frame.height,
            data: frame.data.iter().flat_map(|&v| [to_byte(v); 3]).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Sets every in-frame pixel within the bounding box `[lo, hi]` that
    /// satisfies `inside`.
    fn fill(&mut self, lo: Point2, hi: Point2, color: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        if self.width == 0 || self.height == 0 || !(lo[0] <= hi[0] && lo[1] <= hi[1]) {
            return;
        }
        let range = |a: f64, b: f64, n: usize| {
            let start = a.ceil().max(0.0);
            let end = b.floor().min((n - 1) as f64);
            (start <= end).then(|| start as usize..=end as usize)
        };
        let (Some(xs), Some(ys)) = (range(lo[0], hi[0], self.width), range(lo[1], hi[1], self.height)) else {
            return;
        };
        for y in ys {
            for x in xs.clone() {
                if inside(x as f64, y as f64) {
                    self.set(x, y, color);
                }
            }
        }
    }
}

fn segment_distance(p: Point2, [a, b]: Segment) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - (a[0] + t * dx)).hypot(p[1] - (a[1] + t * dy))
}

pub fn draw_segment(img: &mut RgbImage, seg: Segment, width: f64, color: [u8; 3]) {
    let r = width / 2.0;
    let lo = [seg[0][0].min(seg[1][0]) - r, seg[0][1].min(seg[1][1]) - r];
    let hi = [seg[0][0].max(seg[1][0]) + r, seg[0][1].max(seg[1][1]) + r];
    img.fill(lo, hi, color, |x, y| segment_distance([x, y], seg) <= r);
}

pub fn draw_dot(img: &mut RgbImage, c: Point2, radius: f64, color: [u8; 3]) {
    let lo = [c[0] - radius, c[1] - radius];
    let hi = [c[0] + radius, c[1] + radius];
    img.fill(lo, hi, color, |x, y| (x - c[0]).hypot(y - c[1]) <= radius);
}

/// Grayscale frame expanded to RGB with the axis line and then the dots on top.
pub fn render_overlay(frame: &Frame, segment: Option<Segment>, dots: &[Point2], spec: &OverlaySpec) -> RgbImage {
    let mut img = RgbImage::from_gray(frame);
    if let Some(seg) = segment {
        draw_segment(&mut img, seg, spec.axis_width, spec.axis_color);
    }
    for &d in dots {
        draw_dot(&mut img, d, spec.dot_radius, spec.dot_color);
    }
    img
}

/// What gets drawn on a tracked frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitives {
    /// Cochlear axis (apex to base), clipped to the frame.
    pub axis: Option<Segment>,
    /// The registration landmarks that map to finite pixels, in canonical order.
    pub dots: Vec<(Landmark, Point2)>,
}

/// Projects the landmarks (CT millimetres) through the camera into frame 0
/// and carries them to the current frame with the cumulative homography `h`.
pub fn overlay_primitives(
    camera: &CameraMatrix,
    h: &Homography,
    landmarks_mm: &LandmarkSet,
    width: usize,
    height: usize,
) -> Primitives {
    let place = |l: Landmark| {
        let p = camera.project(landmarks_mm.get(l)).ok()?;
        apply_homography(h, p).ok()
    };
    let axis = match (place(Landmark::CochleaApex), place(Landmark::CochleaBase)) {
        (Some(a), Some(b)) => clip_segment([a, b], width, height),
        _ => None,
    };
    let dots = Landmark::REGISTRATION
        .iter()
        .filter_map(|&l| place(l).map(|p| (l, p)))
        .collect();
    Primitives { axis, dots }
}

/// Overlay for a tracked frame: primitives from [`overlay_primitives`]
/// rendered on the grayscale frame.
pub fn render_tracked(
    frame: &Frame,
    camera: &CameraMatrix,
    h: &Homography,
    landmarks_mm: &LandmarkSet,
    spec: &OverlaySpec,
) -> RgbImage {
    let prim = overlay_primitives(camera, h, landmarks_mm, frame.width, frame.height);
    let dots: Vec<Point2> = prim.dots.iter().map(|d| d.1).collect();
    render_overlay(frame, prim.axis, &dots, spec)
}

pub fn overlay_file_name(i: usize) -> String {
    format!("overlay_{i:06}.ppm")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload at byte {offset}, expected {expected} bytes")]
    Truncated { offset: usize, expected: usize },
}

/// Binary PPM: `P6\n<w> <h>\n255\n` followed by the RGB triples.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let (width, height, off) = crate::frame::pnm_header(bytes, b"P6").map_err(ImageError::MalformedHeader)?;
    let need = width * height * 3;
    if bytes.len() - off < need {
        return Err(ImageError::Truncated {
            offset: bytes.len(),
            expected: off + need,
        });
    }
    Ok(RgbImage {
        width,
        height,
        data: bytes[off..off + need].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_black_ppm() {
        let bytes = encode_ppm(&RgbImage::new(1, 1));
        assert_eq!(bytes, b"P6\n1 1\n255\n\0\0\0");
        assert_eq!(bytes.len(), 14);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = encode_ppm(&RgbImage::new(2, 2));
        bytes.truncate(bytes.len() - 1);
        assert_eq!(
            decode_ppm(&bytes),
            Err(ImageError::Truncated {
                offset: 22,
                expected: 23
            })
        );
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(ImageError::MalformedHeader(_))));
    }

    #[test]
    fn no_primitives_is_gray_copy() {
        let f = Frame::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let img = render_overlay(&f, None, &[], &OverlaySpec::default());
        assert_eq!(img.data, vec![0, 0, 0, 128, 128, 128, 255, 255, 255]);
    }

    #[test]
    fn off_frame_primitives_are_clipped() {
        let f = Frame::filled(8, 8, 0.0);
        let img = render_overlay(&f, Some([[-50.0, -3.0], [-10.0, -3.0]]), &[[100.0, 100.0]], &OverlaySpec::default());
        assert!(img.data.iter().all(|&v| v == 0));
    }
}
