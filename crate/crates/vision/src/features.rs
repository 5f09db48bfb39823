//! Harris corners with normalized-patch descriptors, and mutual
//! nearest-neighbour matching with a ratio test.

use crate::frame::Frame;
use crate::Point2;

/// Descriptor patch side length.
pub const PATCH: usize = 11;
pub const DESCRIPTOR_LEN: usize = PATCH * PATCH;
pub const MIN_FRAME: usize = 32;
/// Lowe-style ratio on descriptor distances.
pub const RATIO: f32 = 0.8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("frame {width}x{height} is smaller than {MIN_FRAME}x{MIN_FRAME}")]
    FrameTooSmall { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisParams {
    pub max_features: usize,
    /// Minimum distance between kept corners, pixels.
    pub nms_radius: f64,
    pub k: f64,
    /// Gaussian sigma of the structure-tensor window.
    pub sigma: f64,
    /// Corners weaker than this fraction of the strongest are dropped.
    pub rel_threshold: f64,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self {
            max_features: 500,
            nms_radius: 5.0,
            k: 0.04,
            sigma: 1.5,
            rel_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Keypoint {
    pub fn point(&self) -> Point2 {
        [self.x, self.y]
    }
}

/// Keypoints with one zero-mean, unit-norm descriptor each, strongest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    /// `keypoints.len() × DESCRIPTOR_LEN`, row-major.
    pub descriptors: Vec<f32>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * DESCRIPTOR_LEN..(i + 1) * DESCRIPTOR_LEN]
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamped borders.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + clamp(x as i64 + i as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gaussian-smoothed copy of `frame`.
pub fn smooth(frame: &Frame, sigma: f64) -> Frame {
    let src: Vec<f64> = frame.data.iter().map(|&v| f64::from(v)).collect();
    let data = blur(&src, frame.width, frame.height, &gaussian_kernel(sigma));
    let mut out = Frame::new(frame.width, frame.height, data.into_iter().map(|v| v as f32).collect()).expect("same size");
    out.index = frame.index;
    out.timestamp = frame.timestamp;
    out
}

/// Harris response `det(M) − k·tr(M)²` over the whole frame.
pub fn harris_response(frame: &Frame, k: f64, sigma: f64) -> Vec<f64> {
    let (w, h) = (frame.width, frame.height);
    let px = |x: usize, y: usize| f64::from(frame.at(x, y));
    let (mut ixx, mut iyy, mut ixy) = (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            // Sobel
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let kernel = gaussian_kernel(sigma);
    let (sxx, syy, sxy) = (blur(&ixx, w, h, &kernel), blur(&iyy, w, h, &kernel), blur(&ixy, w, h, &kernel));
    (0..w * h)
        .map(|i| {
            let tr = sxx[i] + syy[i];
            sxx[i] * syy[i] - sxy[i] * sxy[i] - k * tr * tr
        })
        .collect()
}

fn parabola_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Zero-mean, unit-norm patch around integer pixel `(cx, cy)`; `None` for a
/// constant patch.
fn descriptor(frame: &Frame, cx: usize, cy: usize) -> Option<[f32; DESCRIPTOR_LEN]> {
    let r = PATCH / 2;
    let mut d = [0.0f32; DESCRIPTOR_LEN];
    for (j, row) in d.chunks_mut(PATCH).enumerate() {
        let y = cy + j - r;
        row.copy_from_slice(&frame.data[y * frame.width + cx - r..y * frame.width + cx + r + 1]);
    }
    let mean = d.iter().sum::<f32>() / DESCRIPTOR_LEN as f32;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
    if !(norm > 1e-6) {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

pub fn detect_features(frame: &Frame, max_n: usize) -> Result<FeatureSet, FeatureError> {
    detect_features_with(
        frame,
        &HarrisParams {
            max_features: max_n,
            ..HarrisParams::default()
        },
    )
}

/// Harris corners, strongest first, thinned by greedy non-maximum
/// suppression, refined to subpixel by separable parabola fits.
pub fn detect_features_with(frame: &Frame, params: &HarrisParams) -> Result<FeatureSet, FeatureError> {
    let (w, h) = (frame.width, frame.height);
    if w < MIN_FRAME || h < MIN_FRAME {
        return Err(FeatureError::FrameTooSmall { width: w, height: h });
    }
    let resp = harris_response(frame, params.k, params.sigma);
    let peak = resp.iter().copied().fold(0.0f64, f64::max);
    let mut out = FeatureSet::default();
    if !(peak > 1e-12) {
        return Ok(out);
    }
    let floor = params.rel_threshold * peak;
    let margin = PATCH / 2 + 1;
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let v = resp[y * w + x];
            if v <= floor {
                continue;
            }
            let local_max = (y - 1..=y + 1)
                .flat_map(|yy| (x - 1..=x + 1).map(move |xx| (xx, yy)))
                .all(|(xx, yy)| (xx, yy) == (x, y) || resp[yy * w + xx] < v || (resp[yy * w + xx] == v && (yy, xx) > (y, x)));
            if local_max {
                cands.push((v, x, y));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let r2 = params.nms_radius * params.nms_radius;
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (score, x, y) in cands {
        if out.keypoints.len() >= params.max_features {
            break;
        }
        if kept
            .iter()
            .any(|&(kx, ky)| (kx as f64 - x as f64).powi(2) + (ky as f64 - y as f64).powi(2) < r2)
        {
            continue;
        }
        let Some(d) = descriptor(frame, x, y) else { continue };
        kept.push((x, y));
        let at = |xx: usize, yy: usize| resp[yy * w + xx];
        let dx = parabola_offset(at(x - 1, y), score, at(x + 1, y));
        let dy = parabola_offset(at(x, y - 1), score, at(x, y + 1));
        out.keypoints.push(Keypoint {
            x: x as f64 + dx,
            y: y as f64 + dy,
            score,
        });
        out.descriptors.extend_from_slice(&d);
    }
    Ok(out)
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best and second-best similarity index for each row of `a` against `b`.
fn nearest(a: &FeatureSet, b: &FeatureSet) -> Vec<(usize, f32, f32)> {
    (0..a.len())
        .map(|i| {
            let da = a.descriptor(i);
            let mut best = (usize::MAX, f32::NEG_INFINITY);
            let mut second = f32::NEG_INFINITY;
            for j in 0..b.len() {
                let s = dot(da, b.descriptor(j));
                if s > best.1 {
                    second = best.1;
                    best = (j, s);
                } else if s > second {
                    second = s;
                }
            }
            (best.0, best.1, second)
        })
        .collect()
}

/// Distance between unit vectors with dot product `s`.
fn dist(s: f32) -> f32 {
    (2.0 - 2.0 * s).max(0.0).sqrt()
}

/// Mutual nearest neighbours on descriptor dot product that also pass the
/// ratio test in both directions. Pairs `(index in a, index in b)`, sorted
/// by the index in `a`.
pub fn match_features(a: &FeatureSet, b: &FeatureSet) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let ab = nearest(a, b);
    let ba = nearest(b, a);
    let passes = |(_, best, second): (usize, f32, f32)| second == f32::NEG_INFINITY || dist(best) < RATIO * dist(second);
    ab.iter()
        .enumerate()
        .filter(|&(i, &(j, _, _))| ba[j].0 == i && passes(ab[i]) && passes(ba[j]))
        .map(|(i, &(j, _, _))| (i, j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize, square: usize) -> Frame {
        let data = (0..n * n)
            .map(|i| {
                let (x, y) = (i % n, i / n);
                if (x / square + y / square) % 2 == 0 { 0.2 } else { 0.8 }
            })
            .collect();
        Frame::new(n, n, data).unwrap()
    }

    #[test]
    fn constant_frame_has_no_features() {
        assert!(detect_features(&Frame::filled(40, 40, 0.5), 100).unwrap().is_empty());
    }

    #[test]
    fn small_frame_rejected() {
        assert!(detect_features(&Frame::filled(31, 64, 0.5), 100).is_err());
    }

    #[test]
    fn checkerboard_corners_found_near_intersections() {
        let f = checkerboard(64, 8);
        let fs = detect_features(&f, 200).unwrap();
        assert!(fs.len() >= 25, "{} corners", fs.len());
        for k in &fs.keypoints {
            // intersections fall between pixels 8m−1 and 8m
            let near = |v: f64| ((v + 0.5) / 8.0).round() * 8.0 - 0.5;
            assert!((k.x - near(k.x)).abs() <= 1.0 && (k.y - near(k.y)).abs() <= 1.0, "{k:?}");
        }
    }

    #[test]
    fn descriptors_are_zero_mean_unit_norm() {
        let fs = detect_features(&checkerboard(48, 6), 50).unwrap();
        for i in 0..fs.len() {
            let d = fs.descriptor(i);
            assert!(d.iter().sum::<f32>().abs() < 1e-4);
            assert!((dot(d, d) - 1.0).abs() < 1e-5);
        }
    }
}
