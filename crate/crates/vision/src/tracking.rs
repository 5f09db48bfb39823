//! Frame-to-frame homography tracking from the registered initial frame.

use serde::{Deserialize, Serialize};

use crate::features::{detect_features, match_features, smooth, FeatureError, FeatureSet};
use crate::frame::Frame;
use crate::Point2;
use crate::homography::{normalize, ransac_homography, Homography, Pair, RansacParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Tracking,
    Lost,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Tracking => "Tracking",
            TrackStatus::Lost => "Lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackParams {
    pub ransac: RansacParams,
    pub max_features: usize,
    /// Fewer inliers than this marks the track lost.
    pub min_inliers: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            max_features: 500,
            min_inliers: 12,
        }
    }
}

/// Cumulative homography from frame 0 to `frame`, plus diagnostics of the
/// last step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub h: Homography,
    pub frame: usize,
    /// Inliers of the last estimate; `None` before the first step.
    pub inliers: Option<usize>,
    pub mean_residual: f64,
    pub status: TrackStatus,
}

impl TrackState {
    pub fn initial() -> Self {
        Self {
            h: Homography::identity(),
            frame: 0,
            inliers: None,
            mean_residual: 0.0,
            status: TrackStatus::Tracking,
        }
    }
}

/// Per-step RANSAC seed, so a replay from any checkpoint is identical.
fn step_seed(base: u64, frame: usize) -> u64 {
    base ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Half-width of the alignment window used to refine matches.
const REFINE_RADIUS: i64 = 8;
/// Refinements that move a match further than this are discarded.
const REFINE_MAX_SHIFT: f64 = 1.5;

/// Keys cubic convolution weights (a = −1/2) for fractional offset `t`.
fn cubic_weights(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Bicubic sample; `None` unless the whole 4×4 support is inside the frame.
fn sample_cubic(f: &Frame, x: f64, y: f64) -> Option<f64> {
    let (x0, y0) = (x.floor(), y.floor());
    if !(x0 >= 1.0 && y0 >= 1.0 && x0 + 2.0 < f.width as f64 && y0 + 2.0 < f.height as f64) {
        return None;
    }
    let (wx, wy) = (cubic_weights(x - x0), cubic_weights(y - y0));
    let (xi, yi) = (x0 as usize - 1, y0 as usize - 1);
    let mut v = 0.0;
    for (j, wy) in wy.iter().enumerate() {
        let row: f64 = wx.iter().enumerate().map(|(i, wx)| wx * f64::from(f.at(xi + i, yi + j))).sum();
        v += wy * row;
    }
    Some(v)
}

/// Translation-only Lucas–Kanade alignment of the window around the rounded
/// keypoint `p` in `prev` into `next`, started from the matched keypoint `q`.
/// Returns the window centre and its refined position in `next`.
fn refine_pair(prev: &Frame, next: &Frame, p: Point2, q: Point2) -> Option<Pair> {
    let r = REFINE_RADIUS;
    let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
    if cx - r - 1 < 0 || cy - r - 1 < 0 || cx + r + 1 >= prev.width as i64 || cy + r + 1 >= prev.height as i64 {
        return None;
    }
    let at = |x: i64, y: i64| f64::from(prev.at(x as usize, y as usize));
    let mut tmpl = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            gxx += gx * gx;
            gxy += gx * gy;
            gyy += gy * gy;
            tmpl.push((dx as f64, dy as f64, at(x, y), gx, gy));
        }
    }
    let det = gxx * gyy - gxy * gxy;
    if !(det > 1e-6 * (gxx + gyy).powi(2)) || gxx + gyy < 1e-8 {
        return None;
    }
    let start = [q[0] + cx as f64 - p[0], q[1] + cy as f64 - p[1]];
    let mut d = start;
    for _ in 0..20 {
        let (mut bx, mut by) = (0.0, 0.0);
        for &(ox, oy, t, gx, gy) in &tmpl {
            let e = sample_cubic(next, d[0] + ox, d[1] + oy)? - t;
            bx += gx * e;
            by += gy * e;
        }
        let step = [-(gyy * bx - gxy * by) / det, -(gxx * by - gxy * bx) / det];
        d = [d[0] + step[0], d[1] + step[1]];
        if (d[0] - start[0]).hypot(d[1] - start[1]) > REFINE_MAX_SHIFT {
            return None;
        }
        if step[0].hypot(step[1]) < 1e-4 {
            break;
        }
    }
    Some(([cx as f64, cy as f64], d))
}

/// Smoothing applied before local alignment, so interpolating the next
/// frame stays close to the underlying signal.
const REFINE_SIGMA: f64 = 2.0;

/// Per-frame data reused by consecutive steps.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub features: FeatureSet,
    smoothed: Frame,
}

pub fn prepare(frame: &Frame, params: &TrackParams) -> Result<PreparedFrame, FeatureError> {
    Ok(PreparedFrame {
        features: detect_features(frame, params.max_features)?,
        smoothed: smooth(frame, REFINE_SIGMA),
    })
}

/// Feature matches between two prepared frames, each refined by local
/// alignment.
pub fn matched_pairs(prev: &PreparedFrame, next: &PreparedFrame) -> Vec<Pair> {
    let (a, b) = (&prev.features, &next.features);
    match_features(a, b)
        .into_iter()
        .filter_map(|(i, j)| refine_pair(&prev.smoothed, &next.smoothed, a.keypoints[i].point(), b.keypoints[j].point()))
        .collect()
}

/// Transition between two prepared frames.
pub fn advance_prepared(state: &TrackState, prev: &PreparedFrame, next: &PreparedFrame, params: &TrackParams) -> TrackState {
    let mut out = state.clone();
    out.frame = state.frame + 1;
    if state.status == TrackStatus::Lost {
        return out;
    }
    let pairs = matched_pairs(prev, next);
    let ransac = RansacParams {
        seed: step_seed(params.ransac.seed, state.frame),
        ..params.ransac
    };
    let lost = |out: &mut TrackState, inliers: usize| {
        out.inliers = Some(inliers);
        out.status = TrackStatus::Lost;
    };
    match ransac_homography(&pairs, &ransac) {
        Ok(r) if r.n_inliers >= params.min_inliers => match normalize(&(r.h * state.h)) {
            Some(h) if h.determinant().abs() > 1e-12 => {
                out.h = h;
                out.inliers = Some(r.n_inliers);
                out.mean_residual = r.mean_residual;
            }
            _ => lost(&mut out, r.n_inliers),
        },
        Ok(r) => lost(&mut out, r.n_inliers),
        Err(_) => lost(&mut out, 0),
    }
    out
}

/// Pure transition `prev → next`; a failed estimate marks the state lost and
/// keeps the last cumulative homography.
pub fn advance(state: &TrackState, prev: &Frame, next: &Frame, params: &TrackParams) -> Result<TrackState, FeatureError> {
    Ok(advance_prepared(state, &prepare(prev, params)?, &prepare(next, params)?, params))
}

/// Sequential tracker that reuses the previous frame's features.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub params: TrackParams,
    pub state: TrackState,
    last: PreparedFrame,
}

impl Tracker {
    pub fn new(first: &Frame, params: TrackParams) -> Result<Self, FeatureError> {
        Self::resume(first, TrackState::initial(), params)
    }

    /// Continues from `state`, whose frame is `frame`.
    pub fn resume(frame: &Frame, state: TrackState, params: TrackParams) -> Result<Self, FeatureError> {
        Ok(Self {
            params,
            state,
            last: prepare(frame, &params)?,
        })
    }

    pub fn step(&mut self, next: &Frame) -> Result<&TrackState, FeatureError> {
        let next = prepare(next, &self.params)?;
        self.state = advance_prepared(&self.state, &self.last, &next, &self.params);
        self.last = next;
        Ok(&self.state)
    }
}
