//! Synthetic planar scene viewed by a moving camera, with ground truth.
//!
//! Frame `t` is a continuous base texture warped by the cumulative homography
//! `G_t` (frame 0 → frame t, `G_0 = I`), point-sampled, with additive
//! Gaussian noise and 8-bit quantization. The registration picks are the six
//! registration landmarks projected through the ground-truth camera into
//! frame 0, so the overlay position at frame `t` is `G_t` applied to them.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use otoar_core::{Landmark, LandmarkSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Map, Value};

use crate::frame::{write_frame_dir, Frame, FrameError};
use crate::homography::{apply_homography, normalize, translation, Homography};
use crate::registration::{format_correspondences, CameraMatrix, Correspondence};
use crate::Point2;

/// Per-frame motion limits.
pub const MAX_STEP_TRANSLATION_PX: f64 = 5.0;
pub const MAX_STEP_ROTATION_DEG: f64 = 2.0;
pub const MAX_STEP_ZOOM: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Still,
    /// Constant per-frame shift.
    Translation { dx: f64, dy: f64 },
    /// Sinusoidal shift, rotation and zoom about the frame centre, plus a
    /// small perspective tilt.
    Smooth {
        shift: [f64; 2],
        rotation_deg: f64,
        zoom: f64,
        perspective: f64,
        period: f64,
    },
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory::Smooth {
            shift: [25.0, 15.0],
            rotation_deg: 6.0,
            zoom: 0.06,
            perspective: 1e-5,
            period: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub trajectory: Trajectory,
    /// Standard deviation of additive noise, in intensity units.
    pub noise_sigma: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            frames: 120,
            width: 320,
            height: 240,
            trajectory: Trajectory::default(),
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthcamError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame size {0}x{1} below 64x64")]
    FrameTooSmall(usize, usize),
    #[error("frame {frame}: {what} step {value:.4} exceeds {limit}")]
    OutOfRange {
        frame: usize,
        what: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("ground-truth homography at frame {0} is not invertible")]
    Singular(usize),
    #[error("camera does not see landmark {0}")]
    Projection(Landmark),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Shift, rotation (radians), zoom and perspective at frame `t`.
fn pose(traj: &Trajectory, t: usize) -> ([f64; 2], f64, f64, f64) {
    let t = t as f64;
    match *traj {
        Trajectory::Still => ([0.0, 0.0], 0.0, 1.0, 0.0),
        Trajectory::Translation { dx, dy } => ([dx * t, dy * t], 0.0, 1.0, 0.0),
        Trajectory::Smooth {
            shift,
            rotation_deg,
            zoom,
            perspective,
            period,
        } => {
            let w = 2.0 * PI * t / period;
            (
                [shift[0] * w.sin(), shift[1] * (2.0 * w).sin() / 2.0],
                rotation_deg.to_radians() * (w + 0.3).sin() - rotation_deg.to_radians() * 0.3f64.sin(),
                1.0 + zoom * (1.0 - w.cos()) / 2.0,
                perspective * w.sin(),
            )
        }
    }
}

fn centred(center: Point2, m: Matrix3<f64>) -> Matrix3<f64> {
    translation(center[0], center[1]) * m * translation(-center[0], -center[1])
}

/// Ground-truth cumulative homography frame 0 → frame `t`.
pub fn ground_truth_homography(params: &ScenarioParams, t: usize) -> Homography {
    let c = [(params.width - 1) as f64 / 2.0, (params.height - 1) as f64 / 2.0];
    let ([tx, ty], theta, s, p) = pose(&params.trajectory, t);
    let (sin, cos) = theta.sin_cos();
    let rs = Matrix3::new(s * cos, -s * sin, 0.0, s * sin, s * cos, 0.0, 0.0, 0.0, 1.0);
    let persp = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, p, 0.5 * p, 1.0);
    let g = translation(tx, ty) * centred(c, rs * persp);
    normalize(&g).expect("finite trajectory")
}

fn check_steps(params: &ScenarioParams) -> Result<(), SynthcamError> {
    let c = [(params.width - 1) as f64 / 2.0, (params.height - 1) as f64 / 2.0];
    for t in 1..params.frames {
        let (a, b) = (pose(&params.trajectory, t - 1), pose(&params.trajectory, t));
        let g0 = ground_truth_homography(params, t - 1);
        let g1 = ground_truth_homography(params, t);
        let step = |g: &Homography| apply_homography(g, c).expect("finite");
        let (p0, p1) = (step(&g0), step(&g1));
        let checks = [
            ("translation", (p1[0] - p0[0]).hypot(p1[1] - p0[1]), MAX_STEP_TRANSLATION_PX),
            ("rotation", (b.1 - a.1).to_degrees().abs(), MAX_STEP_ROTATION_DEG),
            ("zoom", (b.2 / a.2 - 1.0).abs(), MAX_STEP_ZOOM),
        ];
        for (what, value, limit) in checks {
            if value > limit {
                return Err(SynthcamError::OutOfRange {
                    frame: t,
                    what,
                    value,
                    limit,
                });
            }
        }
    }
    Ok(())
}

/// Half-width in pixels of the smooth ramp at rectangle edges.
const EDGE: f64 = 2.5;
const CELL: f64 = 16.0;

#[derive(Debug, Clone, Copy)]
struct Rect {
    lo: Point2,
    hi: Point2,
    value: f64,
}

/// Continuous texture in frame-0 coordinates: a sum of rectangles with C²
/// edges, evaluated exactly at any point so warped frames carry no
/// resampling error.
struct Texture {
    origin: Point2,
    cols: usize,
    rows: usize,
    rects: Vec<Rect>,
    /// Indices of the rectangles whose support touches each grid cell.
    cells: Vec<Vec<usize>>,
}

/// 0 below `−EDGE`, 1 above `EDGE`, quintic smootherstep between.
fn ramp(u: f64) -> f64 {
    let t = ((u + EDGE) / (2.0 * EDGE)).clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

impl Texture {
    fn sample(&self, p: Point2) -> f64 {
        let (cx, cy) = ((p[0] - self.origin[0]) / CELL, (p[1] - self.origin[1]) / CELL);
        let mut v = 0.5;
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < self.cols && (cy as usize) < self.rows {
            for &i in &self.cells[cy as usize * self.cols + cx as usize] {
                let r = &self.rects[i];
                let wx = ramp(p[0] - r.lo[0]) - ramp(p[0] - r.hi[0]);
                let wy = ramp(p[1] - r.lo[1]) - ramp(p[1] - r.hi[1]);
                v += r.value * wx * wy;
            }
        }
        v.clamp(0.02, 0.98)
    }
}

fn make_texture(params: &ScenarioParams, inverses: &[Homography], rng: &mut ChaCha8Rng) -> Texture {
    let (w, h) = (params.width as f64, params.height as f64);
    let corners = [[0.0, 0.0], [w - 1.0, 0.0], [0.0, h - 1.0], [w - 1.0, h - 1.0]];
    let (mut lo, mut hi) = ([0.0f64, 0.0f64], [w - 1.0, h - 1.0]);
    for inv in inverses {
        for &c in &corners {
            let p = apply_homography(inv, c).expect("invertible ground truth");
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    let pad = 4.0;
    let origin = [lo[0].floor() - pad, lo[1].floor() - pad];
    let (tw, th) = (hi[0].ceil() + pad - origin[0], hi[1].ceil() + pad - origin[1]);
    let cols = (tw / CELL).ceil() as usize;
    let rows = (th / CELL).ceil() as usize;

    let count = (tw * th / 700.0) as usize;
    let mut rects = Vec::with_capacity(count);
    let mut cells = vec![Vec::new(); cols * rows];
    for i in 0..count {
        let rw = rng.random_range(4.0..28.0);
        let rh = rng.random_range(4.0..28.0);
        let x0 = origin[0] + rng.random_range(0.0..(tw - rw).max(1.0));
        let y0 = origin[1] + rng.random_range(0.0..(th - rh).max(1.0));
        let r = Rect {
            lo: [x0, y0],
            hi: [x0 + rw, y0 + rh],
            value: rng.random_range(-0.3..0.3),
        };
        let cell = |v: f64, o: f64, n: usize| (((v - o) / CELL).floor().max(0.0) as usize).min(n - 1);
        for cy in cell(r.lo[1] - EDGE, origin[1], rows)..=cell(r.hi[1] + EDGE, origin[1], rows) {
            for cx in cell(r.lo[0] - EDGE, origin[0], cols)..=cell(r.hi[0] + EDGE, origin[0], cols) {
                cells[cy * cols + cx].push(i);
            }
        }
        rects.push(r);
    }
    Texture {
        origin,
        cols,
        rows,
        rects,
        cells,
    }
}

/// Looks at the landmarks' centroid from a random direction within 25° of
/// the −z axis, at 120 mm, with focal length chosen so the landmarks span
/// about half the frame.
fn make_camera(lm_mm: &LandmarkSet, params: &ScenarioParams, rng: &mut ChaCha8Rng) -> Matrix3x4<f64> {
    let pts: Vec<Vector3<f64>> = lm_mm.coords().iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
    let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let tilt: f64 = rng.random_range(0.0..25.0f64).to_radians();
    let azimuth: f64 = rng.random_range(0.0..2.0 * PI);
    let dir = Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), -tilt.cos());
    let center = c - 120.0 * dir;
    let z = dir;
    let up = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = -r * center;
    let extent = pts
        .iter()
        .map(|p| {
            let q = r * p + t;
            (q.x / q.z).abs().max((q.y / q.z).abs())
        })
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let f = 0.25 * params.width.min(params.height) as f64 / extent;
    let k = Matrix3::new(
        f,
        0.0,
        (params.width - 1) as f64 / 2.0,
        0.0,
        f,
        (params.height - 1) as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    k * rt
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ScenarioParams,
    pub seed: u64,
    pub camera: CameraMatrix,
    /// All seven landmarks in CT millimetres.
    pub landmarks_mm: LandmarkSet,
    /// Exact frame-0 projections of all seven landmarks.
    pub projections: [Point2; 7],
    /// `G_t` for every frame.
    pub homographies: Vec<Homography>,
    pub frames: Vec<Frame>,
}

impl Scenario {
    /// The six registration correspondences with exact pixels.
    pub fn picks(&self) -> Vec<Correspondence> {
        Landmark::REGISTRATION
            .iter()
            .map(|&l| Correspondence {
                name: l.key().to_string(),
                x: self.landmarks_mm.get(l),
                uv: self.projections[l.index()],
            })
            .collect()
    }

    /// Ground-truth pixel of landmark `l` in frame `t`.
    pub fn position(&self, l: Landmark, t: usize) -> Point2 {
        apply_homography(&self.homographies[t], self.projections[l.index()]).expect("visible ground truth")
    }

    pub fn ground_truth_json(&self) -> Value {
        let mut lm = Map::new();
        let mut px = Map::new();
        for l in Landmark::ALL {
            lm.insert(l.key().into(), json!(self.landmarks_mm.get(l)));
            px.insert(l.key().into(), json!(self.projections[l.index()]));
        }
        json!({
            "seed": self.seed,
            "width": self.params.width,
            "height": self.params.height,
            "frames": self.params.frames,
            "noise_sigma": self.params.noise_sigma,
            "camera": self.camera.to_row_major().to_vec(),
            "landmarks_mm": lm,
            "frame0_px": px,
            "homographies": self.homographies.iter().map(|h| h.transpose().as_slice().to_vec()).collect::<Vec<_>>(),
        })
    }

    /// Writes `frames/`, `groundtruth.json` and `picks.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthcamError> {
        write_frame_dir(&dir.join("frames"), &self.frames)?;
        let gt = serde_json::to_string_pretty(&self.ground_truth_json()).expect("plain data");
        fs::write(dir.join("groundtruth.json"), gt)?;
        fs::write(dir.join("picks.txt"), format_correspondences(&self.picks()))?;
        Ok(())
    }
}

/// Generates a scenario for landmarks given in CT millimetres.
pub fn generate_scenario(seed: u64, params: &ScenarioParams, landmarks_mm: &LandmarkSet) -> Result<Scenario, SynthcamError> {
    if params.frames < 2 {
        return Err(SynthcamError::TooFewFrames(params.frames));
    }
    if params.width < 64 || params.height < 64 {
        return Err(SynthcamError::FrameTooSmall(params.width, params.height));
    }
    check_steps(params)?;
    let homographies: Vec<Homography> = (0..params.frames).map(|t| ground_truth_homography(params, t)).collect();
    let inverses = homographies
        .iter()
        .enumerate()
        .map(|(t, g)| g.try_inverse().and_then(|i| normalize(&i)).ok_or(SynthcamError::Singular(t)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = make_camera(landmarks_mm, params, &mut rng);
    let camera = CameraMatrix::new(p, Some(landmarks_mm.get(Landmark::CochleaApex))).expect("finite camera");
    let mut projections = [[0.0; 2]; 7];
    for l in Landmark::ALL {
        projections[l.index()] = camera.project(landmarks_mm.get(l)).map_err(|_| SynthcamError::Projection(l))?;
    }
    let texture = make_texture(params, &inverses, &mut rng);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).expect("finite sigma");

    let (w, h) = (params.width, params.height);
    let mut frames = Vec::with_capacity(params.frames);
    for (t, inv) in inverses.iter().enumerate() {
        let mut frame_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let q = apply_homography(inv, [x as f64, y as f64]).expect("invertible ground truth");
                let n = if params.noise_sigma > 0.0 { noise.sample(&mut frame_rng) } else { 0.0 };
                data.push((texture.sample(q) + n) as f32);
            }
        }
        let mut f = Frame::new(w, h, data)?.quantized();
        f.index = t;
        f.timestamp = t as f64;
        frames.push(f);
    }
    Ok(Scenario {
        params: *params,
        seed,
        camera,
        landmarks_mm: *landmarks_mm,
        projections,
        homographies,
        frames,
    })
}
