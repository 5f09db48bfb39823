//! Camera resection from 2D–3D correspondences and projection into the frame.

use std::fmt;

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector4};

use crate::homography::{hartley_2d, null_vector, transform_2d};
use crate::Point2;

/// Minimum number of correspondences for resection.
pub const MIN_CORRESPONDENCES: usize = 6;

/// Relative singular-value floor below which a configuration counts as degenerate.
const DEGENERACY_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistrationError {
    #[error("need at least {MIN_CORRESPONDENCES} correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("point projects to infinity (w = {0:e})")]
    AtInfinity(f64),
    #[error("non-finite coordinate in correspondence `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub name: String,
    /// CT coordinate in millimetres.
    pub x: [f64; 3],
    /// Pixel in the initial frame.
    pub uv: Point2,
}

/// 3×4 projection, normalized to unit Frobenius norm with the sign chosen so
/// the third row is positive on the centroid of the points it was fitted to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMatrix {
    p: Matrix3x4<f64>,
}

impl CameraMatrix {
    /// Normalizes `p`; the sign is fixed against `reference` (a 3D point in
    /// front of the camera), or left as given without one.
    pub fn new(p: Matrix3x4<f64>, reference: Option<[f64; 3]>) -> Option<Self> {
        let norm = p.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return None;
        }
        let mut p = p / norm;
        if let Some(c) = reference {
            if p.row(2).dot(&Vector4::new(c[0], c[1], c[2], 1.0).transpose()) < 0.0 {
                p = -p;
            }
        }
        Some(Self { p })
    }

    /// From 12 row-major numbers, normalized without a sign reference.
    pub fn from_row_major(v: &[f64; 12]) -> Option<Self> {
        Self::new(Matrix3x4::from_row_slice(v), None)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.p
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[4 * r + c] = self.p[(r, c)];
            }
        }
        out
    }

    pub fn project(&self, x: [f64; 3]) -> Result<Point2, RegistrationError> {
        project_matrix(&self.p, x)
    }
}

impl fmt::Display for CameraMatrix {
    /// Three lines of four numbers, 17 significant digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..3 {
            let row: Vec<String> = (0..4).map(|c| format!("{:.16e}", self.p[(r, c)])).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Homogeneous projection followed by perspective division.
pub fn project_matrix(p: &Matrix3x4<f64>, x: [f64; 3]) -> Result<Point2, RegistrationError> {
    let xh = Vector4::new(x[0], x[1], x[2], 1.0);
    let v = p * xh;
    if v[2].abs() <= 1e-12 {
        return Err(RegistrationError::AtInfinity(v[2]));
    }
    Ok([v[0] / v[2], v[1] / v[2]])
}

pub fn project_point(p: &CameraMatrix, x: [f64; 3]) -> Result<Point2, RegistrationError> {
    p.project(x)
}

fn hartley_3d(points: &[[f64; 3]]) -> Option<Matrix4<f64>> {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    let ms = points.iter().map(|p| (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>()).sum::<f64>() / n;
    if !(ms > 0.0 && ms.is_finite()) {
        return None;
    }
    let s = (3.0 / ms).sqrt();
    Some(Matrix4::new(
        s, 0.0, 0.0, -s * c[0], 0.0, s, 0.0, -s * c[1], 0.0, 0.0, s, -s * c[2], 0.0, 0.0, 0.0, 1.0,
    ))
}

/// Singular values (descending) of the centred point cloud.
fn spread<const D: usize>(points: impl Iterator<Item = [f64; D]> + Clone) -> Vec<f64> {
    let n = points.clone().count();
    let mut c = [0.0; D];
    for p in points.clone() {
        for a in 0..D {
            c[a] += p[a] / n as f64;
        }
    }
    let m = DMatrix::from_fn(n, D, |i, j| points.clone().nth(i).expect("row")[j] - c[j]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn centroid(corrs: &[Correspondence]) -> [f64; 3] {
    let n = corrs.len() as f64;
    let mut c = [0.0; 3];
    for k in corrs {
        for a in 0..3 {
            c[a] += k.x[a] / n;
        }
    }
    c
}

/// Resects the camera from ≥6 correspondences with Hartley normalization.
/// Returns the camera and the per-correspondence reprojection residual in pixels.
pub fn dlt_resect(corrs: &[Correspondence]) -> Result<(CameraMatrix, Vec<f64>), RegistrationError> {
    dlt_resect_with(corrs, true)
}

/// As [`dlt_resect`], optionally skipping the point normalization.
pub fn dlt_resect_with(corrs: &[Correspondence], hartley: bool) -> Result<(CameraMatrix, Vec<f64>), RegistrationError> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(RegistrationError::InsufficientPoints(corrs.len()));
    }
    if let Some(bad) = corrs.iter().find(|c| c.x.iter().chain(&c.uv).any(|v| !v.is_finite())) {
        return Err(RegistrationError::NonFinite(bad.name.clone()));
    }
    let s3 = spread(corrs.iter().map(|c| c.x));
    if s3[2] <= DEGENERACY_RATIO * s3[0] {
        return Err(RegistrationError::Degenerate("3D points are coplanar"));
    }
    let s2 = spread(corrs.iter().map(|c| c.uv));
    if s2[1] <= DEGENERACY_RATIO * s2[0] {
        return Err(RegistrationError::Degenerate("2D points are collinear"));
    }

    let pts3: Vec<[f64; 3]> = corrs.iter().map(|c| c.x).collect();
    let (t, u) = if hartley {
        (
            hartley_2d(corrs.iter().map(|c| c.uv)).ok_or(RegistrationError::Degenerate("2D points coincide"))?,
            hartley_3d(&pts3).ok_or(RegistrationError::Degenerate("3D points coincide"))?,
        )
    } else {
        (Matrix3::identity(), Matrix4::identity())
    };

    let mut a = DMatrix::zeros(2 * corrs.len(), 12);
    for (i, c) in corrs.iter().enumerate() {
        let xh = u * Vector4::new(c.x[0], c.x[1], c.x[2], 1.0);
        let [x, y] = transform_2d(&t, c.uv);
        let r = 2 * i;
        for k in 0..4 {
            a[(r, k)] = -xh[k];
            a[(r, 8 + k)] = x * xh[k];
            a[(r + 1, 4 + k)] = -xh[k];
            a[(r + 1, 8 + k)] = y * xh[k];
        }
    }
    let (p, sv) = null_vector(a).ok_or(RegistrationError::Degenerate("singular value decomposition failed"))?;
    if sv[10] <= DEGENERACY_RATIO * sv[0] {
        return Err(RegistrationError::Degenerate("correspondences do not determine a unique camera"));
    }
    let pn = Matrix3x4::from_row_slice(&p);
    let t_inv = t.try_inverse().ok_or(RegistrationError::Degenerate("normalization not invertible"))?;
    let camera = CameraMatrix::new(t_inv * pn * u, Some(centroid(corrs)))
        .ok_or(RegistrationError::Degenerate("camera matrix vanished"))?;
    let residuals = corrs
        .iter()
        .map(|c| camera.project(c.x).map(|q| (q[0] - c.uv[0]).hypot(q[1] - c.uv[1])))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((camera, residuals))
}

/// Image segment between two endpoints.
pub type Segment = [Point2; 2];

/// Clips a segment to `[0, width−1] × [0, height−1]` (pixel-centre
/// coordinates) by parametric Liang–Barsky clipping. Clipped endpoints lie
/// exactly on the border.
pub fn clip_segment(seg: Segment, width: usize, height: usize) -> Option<Segment> {
    if width == 0 || height == 0 {
        return None;
    }
    let [a, b] = seg;
    let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    // (p, q, boundary coordinate, axis)
    let edges = [(-dx, a[0], 0.0, 0), (dx, xmax - a[0], xmax, 0), (-dy, a[1], 0.0, 1), (dy, ymax - a[1], ymax, 1)];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let (mut snap0, mut snap1) = (None, None);
    for (p, q, bound, axis) in edges {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
            continue;
        }
        let r = q / p;
        if p < 0.0 {
            if r > t1 {
                return None;
            }
            if r > t0 {
                t0 = r;
                snap0 = Some((axis, bound));
            }
        } else {
            if r < t0 {
                return None;
            }
            if r < t1 {
                t1 = r;
                snap1 = Some((axis, bound));
            }
        }
    }
    let at = |t: f64, snap: Option<(usize, f64)>, end: Point2| {
        if snap.is_none() {
            return end;
        }
        let mut p = [a[0] + t * dx, a[1] + t * dy];
        if let Some((axis, bound)) = snap {
            p[axis] = bound;
        }
        p
    };
    Some([at(t0, snap0, a), at(t1, snap1, b)])
}

/// Projects the cochlear axis and clips it to the frame; `None` when the
/// projected segment misses the frame entirely.
pub fn project_axis(
    p: &CameraMatrix,
    apex: [f64; 3],
    base: [f64; 3],
    width: usize,
    height: usize,
) -> Result<Option<Segment>, RegistrationError> {
    let a = p.project(apex)?;
    let b = p.project(base)?;
    Ok(clip_segment([a, b], width, height))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct TextError {
    pub line: usize,
    pub message: String,
}

/// Parses `NAME X Y Z U V` lines (millimetres, pixels); `#` starts a comment.
pub fn parse_correspondences(text: &str) -> Result<Vec<Correspondence>, TextError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| TextError { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected `NAME X Y Z U V`, got {} fields", fields.len())));
        }
        let mut v = [0.0; 5];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| err(format!("invalid number `{f}`")))?;
        }
        out.push(Correspondence {
            name: fields[0].to_string(),
            x: [v[0], v[1], v[2]],
            uv: [v[3], v[4]],
        });
    }
    Ok(out)
}

pub fn format_correspondences(corrs: &[Correspondence]) -> String {
    let mut out = String::from("# name x_mm y_mm z_mm u_px v_px\n");
    for c in corrs {
        out.push_str(&format!(
            "{} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}\n",
            c.name, c.x[0], c.x[1], c.x[2], c.uv[0], c.uv[1]
        ));
    }
    out
}

/// Reads the 12 row-major numbers written by the camera's `Display`.
pub fn parse_camera(text: &str) -> Result<CameraMatrix, TextError> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| TextError {
            line: 1,
            message: format!("invalid number: {e}"),
        })?;
    let arr: [f64; 12] = nums.as_slice().try_into().map_err(|_| TextError {
        line: 1,
        message: format!("expected 12 numbers, got {}", nums.len()),
    })?;
    CameraMatrix::from_row_major(&arr).ok_or(TextError {
        line: 1,
        message: "camera matrix is zero or non-finite".into(),
    })
}
