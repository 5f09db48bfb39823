//! Planar homographies: application, normalized DLT estimation and RANSAC.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Point2;

/// 3×3 projective map, stored with `H[2][2] = 1`.
pub type Homography = Matrix3<f64>;

/// `(source, destination)` point correspondence.
pub type Pair = (Point2, Point2);

/// Homogeneous coordinates with `|w|` below this are treated as at infinity.
pub const MIN_W: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HomographyError {
    #[error("need at least 4 point pairs, got {0}")]
    TooFewPairs(usize),
    #[error("point maps to infinity (w = {0:e})")]
    AtInfinity(f64),
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("best model has {0} inliers, need at least 4")]
    TooFewInliers(usize),
}

pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2, HomographyError> {
    let w = h[(2, 0)] * p[0] + h[(2, 1)] * p[1] + h[(2, 2)];
    if w.abs() < MIN_W {
        return Err(HomographyError::AtInfinity(w));
    }
    let u = h[(0, 0)] * p[0] + h[(0, 1)] * p[1] + h[(0, 2)];
    let v = h[(1, 0)] * p[0] + h[(1, 1)] * p[1] + h[(1, 2)];
    Ok([u / w, v / w])
}

/// Scales `h` so `H[2][2] = 1`; `None` when that entry vanishes.
pub fn normalize(h: &Homography) -> Option<Homography> {
    let s = h[(2, 2)];
    (s.abs() > MIN_W && h.iter().all(|v| v.is_finite())).then(|| h / s)
}

pub fn translation(tx: f64, ty: f64) -> Homography {
    Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
}

/// Similarity transform translating the centroid to the origin with RMS
/// distance √2. `None` if all points coincide.
pub(crate) fn hartley_2d(points: impl Iterator<Item = Point2> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let ms = points.map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>() / n;
    if !(ms > 0.0) || !ms.is_finite() {
        return None;
    }
    let s = (2.0 / ms).sqrt();
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

pub(crate) fn transform_2d(t: &Matrix3<f64>, p: Point2) -> Point2 {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Right singular vector of the smallest singular value, and all singular
/// values in descending order. Rows are zero-padded so the nullspace of a
/// wide system is not lost to the thin decomposition.
pub(crate) fn null_vector(a: DMatrix<f64>) -> Option<(Vec<f64>, Vec<f64>)> {
    let cols = a.ncols();
    let a = if a.nrows() < cols { a.resize_vertically(cols, 0.0) } else { a };
    let svd = a.try_svd(false, true, f64::EPSILON, 0)?;
    let vt = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let last = *order.last()?;
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    Some((vt.row(last).iter().copied().collect(), sv))
}

/// Least-squares homography from ≥4 pairs via Hartley-normalized DLT.
pub fn estimate_homography(pairs: &[Pair]) -> Result<Homography, HomographyError> {
    if pairs.len() < 4 {
        return Err(HomographyError::TooFewPairs(pairs.len()));
    }
    let t1 = hartley_2d(pairs.iter().map(|p| p.0)).ok_or(HomographyError::Degenerate)?;
    let t2 = hartley_2d(pairs.iter().map(|p| p.1)).ok_or(HomographyError::Degenerate)?;
    let mut a = DMatrix::zeros(2 * pairs.len(), 9);
    for (i, &(p, q)) in pairs.iter().enumerate() {
        let [x, y] = transform_2d(&t1, p);
        let [u, v] = transform_2d(&t2, q);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
        a.row_mut(r + 1).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
    }
    let (h, sv) = null_vector(a).ok_or(HomographyError::Degenerate)?;
    // a second (near-)null direction means the pairs do not pin down H
    if sv[7] <= 1e-10 * sv[0] {
        return Err(HomographyError::Degenerate);
    }
    let hn = Matrix3::from_row_slice(&h);
    let t2_inv = t2.try_inverse().ok_or(HomographyError::Degenerate)?;
    normalize(&(t2_inv * hn * t1)).ok_or(HomographyError::Degenerate)
}

/// `d(q, H p)² + d(p, H⁻¹ q)²`, infinite when either side maps to infinity.
pub fn symmetric_transfer_error(h: &Homography, h_inv: &Homography, (p, q): Pair) -> f64 {
    match (apply_homography(h, p), apply_homography(h_inv, q)) {
        (Ok(hp), Ok(hq)) => {
            (hp[0] - q[0]).powi(2) + (hp[1] - q[1]).powi(2) + (hq[0] - p[0]).powi(2) + (hq[1] - p[1]).powi(2)
        }
        _ => f64::INFINITY,
    }
}

/// Forward reprojection distance `|q − H p|`.
pub fn transfer_distance(h: &Homography, (p, q): Pair) -> f64 {
    apply_homography(h, p).map_or(f64::INFINITY, |hp| (hp[0] - q[0]).hypot(hp[1] - q[1]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Inlier threshold in pixels on the symmetric transfer error.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            confidence: 0.995,
            max_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub h: Homography,
    /// Inlier flag per input pair, in input order.
    pub inliers: Vec<bool>,
    pub n_inliers: usize,
    /// Mean forward transfer distance over the inliers.
    pub mean_residual: f64,
    pub iterations: usize,
}

fn collinear(a: Point2, b: Point2, c: Point2) -> bool {
    let (ux, uy, vx, vy) = (b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1]);
    let cross = (ux * vy - uy * vx).abs();
    cross <= 1e-9 * (ux.hypot(uy) * vx.hypot(vy)).max(1e-300)
}

fn degenerate_sample(s: &[Pair; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        collinear(s[t[0]].0, s[t[1]].0, s[t[2]].0) || collinear(s[t[0]].1, s[t[1]].1, s[t[2]].1)
    })
}

struct Scored {
    h: Homography,
    inliers: Vec<bool>,
    count: usize,
    cost: f64,
}

fn score(h: Homography, pairs: &[Pair], t2: f64) -> Option<Scored> {
    let h_inv = normalize(&h.try_inverse()?)?;
    let mut inliers = vec![false; pairs.len()];
    let (mut count, mut cost) = (0, 0.0);
    for (flag, &pair) in inliers.iter_mut().zip(pairs) {
        let e = symmetric_transfer_error(&h, &h_inv, pair);
        if e <= t2 {
            *flag = true;
            count += 1;
            cost += e;
        } else {
            cost += t2;
        }
    }
    Some(Scored { h, inliers, count, cost })
}

fn better(a: &Scored, b: &Option<Scored>) -> bool {
    match b {
        None => true,
        Some(b) => a.count > b.count || (a.count == b.count && a.cost < b.cost),
    }
}

/// Robust homography: 4-point normalized DLT hypotheses, symmetric transfer
/// scoring, adaptive iteration count and a least-squares refit on the inliers.
///
/// Pairs are put in a canonical order (by coordinates) before the seeded
/// shuffle, so the result does not depend on the order of `pairs`.
pub fn ransac_homography(pairs: &[Pair], params: &RansacParams) -> Result<RansacResult, HomographyError> {
    let n = pairs.len();
    if n < 4 {
        return Err(HomographyError::TooFewPairs(n));
    }
    let key = |p: &Pair| [p.0[0], p.0[1], p.1[0], p.1[1]];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        key(&pairs[i])
            .iter()
            .zip(key(&pairs[j]).iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    order.shuffle(&mut rng);
    let canon: Vec<Pair> = order.iter().map(|&i| pairs[i]).collect();

    let t2 = params.threshold_px * params.threshold_px;
    let mut best: Option<Scored> = None;
    let mut limit = params.max_iters;
    let mut iterations = 0;
    while iterations < limit {
        iterations += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let sample = [canon[idx.index(0)], canon[idx.index(1)], canon[idx.index(2)], canon[idx.index(3)]];
        if degenerate_sample(&sample) {
            continue;
        }
        let Ok(h) = estimate_homography(&sample) else { continue };
        let Some(s) = score(h, &canon, t2) else { continue };
        if better(&s, &best) {
            let w = s.count as f64 / n as f64;
            let needed = if w >= 1.0 {
                0.0
            } else {
                (1.0 - params.confidence).ln() / (1.0 - w.powi(4)).ln()
            };
            if needed.is_finite() {
                limit = limit.min(needed.ceil().max(0.0) as usize);
            }
            best = Some(s);
        }
    }
    let mut best = best.ok_or(HomographyError::TooFewInliers(0))?;
    if best.count < 4 {
        return Err(HomographyError::TooFewInliers(best.count));
    }
    for _ in 0..5 {
        let inlier_pairs: Vec<Pair> = canon.iter().zip(&best.inliers).filter(|(_, &f)| f).map(|(p, _)| *p).collect();
        let Some(refit) = estimate_homography(&inlier_pairs).ok().and_then(|h| score(h, &canon, t2)) else { break };
        if refit.count < 4 {
            break;
        }
        let settled = refit.inliers == best.inliers;
        best = refit;
        if settled {
            break;
        }
    }

    let mut inliers = vec![false; n];
    for (k, &i) in order.iter().enumerate() {
        inliers[i] = best.inliers[k];
    }
    let mean_residual = pairs
        .iter()
        .zip(&inliers)
        .filter(|(_, &f)| f)
        .map(|(&p, _)| transfer_distance(&best.h, p))
        .sum::<f64>()
        / best.count as f64;
    Ok(RansacResult {
        h: best.h,
        inliers,
        n_inliers: best.count,
        mean_residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Point2> {
        (0..5).flat_map(|i| (0..4).map(move |j| [10.0 + 23.0 * i as f64, 7.0 + 31.0 * j as f64])).collect()
    }

    #[test]
    fn identity_and_translation() {
        let h = translation(3.0, -4.5);
        assert_eq!(apply_homography(&Homography::identity(), [2.0, 5.0]).unwrap(), [2.0, 5.0]);
        assert_eq!(apply_homography(&h, [2.0, 5.0]).unwrap(), [5.0, 0.5]);
    }

    #[test]
    fn point_at_infinity_is_an_error() {
        let h = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -2.0);
        assert!(matches!(apply_homography(&h, [2.0, 9.0]), Err(HomographyError::AtInfinity(_))));
    }

    #[test]
    fn translation_pairs_recover_translation() {
        let pairs: Vec<Pair> = grid().into_iter().map(|p| (p, [p[0] + 4.25, p[1] - 1.5])).collect();
        let r = ransac_homography(&pairs, &RansacParams::default()).unwrap();
        let want = translation(4.25, -1.5);
        assert!((r.h - want).abs().max() < 1e-6, "{}", r.h);
        assert_eq!(r.n_inliers, pairs.len());
    }

    #[test]
    fn identical_points_give_identity() {
        let pairs: Vec<Pair> = grid().into_iter().map(|p| (p, p)).collect();
        let r = ransac_homography(&pairs, &RansacParams::default()).unwrap();
        assert!((r.h - Homography::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pairs: Vec<Pair> = (0..6).map(|i| ([i as f64, 2.0 * i as f64], [i as f64, i as f64])).collect();
        assert_eq!(estimate_homography(&pairs), Err(HomographyError::Degenerate));
        assert!(ransac_homography(&pairs[..3], &RansacParams::default()).is_err());
    }

    #[test]
    fn adaptive_stop_on_clean_data() {
        let pairs: Vec<Pair> = grid().into_iter().map(|p| (p, [p[0] * 1.01, p[1] + 2.0])).collect();
        let r = ransac_homography(&pairs, &RansacParams::default()).unwrap();
        assert!(r.iterations < 10, "{} iterations", r.iterations);
    }
}
