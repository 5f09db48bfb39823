//! Random cameras and planted homography problems with known answers.

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Unit, Vector3};
use otoar_vision::homography::{apply_homography, Homography, Pair};
use otoar_vision::registration::Correspondence;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Finite camera `K [R | −R C]` looking at the origin from 100–200 mm.
pub fn random_camera(rng: &mut impl Rng) -> Matrix3x4<f64> {
    let f = rng.random_range(500.0..1500.0);
    let k = Matrix3::new(
        f,
        rng.random_range(-2.0..2.0),
        rng.random_range(250.0..390.0),
        0.0,
        f * rng.random_range(0.95..1.05),
        rng.random_range(190.0..290.0),
        0.0,
        0.0,
        1.0,
    );
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let r = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI)).into_inner();
    // viewing direction is the third row of R
    let dist = rng.random_range(100.0..200.0);
    let c = -dist * r.row(2).transpose();
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &(-r * c));
    k * rt
}

fn project(p: &Matrix3x4<f64>, x: [f64; 3]) -> [f64; 2] {
    let v = p * nalgebra::Vector4::new(x[0], x[1], x[2], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// `n` exact correspondences from points uniform in a 20 mm cube.
pub fn exact_correspondences(rng: &mut impl Rng, p: &Matrix3x4<f64>, n: usize) -> Vec<Correspondence> {
    (0..n)
        .map(|i| {
            let x = [0; 3].map(|_| rng.random_range(-10.0..10.0));
            Correspondence {
                name: format!("P{i}"),
                x,
                uv: project(p, x),
            }
        })
        .collect()
}

/// Points on the plane `z = 0.3 x − 0.2 y + 1`.
pub fn coplanar_correspondences(rng: &mut impl Rng, p: &Matrix3x4<f64>, n: usize) -> Vec<Correspondence> {
    (0..n)
        .map(|i| {
            let (a, b) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let x = [a, b, 0.3 * a - 0.2 * b + 1.0];
            Correspondence {
                name: format!("P{i}"),
                x,
                uv: project(p, x),
            }
        })
        .collect()
}

/// Moderate projective warp of a 640×480 frame.
pub fn random_homography(rng: &mut impl Rng) -> Homography {
    let (s, th) = (rng.random_range(0.8..1.2), rng.random_range(-0.5..0.5f64));
    Matrix3::new(
        s * th.cos(),
        -s * th.sin(),
        rng.random_range(-40.0..40.0),
        s * th.sin(),
        s * th.cos(),
        rng.random_range(-40.0..40.0),
        rng.random_range(-2e-4..2e-4),
        rng.random_range(-2e-4..2e-4),
        1.0,
    )
}

pub struct PlantedPairs {
    pub truth: Homography,
    pub pairs: Vec<Pair>,
    /// `true` for planted inliers.
    pub planted: Vec<bool>,
}

/// `n` pairs of which `outlier_fraction` have uniformly random destinations;
/// inliers carry Gaussian noise of `sigma` px.
pub fn planted_pairs(rng: &mut impl Rng, n: usize, outlier_fraction: f64, sigma: f64) -> PlantedPairs {
    let truth = random_homography(rng);
    let n_out = (n as f64 * outlier_fraction).round() as usize;
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut pairs = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    for i in 0..n {
        let p = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
        if i < n - n_out {
            let q = apply_homography(&truth, p).expect("finite warp");
            pairs.push((p, [q[0] + noise.sample(rng), q[1] + noise.sample(rng)]));
            planted.push(true);
        } else {
            pairs.push((p, [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]));
            planted.push(false);
        }
    }
    PlantedPairs { truth, pairs, planted }
}

/// A synthetic case and a camera sequence of it, written under one root in
/// the layout the service and the CLI read.
pub struct Bundle {
    /// Case sidecar, relative to the root.
    pub case: String,
    /// Frame directory, relative to the root.
    pub frames: String,
    pub scenario: otoar_vision::synthcam::Scenario,
}

pub fn write_bundle(root: &std::path::Path, seed: u64, params: &otoar_vision::synthcam::ScenarioParams) -> Bundle {
    let cases = otoar_core::synth::synth_generate(1, [32, 32, 16], [0.3, 0.3, 0.6], seed).expect("synthetic case");
    let case = &cases[0];
    otoar_core::volume::save_volume(case, &root.join("cases"), "case0").expect("write case");
    let mm = case.landmarks.map(|p| case.volume.voxel_to_mm(p));
    let scenario = otoar_vision::synthcam::generate_scenario(seed, params, &mm).expect("scenario");
    scenario.write(&root.join("scene")).expect("write scene");
    Bundle {
        case: "cases/case0.json".into(),
        frames: "scene/frames".into(),
        scenario,
    }
}
