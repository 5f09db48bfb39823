use nalgebra::{Matrix3x4, Rotation3, Vector3, Vector4};
use otoar_testkit::scenes::{coplanar_correspondences, exact_correspondences, random_camera};
use otoar_vision::registration::{
    clip_segment, dlt_resect, dlt_resect_with, project_matrix, Correspondence, RegistrationError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn exact_data_recovers_camera() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_camera(&mut rng);
        let n = rng.random_range(6..=12);
        let corrs = exact_correspondences(&mut rng, &p, n);
        let (cam, res) = dlt_resect(&corrs).unwrap();
        worst = res.iter().copied().fold(worst, f64::max);
        // same camera up to scale: held-out points project identically
        for c in exact_correspondences(&mut rng, &p, 5) {
            let q = cam.project(c.x).unwrap();
            worst = worst.max((q[0] - c.uv[0]).hypot(q[1] - c.uv[1]));
        }
    }
    assert!(worst < 1e-6, "worst residual {worst:e}");
}

#[test]
fn coplanar_points_are_degenerate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let p = random_camera(&mut rng);
        let corrs = coplanar_correspondences(&mut rng, &p, 10);
        assert!(matches!(dlt_resect(&corrs), Err(RegistrationError::Degenerate(_))));
    }
}

#[test]
fn too_few_or_non_finite_points_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_camera(&mut rng);
    let mut corrs = exact_correspondences(&mut rng, &p, 6);
    assert_eq!(dlt_resect(&corrs[..5]), Err(RegistrationError::InsufficientPoints(5)));
    corrs[3].uv[1] = f64::NAN;
    assert_eq!(dlt_resect(&corrs), Err(RegistrationError::NonFinite("P3".into())));
}

#[test]
fn result_is_invariant_to_similarity_of_the_ct_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let p = random_camera(&mut rng);
        let corrs = exact_correspondences(&mut rng, &p, 8);
        let rot = Rotation3::from_euler_angles(rng.random(), rng.random(), rng.random());
        let s = rng.random_range(0.5..2.0);
        let t = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0);
        let moved: Vec<Correspondence> = corrs
            .iter()
            .map(|c| {
                let y = s * (rot * Vector3::from(c.x)) + t;
                Correspondence { x: [y[0], y[1], y[2]], ..c.clone() }
            })
            .collect();
        let (a, _) = dlt_resect(&corrs).unwrap();
        let (b, _) = dlt_resect(&moved).unwrap();
        for (c, m) in corrs.iter().zip(&moved) {
            let (qa, qb) = (a.project(c.x).unwrap(), b.project(m.x).unwrap());
            assert!((qa[0] - qb[0]).abs() < 1e-9 && (qa[1] - qb[1]).abs() < 1e-9, "{qa:?} vs {qb:?}");
        }
    }
}

#[test]
fn normalization_is_no_worse_on_noisy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut with, mut without) = (0.0, 0.0);
    for _ in 0..100 {
        let p = random_camera(&mut rng);
        let mut corrs = exact_correspondences(&mut rng, &p, 10);
        for c in &mut corrs {
            c.uv[0] += noise.sample(&mut rng);
            c.uv[1] += noise.sample(&mut rng);
        }
        let mean = |r: Vec<f64>| r.iter().sum::<f64>() / r.len() as f64;
        with += mean(dlt_resect_with(&corrs, true).unwrap().1);
        without += mean(dlt_resect_with(&corrs, false).unwrap().1);
    }
    eprintln!("mean residual: normalized {:.4}, raw {:.4}", with / 100.0, without / 100.0);
    assert!(with <= without);
}

#[test]
fn projection_matches_scalar_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..1000 {
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = Matrix3x4::from_row_slice(&v);
        let x = [0; 3].map(|_| rng.random_range(-10.0..10.0));
        let w = v[8] * x[0] + v[9] * x[1] + v[10] * x[2] + v[11];
        match project_matrix(&p, x) {
            Ok(q) => {
                let u = (v[0] * x[0] + v[1] * x[1] + v[2] * x[2] + v[3]) / w;
                let y = (v[4] * x[0] + v[5] * x[1] + v[6] * x[2] + v[7]) / w;
                assert!((q[0] - u).abs() <= 1e-12 * u.abs().max(1.0));
                assert!((q[1] - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
            Err(RegistrationError::AtInfinity(_)) => {
                assert!((p * Vector4::new(x[0], x[1], x[2], 1.0))[2].abs() < 1e-6)
            }
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn clipped_endpoints_lie_on_the_border() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (w, h) = (320usize, 240usize);
    let mut clipped = 0;
    for _ in 0..2000 {
        let pt = |rng: &mut ChaCha8Rng| [rng.random_range(-200.0..520.0), rng.random_range(-200.0..440.0)];
        let seg = [pt(&mut rng), pt(&mut rng)];
        let inside = |p: [f64; 2]| (0.0..=319.0).contains(&p[0]) && (0.0..=239.0).contains(&p[1]);
        let Some(out) = clip_segment(seg, w, h) else { continue };
        for (orig, end) in seg.iter().zip(&out) {
            assert!(inside(*end), "{end:?}");
            if !inside(*orig) {
                clipped += 1;
                assert!(end[0] == 0.0 || end[0] == 319.0 || end[1] == 0.0 || end[1] == 239.0, "{end:?}");
            } else {
                assert_eq!(orig, end);
            }
        }
    }
    assert!(clipped > 100);
    assert_eq!(clip_segment([[-5.0, -5.0], [-1.0, 400.0]], w, h), None);
}
