//! scene, register and track.

use std::fs;
use std::path::Path;

use otoar_core::volume::load_volume;
use otoar_core::LandmarkSet;
use otoar_vision::frame::{count_frames, read_frame};
use otoar_vision::homography::RansacParams;
use otoar_vision::overlay::{encode_ppm, overlay_file_name, render_tracked};
use otoar_vision::registration::{dlt_resect, parse_camera, parse_correspondences};
use otoar_vision::synthcam::{generate_scenario, ScenarioParams, Trajectory};
use otoar_vision::tracking::Tracker;
use otoar_vision::{OverlaySpec, TrackParams, TrackState, TrackStatus};
use serde_json::json;

use crate::args::{RegisterArgs, SceneArgs, TrackArgs, TrajectoryKind};
use crate::error::{CliError, Result};
use crate::Ctx;

fn landmarks_mm(case: &Path) -> Result<LandmarkSet> {
    let c = load_volume(case)?;
    Ok(c.landmarks.map(|p| c.volume.voxel_to_mm(p)))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn scene(ctx: &Ctx, a: &SceneArgs) -> Result<()> {
    let trajectory = match a.trajectory {
        TrajectoryKind::Smooth => Trajectory::default(),
        TrajectoryKind::Still => Trajectory::Still,
        TrajectoryKind::Translation => Trajectory::Translation { dx: a.dx, dy: a.dy },
    };
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(CliError::usage(format!("noise must be a non-negative number, got {}", a.noise)));
    }
    let params = ScenarioParams {
        frames: a.frames,
        width: a.width,
        height: a.height,
        trajectory,
        noise_sigma: a.noise,
    };
    let mut m = ctx.manifest("scene");
    m.seed = Some(a.seed);
    m.config = json!({
        "frames": a.frames,
        "width": a.width,
        "height": a.height,
        "noise_sigma": a.noise,
        "trajectory": format!("{trajectory:?}"),
    });
    m.input("case", &a.case);
    m.output("dir", &a.out);
    m.write(Some(&a.out), ctx.manifest_path())?;

    let lm = landmarks_mm(&a.case)?;
    let scenario = generate_scenario(a.seed, &params, &lm)?;
    scenario.write(&a.out)?;
    outln!("wrote {} frames, groundtruth.json and picks.txt to {}", a.frames, a.out.display());
    Ok(())
}

pub fn register(ctx: &Ctx, a: &RegisterArgs) -> Result<()> {
    let mut m = ctx.manifest("register");
    m.input("picks", &a.picks);
    if let Some(o) = &a.out {
        m.output("camera", o);
    }
    m.write(None, ctx.manifest_path())?;

    let text = fs::read_to_string(&a.picks).map_err(|e| CliError::data(format!("{}: {e}", a.picks.display())))?;
    let corrs = parse_correspondences(&text).map_err(|e| CliError::data(format!("{}:{e}", a.picks.display())))?;
    let (camera, residuals) = dlt_resect(&corrs)?;
    out!("{camera}");
    for (c, r) in corrs.iter().zip(&residuals) {
        outln!("residual {} {r:.6e}", c.name);
    }
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    outln!("rms {rms:.6e}");
    if let Some(o) = &a.out {
        write(o, camera.to_string().as_bytes())?;
    }
    Ok(())
}

fn track_params(a: &TrackArgs) -> Result<TrackParams> {
    if !(a.ransac_threshold.is_finite() && a.ransac_threshold > 0.0) {
        return Err(CliError::usage(format!("RANSAC threshold must be positive, got {}", a.ransac_threshold)));
    }
    if !(a.ransac_confidence > 0.0 && a.ransac_confidence < 1.0) {
        return Err(CliError::usage(format!("RANSAC confidence must lie in (0, 1), got {}", a.ransac_confidence)));
    }
    if a.ransac_max_iters == 0 || a.max_features < 4 || a.min_inliers < 4 {
        return Err(CliError::usage(
            "max iterations must be at least 1; max features and min inliers at least 4",
        ));
    }
    Ok(TrackParams {
        ransac: RansacParams {
            threshold_px: a.ransac_threshold,
            confidence: a.ransac_confidence,
            max_iters: a.ransac_max_iters,
            seed: a.ransac_seed,
        },
        max_features: a.max_features,
        min_inliers: a.min_inliers,
    })
}

fn log_line(s: &TrackState) -> String {
    let inliers = s.inliers.map_or("-".to_string(), |n| n.to_string());
    let h: Vec<String> = s.h.transpose().iter().map(|v| format!("{v:.16e}")).collect();
    format!("{} {} {inliers} {:.6e} {}\n", s.frame, s.status.as_str(), s.mean_residual, h.join(" "))
}

pub fn track(ctx: &Ctx, a: &TrackArgs) -> Result<()> {
    let params = track_params(a)?;
    let mut m = ctx.manifest("track");
    m.seed = Some(a.ransac_seed);
    m.config = json!({
        "ransac_threshold_px": a.ransac_threshold,
        "ransac_confidence": a.ransac_confidence,
        "ransac_max_iters": a.ransac_max_iters,
        "ransac_seed": a.ransac_seed,
        "min_inliers": a.min_inliers,
        "max_features": a.max_features,
    });
    m.input("frames", &a.frames).input("camera", &a.camera).input("case", &a.case);
    m.output("dir", &a.out);
    m.write(Some(&a.out), ctx.manifest_path())?;

    let camera_text =
        fs::read_to_string(&a.camera).map_err(|e| CliError::data(format!("{}: {e}", a.camera.display())))?;
    let camera = parse_camera(&camera_text).map_err(|e| CliError::data(format!("{}:{e}", a.camera.display())))?;
    let lm = landmarks_mm(&a.case)?;
    let n = count_frames(&a.frames)?;
    if n == 0 {
        return Err(CliError::data(format!("{}: no frames", a.frames.display())));
    }
    let spec = OverlaySpec::default();
    let first = read_frame(&a.frames, 0)?;
    let mut tracker = Tracker::new(&first, params)?;
    let mut log = String::from("# frame status inliers mean_residual_px h00 h01 h02 h10 h11 h12 h20 h21 h22\n");
    let mut lost = 0;
    for i in 0..n {
        let frame = if i == 0 { first.clone() } else { read_frame(&a.frames, i)? };
        if i > 0 {
            tracker.step(&frame)?;
        }
        let s = &tracker.state;
        if s.status == TrackStatus::Lost {
            lost += 1;
        }
        log.push_str(&log_line(s));
        let img = render_tracked(&frame, &camera, &s.h, &lm, &spec);
        write(&a.out.join(overlay_file_name(i)), &encode_ppm(&img))?;
    }
    write(&a.out.join("track.log"), log.as_bytes())?;
    outln!("tracked {n} frames, {lost} lost, final status {}", tracker.state.status.as_str());
    Ok(())
}
