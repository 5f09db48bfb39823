use otoar_service::session::{Session, CHECKPOINT_INTERVAL};
use otoar_testkit::scenes::write_bundle;
use otoar_vision::homography::apply_homography;
use otoar_vision::synthcam::{ScenarioParams, Trajectory};
use otoar_vision::TrackStatus;

#[test]
fn dots_shift_by_the_planted_translation() {
    let dir = tempfile::tempdir().unwrap();
    let params = ScenarioParams {
        frames: 31,
        trajectory: Trajectory::Translation { dx: 1.5, dy: 1.0 },
        ..ScenarioParams::default()
    };
    let b = write_bundle(dir.path(), 21, &params);
    let mut s = Session::create("t".into(), dir.path(), &b.case, &b.frames).unwrap();
    for c in b.scenario.picks() {
        s.set_pick(&c.name, c.uv).unwrap();
    }
    s.register().unwrap();
    let mut worst = 0.0f64;
    for n in [0, 10, 30] {
        let out = s.overlay_frame(n).unwrap();
        assert_eq!(out.state.status, TrackStatus::Tracking);
        assert_eq!(out.primitives.dots.len(), 6);
        for (l, p) in out.primitives.dots {
            let gt = apply_homography(&b.scenario.homographies[n], b.scenario.projections[l.index()]).unwrap();
            worst = worst.max((p[0] - gt[0]).hypot(p[1] - gt[1]));
        }
    }
    eprintln!("worst dot error {worst:.4} px");
    assert!(worst < 0.5);
}

#[test]
fn replay_from_checkpoint_matches_sequential_tracking() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(dir.path(), 22, &ScenarioParams { frames: 2 * CHECKPOINT_INTERVAL + 5, ..ScenarioParams::default() });
    let mut s = Session::create("t".into(), dir.path(), &b.case, &b.frames).unwrap();
    for c in b.scenario.picks() {
        s.set_pick(&c.name, c.uv).unwrap();
    }
    s.register().unwrap();
    let forward: Vec<_> = (0..s.frame_count).map(|n| s.state_at(n).unwrap()).collect();
    for n in [64, 3, 61, 59, 30, 0, 45] {
        assert_eq!(s.state_at(n).unwrap(), forward[n], "frame {n}");
    }
    let rev = s.revision;
    s.overlay_frame(12).unwrap();
    assert_eq!(s.revision, rev, "playback is not a mutation");
}
