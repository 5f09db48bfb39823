use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use otoar_core::netspec::{format_shape_table, NetworkSpec};
use sha2::{Digest, Sha256};

const GOLDEN: &str = "tests/golden/translation_overlay.sha256";

fn otoar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otoar"))
        .args(args)
        .env_remove("OTOAR_PORT")
        .env_remove("OTOAR_DATA_ROOT")
        .output()
        .expect("spawn otoar")
}

fn ok(args: &[&str]) -> String {
    let o = otoar(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Exit code plus the single stderr line.
fn failure(args: &[&str]) -> (i32, String) {
    let o = otoar(args);
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    (o.status.code().unwrap(), err.trim_end().to_string())
}

struct Pipeline {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    /// synth, then a 20-frame translation scene, then register.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["synth", "--out", s(&root.join("data")), "--cases", "1", "--seed", "0"]);
        ok(&[
            "scene",
            "--case",
            s(&root.join("data/case_000.json")),
            "--out",
            s(&root.join("scene")),
            "--trajectory",
            "translation",
            "--dx",
            "1.5",
            "--dy",
            "-0.5",
            "--frames",
            "20",
        ]);
        let reg = ok(&["register", "--picks", s(&root.join("scene/picks.txt")), "--out", s(&root.join("camera.txt"))]);
        let rms: f64 = reg.lines().last().unwrap().strip_prefix("rms ").unwrap().parse().unwrap();
        assert!(rms < 1e-6, "{reg}");
        Self { _dir: dir, root }
    }

    fn track(&self, out: &str) -> PathBuf {
        let out = self.root.join(out);
        let r = self.root.as_path();
        let stdout = ok(&[
            "track",
            "--frames",
            s(&r.join("scene/frames")),
            "--camera",
            s(&r.join("camera.txt")),
            "--case",
            s(&r.join("data/case_000.json")),
            "--out",
            s(&out),
        ]);
        assert_eq!(stdout.trim(), "tracked 20 frames, 0 lost, final status Tracking");
        out
    }
}

#[test]
fn final_overlay_matches_the_golden_hash() {
    let p = Pipeline::new();
    let out = p.track("track");
    let last = fs::read(out.join("overlay_000019.ppm")).unwrap();
    let got = hex::encode(Sha256::digest(&last));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("OTOAR_BLESS").is_some() {
        fs::write(&golden, format!("{got}\n")).unwrap();
    }
    let want = fs::read_to_string(&golden).expect("golden hash; regenerate with OTOAR_BLESS=1");
    assert_eq!(got, want.trim());

    // a second run and a replay of its manifest give the same bytes
    let again = p.track("track2");
    assert_eq!(fs::read(again.join("overlay_000019.ppm")).unwrap(), last);
    let log = fs::read_to_string(out.join("track.log")).unwrap();
    assert_eq!(log, fs::read_to_string(again.join("track.log")).unwrap());
    assert_eq!(log.lines().count(), 21);
    fs::remove_dir_all(&out).unwrap();
    ok(&["replay", s(&again.join("manifest.json"))]);
    assert!(!out.exists());
    assert_eq!(fs::read(again.join("overlay_000019.ppm")).unwrap(), last);
}

#[test]
fn help_lists_the_defaults() {
    let train = ok(&["train", "--help"]);
    for d in ["[default: 3500]", "[default: 5]", "[default: 0.0005]", "[default: 0.2]", "[default: 200,200,100]"] {
        assert!(train.contains(d), "train help lacks {d}:\n{train}");
    }
    let track = ok(&["track", "--help"]);
    for d in ["[default: 2.0]", "[default: 0.995]", "[default: 1000]", "[default: 12]", "[default: 500]"] {
        assert!(track.contains(d), "track help lacks {d}:\n{track}");
    }
    let serve = ok(&["serve", "--help"]);
    assert!(serve.contains("OTOAR_PORT") && serve.contains("OTOAR_DATA_ROOT"), "{serve}");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let (code, msg) = failure(&["train", "--data", "x"]);
    assert_eq!(code, 1);
    assert!(msg.starts_with("error[usage]: "), "{msg}");
    let (code, msg) = failure(&["bogus"]);
    assert_eq!((code, msg.starts_with("error[usage]: ")), (1, true), "{msg}");
    let (code, _) = failure(&["synth", "--out", s(d), "--dims", "8,8"]);
    assert_eq!(code, 1);
    let (code, _) = failure(&["--threads", "0", "synth", "--out", s(d)]);
    assert_eq!(code, 1);

    let (code, msg) = failure(&["register", "--picks", s(&d.join("missing.txt"))]);
    assert_eq!(code, 2);
    assert!(msg.starts_with("error[data]: ") && msg.contains("missing.txt"), "{msg}");
    fs::write(d.join("bad.txt"), "RWN 1 2 3 4\n").unwrap();
    let (code, msg) = failure(&["register", "--picks", s(&d.join("bad.txt"))]);
    assert_eq!(code, 2);
    assert!(msg.contains("line 1"), "{msg}");

    // six points on one image line
    let collinear: String = (0..6).map(|i| format!("P{i} {i} {} {} {} 50\n", i * i, i % 2, 10 * i)).collect();
    fs::write(d.join("collinear.txt"), collinear).unwrap();
    let (code, msg) = failure(&["register", "--picks", s(&d.join("collinear.txt"))]);
    assert_eq!(code, 3);
    assert!(msg.starts_with("error[numeric]: "), "{msg}");
}

#[test]
fn manifest_is_written_before_work_starts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("track");
    let (code, _) = failure(&[
        "track",
        "--frames",
        s(&dir.path().join("none")),
        "--camera",
        s(&dir.path().join("none.txt")),
        "--case",
        s(&dir.path().join("none.json")),
        "--out",
        s(&out),
        "--ransac-seed",
        "9",
    ]);
    assert_eq!(code, 2);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "track");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["ransac_threshold_px"], 2.0);
    assert_eq!(m["threads"], 1);
}

#[test]
fn netspec_check_prints_the_inferred_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::reference_with_dropout(32, 32, 16, 0.2);
    let path = dir.path().join("net.txt");
    fs::write(&path, spec.serialize()).unwrap();
    let want = format_shape_table(&spec.infer_shapes().unwrap());
    assert_eq!(ok(&["netspec-check", s(&path)]), want);
    assert_eq!(ok(&["netspec-check", "--input-dims", "32,32,16"]), want);

    fs::write(&path, "I(8,8,8,1)\nD(0.2) O(21) FC(5)").unwrap();
    let (code, msg) = failure(&["netspec-check", s(&path)]);
    assert_eq!(code, 2);
    assert!(msg.ends_with("net.txt:2:8: Output must be final layer"), "{msg}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", s(&d.join("data")), "--cases", "6", "--seed", "2"]);
    fs::write(d.join("cfg.json"), r#"{"epochs": 7, "batch_size": 3, "folds": 3}"#).unwrap();
    let run = d.join("run");
    let stdout = ok(&[
        "train",
        "--data",
        s(&d.join("data")),
        "--out",
        s(&run),
        "--desk-scale",
        "--config",
        s(&d.join("cfg.json")),
        "--epochs",
        "1",
        "--folds",
        "2",
    ]);
    assert!(stdout.contains("over 6 cases"), "{stdout}");
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!((cfg["epochs"].as_u64(), cfg["batch_size"].as_u64(), cfg["folds"].as_u64()), (Some(1), Some(3), Some(2)));
    assert_eq!(cfg["input_dims"], serde_json::json!([32, 32, 16]));
    for f in ["manifest.json", "folds.json", "report.json", "report.txt", "fold_0/model.ckpt", "fold_1/loss.log"] {
        assert!(run.join(f).exists(), "{f}");
    }

    // eval reproduces the report; predict reads a fold checkpoint
    let eval = d.join("eval");
    ok(&["eval", "--data", s(&d.join("data")), "--run", s(&run), "--out", s(&eval)]);
    assert_eq!(fs::read(run.join("report.json")).unwrap(), fs::read(eval.join("report.json")).unwrap());
    let pred = ok(&["predict", "--checkpoint", s(&run.join("fold_0/model.ckpt")), "--case", s(&d.join("data/case_000.json"))]);
    let pred: serde_json::Value = serde_json::from_str(&pred).unwrap();
    assert_eq!(pred["case"], "case_000");
    assert_eq!(pred["voxel"].as_object().unwrap().len(), 7);

    fs::write(d.join("cfg.json"), r#"{"epoch": 7}"#).unwrap();
    let (code, msg) = failure(&["train", "--data", s(&d.join("data")), "--out", s(&run), "--config", s(&d.join("cfg.json"))]);
    assert_eq!(code, 1);
    assert!(msg.contains("unknown config key `epoch`"), "{msg}");
}
