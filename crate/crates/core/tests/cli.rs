use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn twinnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinnav"))
        .args(args)
        .env_remove("TWINNAV_THREADS")
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 1, "stdout: {text}");
    serde_json::from_str(text.trim()).expect("one-line JSON summary")
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sim.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small scene setup: three frames on a reduced camera plus a tiny orbit.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "trajectory": {"yaw_sweep": {"start_deg": -10.0, "stop_deg": 10.0, "step_deg": 10.0}},
        "noise": {"pixel_sigma": 0.5, "landmark_sigma_mm": 1.0, "marker_rot_sigma": 0.2, "marker_trans_sigma": 0.5, "seed": 4},
        "camera": {"fx": 100.0, "fy": 100.0, "cx": 40.0, "cy": 30.0, "width": 80, "height": 60},
        "render": {"near": 450.0, "far": 750.0, "samples": 32, "stratified": false, "background": [0.0, 0.0, 0.0], "seed": 0},
        "orbit": {"views": 4, "heldout": 2, "size": 16, "focal_px": 32.0, "samples": 16}
    });
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn metrics_identical_images_hit_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.ppm");
    let mut bytes = b"P6\n12 12\n255\n".to_vec();
    bytes.extend((0..12 * 12 * 3).map(|i| (i * 7 % 256) as u8));
    fs::write(&img, bytes).unwrap();
    let out = twinnav(&["metrics", "--ref", s(&img), "--test", s(&img)]);
    assert_eq!(out.status.code(), Some(0));
    let v = summary(&out);
    assert_eq!(v["psnr_db"], 99.0);
    assert_eq!(v["ssim"], 1.0);

    let report = dir.path().join("m.json");
    let out = twinnav(&["metrics", "--ref", s(&img), "--test", s(&img), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0));
    let written: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(written["psnr_db"], 99.0);
}

#[test]
fn usage_errors_exit_with_one() {
    let out = twinnav(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = twinnav(&["metrics", "--ref", "a.ppm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--test"));

    let out = twinnav(&["metrics", "--ref", "/nonexistent/a.ppm", "--test", "/nonexistent/b.ppm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ref"));

    let out = twinnav(&["--threads", "0", "metrics", "--ref", "a", "--test", "b"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn computation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ppm");
    let b = dir.path().join("b.ppm");
    fs::write(&a, b"P6\n12 12\n255\n".iter().copied().chain(std::iter::repeat_n(0, 432)).collect::<Vec<u8>>()).unwrap();
    fs::write(&b, b"P6\n13 12\n255\n".iter().copied().chain(std::iter::repeat_n(0, 468)).collect::<Vec<u8>>()).unwrap();
    let out = twinnav(&["metrics", "--ref", s(&a), "--test", s(&b)]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"trajectory": {"poses": []}}"#).unwrap();
    let out = twinnav(&["simulate", "--config", s(&bad), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "render", "mesh", "pose", "register", "simulate", "metrics"] {
        let out = twinnav(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn shipped_config_tracks_yaw_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = twinnav(&["simulate", "--config", s(&shipped_config()), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = summary(&out);
    assert!(v["yaw_rmse_deg"].as_f64().unwrap() < 1e-6);
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["frames"].as_array().unwrap().len(), 17);
    assert!(r["rmse_deg"]["yaw"].as_f64().unwrap() < 1e-6);
    assert_eq!(r["paper_fre_mm"], 3.56);
    assert!(r["config"]["trajectory"].is_object());
}

fn file_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(file_bytes(&p));
        } else {
            out.push((p.clone(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data");
    let out = twinnav(&["simulate", "--config", s(&cfg), "--out", s(&d.join("report.json")), "--dataset-dir", s(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["pose_000.json", "fiducials_tracking_002.json", "fiducials_model.json", "marker_001.json", "frame_002.ppm", "frames.json", "orbit/train.json", "orbit/heldout.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let inputs_before = file_bytes(&data);

    let out = twinnav(&["pose", "--correspondences", s(&data.join("pose_001.json")), "--out", s(&d.join("pose.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = summary(&out);
    assert!(v["yaw"].as_f64().unwrap().abs() < 2.0, "{v}");
    let pose: Value = serde_json::from_str(&fs::read_to_string(d.join("pose.json")).unwrap()).unwrap();
    assert_eq!(pose["matrix"].as_array().unwrap().len(), 16);

    let out = twinnav(&[
        "register",
        "--moving", s(&data.join("fiducials_tracking_000.json")),
        "--fixed", s(&data.join("fiducials_model.json")),
        "--out", s(&d.join("reg.json")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reg: Value = serde_json::from_str(&fs::read_to_string(d.join("reg.json")).unwrap()).unwrap();
    assert!(reg["fre_mm"].as_f64().unwrap() >= 0.0);

    let ckpt = d.join("field.tnrf");
    let out = twinnav(&[
        "--seed", "3", "--deterministic", "train",
        "--manifest", s(&data.join("orbit/train.json")),
        "--out", s(&ckpt), "--steps", "3", "--batch", "32", "--samples", "8",
        "--log", s(&d.join("loss.json")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"TNRF");

    let img = d.join("view.ppm");
    let out = twinnav(&["render", "--checkpoint", s(&ckpt), "--manifest", s(&data.join("orbit/heldout.json")), "--frame", "1", "--samples", "8", "--out", s(&img)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["width"], 16);

    let ply = d.join("mesh.ply");
    let out = twinnav(&["mesh", "--checkpoint", s(&ckpt), "--iso", "0.7", "--res", "12", "--out", s(&ply)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&ply).unwrap().starts_with("ply\nformat ascii 1.0\n"));

    let out = twinnav(&["simulate", "--config", s(&cfg), "--out", s(&d.join("report2.json")), "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(d.join("report2.json")).unwrap()).unwrap();
    assert_eq!(r["render"]["views"], 2);

    assert_eq!(file_bytes(&data), inputs_before, "inputs were modified");
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let data = d.join("data");
    assert_eq!(twinnav(&["simulate", "--config", s(&cfg), "--out", s(&d.join("r.json")), "--dataset-dir", s(&data)]).status.code(), Some(0));
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let ckpt = d.join(format!("f{threads}.tnrf"));
        let out = Command::new(env!("CARGO_BIN_EXE_twinnav"))
            .args(["--seed", "9", "train", "--manifest", s(&data.join("orbit/train.json")), "--out", s(&ckpt), "--steps", "2", "--batch", "300", "--samples", "8"])
            .env("TWINNAV_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        outputs.push(fs::read(&ckpt).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
