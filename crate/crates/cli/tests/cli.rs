use std::path::Path;
use std::process::{Command, Output};

fn rvf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvf")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = rvf(&["eval", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(rvf(&[]).status.code(), Some(1));
}

#[test]
fn help_lists_every_subcommand() {
    let o = rvf(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["simulate", "encode-radar", "project", "train", "infer", "eval", "gradcheck", "ablate-fusion"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn perfect_detections_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(rvf(&["simulate", "--frames", "10", "--out", p(&data)]).status.success());
    let ann_path = data.join("annotations_train.json");
    let ann: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ann_path).unwrap()).unwrap();
    let dets: Vec<serde_json::Value> = ann["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let mut d = a.clone();
            d["score"] = 1.0.into();
            d
        })
        .collect();
    assert!(!dets.is_empty());
    let dets_path = dir.path().join("dets.json");
    std::fs::write(&dets_path, serde_json::to_string(&dets).unwrap()).unwrap();
    let o = rvf(&["eval", "--dets", p(&dets_path), "--ann", p(&ann_path)]);
    assert!(o.status.success());
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let values: Vec<&str> = row.split_whitespace().skip(1).collect();
    assert_eq!(values[0], "100.0", "{row}");
    assert_eq!(values[1], "100.0", "{row}");
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(rvf(&["eval", "--dets", p(&missing), "--ann", p(&missing)]).status.code(), Some(2));
    let garbage = dir.path().join("w.rvpw");
    std::fs::write(&garbage, b"RVPW\x01").unwrap();
    let o = rvf(&["infer", "--weights", p(&garbage), "--data", p(dir.path()), "--out", p(&dir.path().join("o.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(rvf(&["simulate", "--frames", "3", "--out", p(&dir.path().join("x"))]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(rvf(&["simulate", "--frames", "10", "--out", p(&data)]).status.success());
    let cfg = dir.path().join("t.json");
    std::fs::write(&cfg, r#"{"lr": 1e7, "iterations": 40, "batch_pairs": 1, "model": {"input_size": 64, "width_mult": 0.0625}}"#).unwrap();
    let o = rvf(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&dir.path().join("w.rvpw"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn project_and_encode_radar() {
    let dir = tempfile::tempdir().unwrap();
    let rig = dir.path().join("rig.json");
    std::fs::write(
        &rig,
        r#"{"radar_pose": {"position": [0, 0, 1], "ypr_deg": [0, 0, 0]},
            "camera_pose": {"position": [0, 0, 1], "ypr_deg": [0, 0, 0]},
            "intrinsics": {"f": 0.004, "dx": 0.00001, "dy": 0.00001, "x_p0": 320, "y_p0": 240, "width": 640, "height": 480}}"#,
    )
    .unwrap();
    let o = rvf(&["project", "--rig", p(&rig), "--rho", "10", "--theta-deg", "0", "--phi-deg", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "pixel 320.000000 240.000000 depth 10.000000 in_frame true");

    let frame = dir.path().join("f.json");
    std::fs::write(&frame, r#"{"t": 0.0, "detections": [{"rho": 10, "theta_deg": 0, "phi_deg": 0, "v": 0}]}"#).unwrap();
    let png = dir.path().join("r.png");
    let o = rvf(&["encode-radar", "--in", p(&frame), "--rig", p(&rig), "--out", p(&png), "--splat", "0"]);
    assert!(o.status.success());
    let img = rvf_core::image::RgbImage::read_png(&png).unwrap();
    assert_eq!(img.count_nonzero(), 1);
    assert_eq!(img.get(320, 240), rvf_core::radar_imaging::quantize_rgb(10.0, 0.0));
}

#[test]
fn gradcheck_passes() {
    let o = rvf(&["gradcheck", "--probes", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
