use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use car::checkpoint::Checkpoint;
use car::obj::read_obj;
use car::records::{read_template, write_pose};
use car_core::geometry::Pose;

const SMALL: &str = r#"{
  "gen_data": {"subjects": 2, "subject": {"poses": 2, "image_size": 32, "body": {"resolution": 24}}},
  "canonical": {"steps": 4, "hidden": [32, 32], "skips": [], "encoder_channels": [4, 8],
                "counts": {"surface": 64, "near": 64, "uniform": 16}},
  "hypernet": {"steps": 2, "counts": {"surface": 64, "near": 64, "uniform": 16}},
  "reconstruct": {"canonical_res": 32, "refine": {
      "max_iters": 10, "reextract_every": 5, "window": 5, "extract_res": 24, "output_res": 32, "pool_size": 256,
      "counts": {"surface": 64, "near": 64, "uniform": 16},
      "prefit": {"steps": 5, "counts": {"surface": 64, "near": 64, "uniform": 16}}}},
  "evaluate": {"n_samples": 2000}
}"#;

fn car(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_car"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = car(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SMALL).unwrap();
    ok(dir.path(), &["--config", "c.json", "--out", "ds", "gen-data"]);
    let p = dir.path().to_path_buf();
    (dir, p)
}

#[test]
fn pipeline_emits_three_meshes() {
    let (_keep, d) = setup();
    ok(&d, &["--config", "c.json", "--out", "tr", "train-canonical", "--dataset", "ds"]);
    ok(&d, &["--config", "c.json", "--out", "tr", "train-hypernet", "--dataset", "ds"]);
    ok(
        &d,
        &[
            "--config", "c.json", "--out", "rc", "reconstruct", "--canonical", "tr/canonical.carw",
            "--hypernet", "tr/hypernet.carw", "--dataset", "ds", "--subject", "1", "--pose-index", "1",
        ],
    );
    for f in ["canonical.obj", "posed.obj", "refined.obj"] {
        assert!(!read_obj(&d.join("rc").join(f)).unwrap().faces.is_empty(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join("rc/refine_loss.csv")).unwrap();
    assert!(csv.starts_with("step,L_I,L_eik,L_o,total,lr\n"));
    assert_eq!(csv.lines().count(), 1 + 5 + 10);

    // loose-file inputs reproduce the dataset-entry run
    ok(
        &d,
        &[
            "--config", "c.json", "--out", "rc2", "reconstruct", "--canonical", "tr/canonical.carw",
            "--hypernet", "tr/hypernet.carw",
            "--front", "ds/subject_001/renders/pose_001_front.png",
            "--back", "ds/subject_001/renders/pose_001_back.png",
            "--template", "ds/subject_001/template.obj",
            "--pose", "ds/subject_001/poses/pose_001.json",
        ],
    );
    for f in ["canonical.obj", "refined.obj"] {
        assert_eq!(
            std::fs::read(d.join("rc").join(f)).unwrap(),
            std::fs::read(d.join("rc2").join(f)).unwrap()
        );
    }
}

#[test]
fn evaluate_same_mesh_is_zero() {
    let (_keep, d) = setup();
    let o = ok(
        &d,
        &[
            "--config", "c.json", "--out", "ev", "evaluate", "--pred", "ds/subject_000/clothed.obj",
            "--gt", "ds/subject_000/clothed.obj",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["chamfer", "p2s", "normal"] {
        assert!(v[k].as_f64().unwrap().abs() < 1e-12, "{k} = {}", v[k]);
    }
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn repose_rest_is_identity() {
    let (_keep, d) = setup();
    let t = read_template(&d.join("ds/subject_000/template.obj")).unwrap();
    write_pose(&d.join("rest.json"), &Pose::rest(t.n_joints())).unwrap();
    ok(
        &d,
        &[
            "--out", "rp", "repose", "--canonical", "ds/subject_000/clothed.obj", "--template",
            "ds/subject_000/template.obj", "--pose", "rest.json",
        ],
    );
    let a = read_obj(&d.join("ds/subject_000/clothed.obj")).unwrap();
    let b = read_obj(&d.join("rp/reposed.obj")).unwrap();
    assert_eq!(a.faces, b.faces);
    for (p, q) in a.vertices.iter().zip(&b.vertices) {
        assert!((*p - *q).norm() <= 1e-9);
    }
}

#[test]
fn gen_data_is_reproducible_and_seeded() {
    let (_keep, d) = setup();
    ok(&d, &["--config", "c.json", "--out", "ds2", "--threads", "1", "gen-data"]);
    ok(&d, &["--config", "c.json", "--out", "ds3", "--seed", "9", "gen-data"]);
    let f = "subject_001/renders/pose_001_front.png";
    let a = std::fs::read(d.join("ds").join(f)).unwrap();
    assert_eq!(a, std::fs::read(d.join("ds2").join(f)).unwrap());
    assert_ne!(a, std::fs::read(d.join("ds3").join(f)).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| car(d, args).status.code().unwrap();

    assert_eq!(code(&["evaluate", "--pred", "missing.obj", "--gt", "missing.obj"]), 4);
    assert_eq!(code(&["frobnicate"]), 2);

    std::fs::write(d.join("bad.json"), r#"{"evaluate": {"n_samples": 0}}"#).unwrap();
    let o = car(d, &["--config", "bad.json", "gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);

    std::fs::write(d.join("junk.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    assert_eq!(code(&["evaluate", "--pred", "junk.obj", "--gt", "junk.obj"]), 2);

    // a NaN parameter is a numeric failure
    let (_keep, ds) = setup();
    let mut bytes = Checkpoint::new("canonical", &serde_json::json!({}), vec![0.0, 1.0]).unwrap().to_bytes();
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    std::fs::write(ds.join("nan.carw"), bytes).unwrap();
    let o = car(&ds, &["reconstruct", "--canonical", "nan.carw", "--dataset", "ds"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = car(d, &["config-template"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["_notes"].is_object());
}
