use std::path::Path;
use std::process::{Command, Output};

use groundmesh::depth::{BinaryMask, CameraIntrinsics, DepthImage};
use groundmesh::{PointCloud, Vec3};
use groundmesh_bench::depth_io::{read_depth, write_depth, write_mask};
use groundmesh_bench::ply::{read_mesh, write_cloud, PlyFormat};
use groundmesh_bench::transform_json::read_transform;

fn groundmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundmesh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_register_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = groundmesh(&[
        "scene", "synth", "--shape", "union", "--noise", "0.00075", "--partial", "--seed", "7", "--out", s(&scene),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["source.ply", "target.ply", "gt_transform.json", "scene.json"] {
        assert!(scene.join(f).exists(), "{f} missing");
    }

    let est = dir.path().join("est.json");
    let out = groundmesh(&[
        "register",
        "--source",
        s(&scene.join("source.ply")),
        "--target",
        s(&scene.join("target.ply")),
        "--seed",
        "3",
        "--out",
        s(&est),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let est_t = read_transform(&est).unwrap();
    let gt_t = read_transform(&scene.join("gt_transform.json")).unwrap();
    assert!((est_t.translation() - gt_t.translation()).norm() < 0.005);
    assert!((est_t.scale() / gt_t.scale() - 1.0).abs() < 0.02);

    // The registered mesh against the ground-truth pose.
    let mesh = read_mesh(&scene.join("source.ply")).unwrap();
    let posed = dir.path().join("posed.ply");
    groundmesh_bench::ply::write_mesh(&posed, &groundmesh::apply_transform(&mesh, &est_t), PlyFormat::Ascii).unwrap();
    let out = groundmesh(&[
        "eval",
        "--pred",
        s(&posed),
        "--gt",
        s(&scene.join("source.ply")),
        "--gt-transform",
        s(&scene.join("gt_transform.json")),
        "--samples",
        "3000",
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["fscore_pct"].as_f64().unwrap() > 99.0);
    assert!(report["chamfer_mm"].as_f64().unwrap() < 3.0);
}

#[test]
fn unregistrable_target_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    assert_eq!(code(&groundmesh(&["scene", "synth", "--shape", "sphere", "--out", s(&scene)])), 0);
    // Points scattered through a cube explain no surface.
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let pts: Vec<Vec3> = (0..400).map(|_| Vec3::new(next(), next(), next() + 2.0) * 0.3).collect();
    let target = dir.path().join("noise.ply");
    write_cloud(&target, &PointCloud::new(pts).unwrap(), PlyFormat::BinaryLittleEndian).unwrap();
    let out = groundmesh(&[
        "register",
        "--source",
        s(&scene.join("source.ply")),
        "--target",
        s(&target),
        "--out",
        s(&dir.path().join("t.json")),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes_for_bad_input_and_io() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag value.
    assert_eq!(code(&groundmesh(&["decode", "--shape", "cone", "--out", "x.ply"])), 2);
    // Missing input file.
    let missing = groundmesh(&[
        "register",
        "--source",
        "/nonexistent/a.ply",
        "--target",
        "/nonexistent/b.ply",
        "--out",
        s(&dir.path().join("t.json")),
    ]);
    assert_eq!(code(&missing), 4);
    // Malformed PLY.
    let bad = dir.path().join("bad.ply");
    std::fs::write(&bad, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n").unwrap();
    let out = groundmesh(&["register", "--source", s(&bad), "--target", s(&bad), "--out", s(&dir.path().join("t.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.ply"));
    // Reflection in the transform file.
    let mesh = dir.path().join("m");
    assert_eq!(code(&groundmesh(&["scene", "synth", "--shape", "box", "--out", s(&mesh)])), 0);
    let tf = dir.path().join("mirror.json");
    std::fs::write(&tf, r#"{"scale": 1, "rotation": [1,0,0, 0,1,0, 0,0,-1], "translation": [0,0,0]}"#).unwrap();
    let src = mesh.join("source.ply");
    assert_eq!(code(&groundmesh(&["eval", "--pred", s(&src), "--gt", s(&src), "--gt-transform", s(&tf)])), 2);
    // Invalid numeric arguments.
    assert_eq!(code(&groundmesh(&["decode", "--shape", "sphere", "--resolution", "1", "--out", s(&dir.path().join("d.ply"))])), 2);
    assert_eq!(code(&groundmesh(&["bench", "--suite", "nope", "--out", s(&dir.path().join("b"))])), 2);
    // Help is not an error.
    assert_eq!(code(&groundmesh(&["--help"])), 0);
}

#[test]
fn decode_writes_mesh_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("torus.ply");
    let stats = dir.path().join("stats.json");
    let out = groundmesh(&["decode", "--shape", "torus", "--resolution", "96", "--out", s(&mesh), "--stats", s(&stats)]);
    assert_eq!(code(&out), 0);
    let m = read_mesh(&mesh).unwrap();
    assert!(m.is_closed());
    assert_eq!(m.euler_characteristic(), 0);
    let st: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(st["dense_equivalent"].as_u64().unwrap(), 97u64.pow(3));
    assert!(st["reduction"].as_f64().unwrap() > 0.5);
    assert_eq!(st["faces"].as_u64().unwrap(), m.faces().len() as u64);
}

#[test]
fn depth_align_scales_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (6, 4);
    let intr = CameraIntrinsics::new(500.0, 500.0, 3.0, 2.0, w, h).unwrap();
    let pred: Vec<f64> = (0..w * h).map(|i| if i == 5 { 0.0 } else { 0.5 + 0.01 * i as f64 }).collect();
    let sensor: Vec<f64> = pred.iter().enumerate().map(|(i, v)| if i == 7 { 0.0 } else { 2.0 * v }).collect();
    let paths = ["sensor.raw", "pred.raw", "mask.raw", "out.raw"].map(|n| dir.path().join(n));
    write_depth(&paths[0], &DepthImage::new(w, h, sensor).unwrap(), &intr).unwrap();
    write_depth(&paths[1], &DepthImage::new(w, h, pred.clone()).unwrap(), &intr).unwrap();
    write_mask(&paths[2], &BinaryMask::filled(w, h, true)).unwrap();
    let out = groundmesh(&[
        "depth", "align", "--sensor", s(&paths[0]), "--pred", s(&paths[1]), "--mask", s(&paths[2]), "--out", s(&paths[3]),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scale: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((scale - 2.0).abs() < 1e-6);
    let (metric, back) = read_depth(&paths[3]).unwrap();
    assert_eq!(back, intr);
    // Holes in the prediction stay holes; sensor holes are filled.
    assert_eq!(metric.values()[5], 0.0);
    assert!((metric.values()[7] - 2.0 * pred[7]).abs() < 1e-5);

    // A mask of the wrong size is an input error.
    write_mask(&paths[2], &BinaryMask::filled(3, 3, true)).unwrap();
    let out = groundmesh(&[
        "depth", "align", "--sensor", s(&paths[0]), "--pred", s(&paths[1]), "--mask", s(&paths[2]), "--out", s(&paths[3]),
    ]);
    assert_eq!(code(&out), 2);
}
