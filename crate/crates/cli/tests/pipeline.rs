use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = nlos(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SCENE: &str = r#"{
  "primitives": [{"type": "sphere", "center": [0.0, 0.0, 0.5], "radius": 0.25, "albedo": 1.0}],
  "bounds": {"min": [-0.35, -0.35, 0.15], "max": [0.35, 0.35, 0.85]}
}"#;

const CONFIG: &str = r#"
iterations = 3
batch_size = 2
checkpoint_every = 0

[sampling]
theta = 8
phi = 8
eikonal_points = 32
free_points = 32

[network]
sdf_layers = 2
sdf_width = 16
reflectance_layers = 1
reflectance_width = 8
background_layers = 1
background_width = 8
"#;

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn simulate(dir: &Path, name: &str) -> Vec<u8> {
    let scene = p(dir, "scene.json");
    let out = p(dir, name);
    ok(&[
        "simulate",
        "--scene",
        &scene,
        "--out",
        &out,
        "--bins",
        "64",
        "--wall-res",
        "4",
        "--angles",
        "48",
    ]);
    fs::read(&out).unwrap()
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("scene.json"), SCENE).unwrap();
    fs::write(dir.join("train.toml"), CONFIG).unwrap();

    let first = simulate(dir, "tau.nlt");
    assert_eq!(simulate(dir, "again.nlt"), first, "simulate is not reproducible");
    assert!(dir.join("tau.nlt.manifest.json").exists());

    ok(&[
        "carve",
        "--transients",
        &p(dir, "tau.nlt"),
        "--scene",
        &p(dir, "scene.json"),
        "--out",
        &p(dir, "grid.carve"),
        "--res",
        "24",
    ]);
    ok(&[
        "train",
        "--transients",
        &p(dir, "tau.nlt"),
        "--carve",
        &p(dir, "grid.carve"),
        "--config",
        &p(dir, "train.toml"),
        "--out",
        &p(dir, "run"),
        "--seed",
        "3",
        "--threads",
        "1",
    ]);
    let log = fs::read_to_string(dir.join("run/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(dir.join("run/checkpoint.nlck").exists());

    let extract = |prefix: &str| {
        ok(&[
            "extract",
            "--checkpoint",
            &p(dir, "run"),
            "--out",
            &p(dir, prefix),
            "--res",
            "16",
            "--samples",
            "16",
            "--no-mask",
        ])
    };
    extract("ex");
    extract("ex2");
    for suffix in ["_depth.pfm", ".ply", "_camera.json"] {
        let a = fs::read(dir.join(format!("ex{suffix}"))).unwrap();
        let b = fs::read(dir.join(format!("ex2{suffix}"))).unwrap();
        assert_eq!(a, b, "extract output {suffix} differs between runs");
    }

    // A depth map compared with itself has zero error.
    let depth = p(dir, "ex_depth.pfm");
    let out = ok(&["eval", "--pred-depth", &depth, "--gt-depth", &depth]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let row = csv.lines().find(|l| l.starts_with("depth_cm,")).expect("depth row");
    let f: Vec<&str> = row.split(',').collect();
    assert_eq!(f[1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(f[2].parse::<f64>().unwrap(), 0.0);

    ok(&[
        "render-views",
        "--checkpoint",
        &p(dir, "run"),
        "--out-dir",
        &p(dir, "views"),
        "--views",
        "2",
        "--res",
        "8",
        "--samples",
        "8",
    ]);
    assert!(fs::read_dir(dir.join("views")).unwrap().count() >= 2);
}

#[test]
fn exit_codes() {
    assert_eq!(nlos(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(nlos(&["frobnicate"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let missing = p(tmp.path(), "missing.json");
    let out = p(tmp.path(), "x.nlt");
    assert_eq!(
        nlos(&["simulate", "--scene", &missing, "--out", &out]).status.code(),
        Some(3)
    );
    fs::write(tmp.path().join("bad.nlt"), b"not a transient file").unwrap();
    let bad = p(tmp.path(), "bad.nlt");
    let grid = p(tmp.path(), "g.carve");
    assert_eq!(
        nlos(&["carve", "--transients", &bad, "--bounds", "0,0,0,1,1,1", "--out", &grid])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(nlos(&["--help"]).status.code(), Some(0));
}
