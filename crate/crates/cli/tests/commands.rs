use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tgp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = path(dir, name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_FIT: &str = "iterations = 4\nk = 1\nL = 2\nh = 4\nseed = 3\n";

fn data_rows(file: &str) -> Vec<Vec<f64>> {
    fs::read_to_string(file)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_constant_scene_writes_data_and_truth() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "s.txt", "flow = constant\nvelocity = 0.3, -0.2\nrows = 4\ncols = 3\ntimes = 2\n");
    let out = path(&dir, "obs.csv");
    ok(&["simulate", "--spec", &spec, "--out", &out]);
    assert_eq!(data_rows(&out).len(), 24);
    let truth = data_rows(&path(&dir, "obs.truth.csv"));
    assert_eq!(truth.len(), 24);
    assert!(truth.iter().all(|r| r[3] == 0.3 && r[4] == -0.2));
}

#[test]
fn identity_truth_is_zero() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "s.txt", "flow = identity\nrows = 3\ncols = 3\ntimes = 3\n");
    let out = path(&dir, "obs.csv");
    ok(&["simulate", "--spec", &spec, "--out", &out]);
    assert!(data_rows(&path(&dir, "obs.truth.csv")).iter().all(|r| r[3] == 0.0 && r[4] == 0.0));
}

fn pipeline(dir: &TempDir) -> Vec<Vec<u8>> {
    let spec = write(dir, "s.txt", "flow = rotation\nrate = 1\nrows = 4\ncols = 4\ntimes = 3\nseed = 9\n");
    let cfg = write(dir, "fit.txt", SMALL_FIT);
    let obs = path(dir, "obs.csv");
    let ckpt = path(dir, "model.ckpt");
    let vel = path(dir, "vel.csv");
    ok(&["simulate", "--spec", &spec, "--out", &obs]);
    ok(&["fit", "--data", &obs, "--config", &cfg, "--out", &ckpt]);
    ok(&["velocity", "--checkpoint", &ckpt, "--times", "0,0.5,1", "--grid", "3x5", "--out", &vel]);
    ["obs.csv", "obs.truth.csv", "model.ckpt", "model.report.txt", "vel.csv"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect()
}

#[test]
fn pipeline_is_byte_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let first = pipeline(&a);
    let second = pipeline(&b);
    assert_eq!(first, second);
    assert_eq!(data_rows(&path(&a, "vel.csv")).len(), 3 * 15);
}

#[test]
fn fit_reports_parameters_and_trace() {
    let dir = TempDir::new().unwrap();
    pipeline(&dir);
    let report = fs::read_to_string(dir.path().join("model.report.txt")).unwrap();
    for key in ["sigma2", "l0", "l1", "l2", "tau2", "nll_trace"] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key} ="))), "{key}");
    }
    let trace = report.lines().find(|l| l.starts_with("nll_trace")).unwrap();
    assert_eq!(trace.split_whitespace().count() - 2, 4);
}

#[test]
fn fit_normalizes_physical_coordinates() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("t,x1,x2,value\n");
    for (i, t) in [10.0, 12.0, 14.0].iter().enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                let v = ((i * 9 + r * 3 + c) as f64 * 0.7).sin();
                text.push_str(&format!("{t},{},{},{v}\n", 100.0 * r as f64, 50.0 * c as f64));
            }
        }
    }
    let obs = write(&dir, "obs.csv", &text);
    let cfg = write(&dir, "fit.txt", SMALL_FIT);
    let ckpt = path(&dir, "m.ckpt");
    let stdout = ok(&["fit", "--data", &obs, "--config", &cfg, "--out", &ckpt]);
    assert!(stdout.contains("normalized"), "{stdout}");
    let report = fs::read_to_string(dir.path().join("m.report.txt")).unwrap();
    let scale = report.lines().find_map(|l| l.strip_prefix("t_scale = ")).unwrap();
    assert_eq!(scale.parse::<f64>().unwrap(), 4.0);
}

#[test]
fn malformed_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let spec = write(&dir, "s.txt", "flow = identity\nrows = 3\ncols = 3\ntimes = 2\n");
    let obs = path(&dir, "obs.csv");
    ok(&["simulate", "--spec", &spec, "--out", &obs]);
    let cfg = write(&dir, "fit.txt", "iterations = 3\nlearnig_rate = 0.1\n");
    let ckpt = path(&dir, "m.ckpt");
    let out = tgp(&["fit", "--data", &obs, "--config", &cfg, "--out", &ckpt]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learnig_rate"), "{err}");
    assert_eq!(err.lines().count(), 1);
    assert!(!Path::new(&ckpt).exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(tgp(&["simulate"]).status.code(), Some(2));
    assert_eq!(tgp(&["velocity", "--checkpoint", "x", "--times", "2", "--grid", "2x2", "--out", "y"]).status.code(), Some(2));
    let missing = path(&dir, "nope.txt");
    let out = path(&dir, "o.csv");
    assert_eq!(tgp(&["simulate", "--spec", &missing, "--out", &out]).status.code(), Some(3));
    let spec = write(
        &dir,
        "bad.txt",
        "flow = identity\nrows = 1\ncols = 2\ntimes = 1\nl1 = 1e200\nl2 = 1e200\ntau2 = 1e-300\n",
    );
    let res = tgp(&["simulate", "--spec", &spec, "--out", &out]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!Path::new(&out).exists());
}

#[test]
fn identity_checkpoint_gives_zero_field() {
    let dir = TempDir::new().unwrap();
    let ckpt = write(
        &dir,
        "id.ckpt",
        "k = 1\nL = 2\nh = 2\nactivation = tanh\n\
         block.1.W1 = 2 2 0 0 0 0\nblock.1.w1 = 2 1 0 0\nblock.1.b1 = 2 1 0 0\n\
         block.1.W2 = 2 2 0 0 0 0\nblock.1.b2 = 2 1 0 0\n",
    );
    let vel = path(&dir, "v.csv");
    ok(&["velocity", "--checkpoint", &ckpt, "--times", "0.2,0.7", "--grid", "2x3", "--out", &vel]);
    let rows = data_rows(&vel);
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r[3] == 0.0 && r[4] == 0.0));
}

#[test]
fn constant_drift_checkpoint_gives_constant_field() {
    let dir = TempDir::new().unwrap();
    let ckpt = write(
        &dir,
        "c.ckpt",
        "k = 1\nL = 2\nh = 2\nactivation = tanh\n\
         block.1.W1 = 2 2 0 0 0 0\nblock.1.w1 = 2 1 0 0\nblock.1.b1 = 2 1 0 0\n\
         block.1.W2 = 2 2 0 0 0 0\nblock.1.b2 = 2 1 0.3 -0.2\n",
    );
    let vel = path(&dir, "v.csv");
    ok(&["velocity", "--checkpoint", &ckpt, "--times", "0,0.5,1", "--grid", "2x2", "--out", &vel]);
    for r in data_rows(&vel) {
        assert!((r[3] - 0.3).abs() < 1e-12 && (r[4] + 0.2).abs() < 1e-12, "{r:?}");
    }
}

fn texture(r: i64, c: i64) -> f64 {
    let p = 16.0;
    let (r, c) = (r as f64, c as f64);
    (2.0 * std::f64::consts::PI * r / p).sin() + (2.0 * std::f64::consts::PI * c / p).cos()
        + 0.5 * (2.0 * std::f64::consts::PI * (r + 2.0 * c) / p).sin()
}

fn frames_file(dir: &TempDir, shift: (i64, i64), constant: bool) -> String {
    let mut text = String::from("t,row,col,value\n");
    for k in 0..3i64 {
        for r in 0..24i64 {
            for c in 0..24i64 {
                let v = if constant { 1.0 } else { texture(r - shift.0 * k, c - shift.1 * k) };
                text.push_str(&format!("{},{r},{c},{v}\n", k as f64 * 0.5));
            }
        }
    }
    write(dir, "frames.csv", &text)
}

#[test]
fn dmw_recovers_shift() {
    let dir = TempDir::new().unwrap();
    let frames = frames_file(&dir, (2, 1), false);
    let cfg = write(&dir, "dmw.txt", "window_half = 3\nsearch_radius = 4\npixel_size = 0.1\n");
    let out = path(&dir, "v.csv");
    let stdout = ok(&["dmw", "--frames", &frames, "--config", &cfg, "--out", &out]);
    assert!(stdout.contains("0 skipped"), "{stdout}");
    let rows = data_rows(&out);
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!((r[3], r[4]), (2.0 * 0.1 / 0.5, 1.0 * 0.1 / 0.5));
    }
    let one = write(&dir, "one.txt", "window_half = 3\nsearch_radius = 4\npixel_size = 0.1\ntwo_sided = false\n");
    let out1 = path(&dir, "v1.csv");
    ok(&["dmw", "--frames", &frames, "--config", &one, "--out", &out1]);
    assert!(data_rows(&out1).iter().all(|r| (r[3], r[4]) == (rows[0][3], rows[0][4])));
}

#[test]
fn dmw_on_constant_frames_skips_everything() {
    let dir = TempDir::new().unwrap();
    let frames = frames_file(&dir, (0, 0), true);
    let cfg = write(&dir, "dmw.txt", "window_half = 3\nsearch_radius = 4\n");
    let out = path(&dir, "v.csv");
    let stdout = ok(&["dmw", "--frames", &frames, "--config", &cfg, "--out", &out]);
    // 24 − 2·7 = 10 sites per axis, one target frame
    assert!(stdout.contains("0 vectors from 100 sites, 100 skipped"), "{stdout}");
    assert!(data_rows(&out).is_empty());
}

#[test]
fn metrics_fixtures() {
    let dir = TempDir::new().unwrap();
    let truth = write(&dir, "t.csv", "t,x1,x2,v1,v2\n0,0,0,3,4\n0,1,0,3,4\n1,0,0,3,4\n1,1,0,3,4\n");
    let zero = write(&dir, "z.csv", "t,x1,x2,v1,v2\n0,0,0,0,0\n0,1,0,0,0\n1,0,0,0,0\n1,1,0,0,0\n");
    let same = ok(&["metrics", "--est", &truth, "--truth", &truth]);
    assert!(same.contains("RMSE       0\n"), "{same}");
    let z = ok(&["metrics", "--est", &zero, "--truth", &truth]);
    assert!(z.contains("RMS(truth) 5\n") && z.contains("RMS(est)   0\n") && z.contains("RMSE       5\n"), "{z}");

    let a = write(&dir, "a.csv", "t,x1,x2,v1,v2\n0,0,0,1,0\n0,1,0,0,0\n");
    let b = write(&dir, "b.csv", "t,x1,x2,v1,v2\n0,0,0,4,4\n0,1,0,0,0\n");
    let fixture = ok(&["metrics", "--est", &a, "--truth", &b]);
    assert!(fixture.contains("RMSE       3.53553"), "{fixture}");

    let moved = write(&dir, "m.csv", "t,x1,x2,v1,v2\n0,0,0,1,0\n0,2,0,0,0\n");
    let res = tgp(&["metrics", "--est", &moved, "--truth", &b]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sample 2"));
}
