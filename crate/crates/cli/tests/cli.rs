use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gausskey_core::pgm::read_parts;
use gausskey_core::seqcsv::read_sequence_file;
use gausskey_core::state::GridCoords;

fn gausskey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gausskey")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = gausskey(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    gausskey(args).status.code().unwrap()
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Self(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn synth(dir: &Dir, name: &str, extra: &[&str]) -> String {
    let mut args = vec!["synth", "--out"];
    let out = dir.s(name);
    args.push(&out);
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn tiny_train(dir: &Dir, data: &str, out: &str) {
    ok(&[
        "train",
        "--data",
        data,
        "--n-inputs",
        "2",
        "--m-future",
        "2",
        "--steps",
        "4",
        "--layers",
        "1",
        "--hidden",
        "8",
        "--seed",
        "3",
        "--out",
        &dir.s(out),
    ]);
}

fn argmax(grid: ndarray::ArrayView2<'_, f64>) -> (usize, usize) {
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for (idx, &v) in grid.indexed_iter() {
        if v > best.1 {
            best = (idx, v);
        }
    }
    best.0
}

fn report_mean(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("mean,"));
    last.split(',').skip(1).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = Dir::new();
    for name in ["a", "b"] {
        synth(
            &dir,
            name,
            &["--kind", "lissajous", "--k", "5", "--t", "30", "--seed", "11", "--count", "3", "--noise", "0.01"],
        );
    }
    for i in 0..3 {
        let file = format!("seq_{i:04}.csv");
        assert_eq!(fs::read(dir.path("a").join(&file)).unwrap(), fs::read(dir.path("b").join(&file)).unwrap());
    }
    let c = synth(&dir, "c", &["--kind", "lissajous", "--k", "5", "--t", "30", "--seed", "12", "--count", "3"]);
    assert_ne!(
        fs::read(dir.path("a").join("seq_0000.csv")).unwrap(),
        fs::read(Path::new(&c).join("seq_0000.csv")).unwrap()
    );
}

#[test]
fn training_is_byte_deterministic() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--k", "2", "--t", "12", "--count", "3"]);
    tiny_train(&dir, &data, "m1.bin");
    tiny_train(&dir, &data, "m2.bin");
    assert_eq!(fs::read(dir.path("m1.bin")).unwrap(), fs::read(dir.path("m2.bin")).unwrap());
    assert_eq!(fs::read(dir.path("m1.bin.loss.csv")).unwrap(), fs::read(dir.path("m2.bin.loss.csv")).unwrap());
    let loss = fs::read_to_string(dir.path("m1.bin.loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,loss"));
    assert_eq!(loss.lines().count(), 5);
}

#[test]
fn pendulum_sequence_shape() {
    let dir = Dir::new();
    let out = synth(&dir, "p", &["--kind", "pendulum", "--k", "30", "--t", "120", "--covariance", "rotating"]);
    let seq = read_sequence_file(&Path::new(&out).join("seq_0000.csv")).unwrap();
    assert_eq!((seq.len(), seq.landmarks()), (120, 30));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["threads"], 1);
    assert_eq!(manifest["config"]["kind"], "pendulum");
}

#[test]
fn protocol_frame_counts() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--k", "3", "--t", "40", "--count", "2"]);
    tiny_train(&dir, &data, "m.bin");
    let seeds = format!("{data}/seq_0000.csv");
    for (n, h) in [(2, 28), (10, 30), (2, 98)] {
        let out = dir.s(&format!("p{n}_{h}.csv"));
        ok(&[
            "predict",
            "--ckpt",
            &dir.s("m.bin"),
            "--seeds",
            &seeds,
            "--n-seed",
            &n.to_string(),
            "--horizon",
            &h.to_string(),
            "--out",
            &out,
        ]);
        assert_eq!(read_sequence_file(Path::new(&out)).unwrap().len(), n + h);
        assert!(dir.path(&format!("p{n}_{h}.csv.manifest.json")).exists());
    }
}

#[test]
fn render_peaks_agree_across_sizes() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--kind", "lissajous", "--k", "4", "--t", "5", "--seed", "2"]);
    let csv = format!("{data}/seq_0000.csv");
    for size in ["64", "128"] {
        ok(&["render", "--input", &csv, "--size", size, "--out", &dir.s(&format!("r{size}"))]);
    }
    let (g64, g128) = (GridCoords::new(64, 64), GridCoords::new(128, 128));
    for t in 0..5 {
        let frame = format!("frame_{t:04}");
        let a = read_parts(&dir.path("r64").join(&frame)).unwrap();
        let b = read_parts(&dir.path("r128").join(&frame)).unwrap();
        for k in 0..4 {
            let (ra, ca) = argmax(a.index_axis(ndarray::Axis(0), k));
            let (rb, cb) = argmax(b.index_axis(ndarray::Axis(0), k));
            let (pa, pb) = (g64.point(ra, ca), g128.point(rb, cb));
            // One 64-grid pixel spans 2/64 normalized units.
            assert!((pa[0] - pb[0]).abs() <= 2.0 / 64.0 && (pa[1] - pb[1]).abs() <= 2.0 / 64.0, "frame {t} part {k}");
        }
    }
}

#[test]
fn fit_recovers_rendered_means() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--kind", "lissajous", "--k", "3", "--t", "4", "--seed", "5", "--render", "96"]);
    let out = dir.s("fit.csv");
    ok(&["fit", "--frames", &format!("{data}/frames_0000"), "--temperature", "0.05", "--out", &out]);
    let fitted = read_sequence_file(Path::new(&out)).unwrap();
    let truth = read_sequence_file(&Path::new(&data).join("seq_0000.csv")).unwrap();
    assert_eq!(fitted.len(), 4);
    for (f, t) in fitted.frames().iter().zip(truth.frames()) {
        for k in 0..3 {
            let (a, b) = (f.mu(k), t.mu(k));
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 0.02, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn fit_rejects_empty_directory() {
    let dir = Dir::new();
    fs::create_dir(dir.path("empty")).unwrap();
    let out = gausskey(&["fit", "--frames", &dir.s("empty"), "--out", &dir.s("x.csv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no frames"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--t", "12"]);
    assert_eq!(code(&["train", "--data", &data, "--n-inputs", "1", "--out", &dir.s("m.bin")]), 2);
    assert_eq!(code(&["interp", "--input", "x.csv", "--steps", "1", "--out", "y.csv"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
}

#[test]
fn thread_variable_is_validated() {
    let dir = Dir::new();
    let bad = Command::new(env!("CARGO_BIN_EXE_gausskey"))
        .args(["synth", "--out", &dir.s("x")])
        .env("GAUSSKEY_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let good = Command::new(env!("CARGO_BIN_EXE_gausskey"))
        .args(["synth", "--out", &dir.s("y")])
        .env("GAUSSKEY_THREADS", "4")
        .output()
        .unwrap();
    assert!(good.status.success());
    let base = synth(&dir, "z", &[]);
    assert_eq!(fs::read(dir.path("y/seq_0000.csv")).unwrap(), fs::read(Path::new(&base).join("seq_0000.csv")).unwrap());
}

#[test]
fn eval_of_identical_sequences() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--kind", "pendulum", "--k", "3", "--t", "6"]);
    let csv = format!("{data}/seq_0000.csv");
    ok(&["eval", "--pred", &csv, "--reference", &csv, "--out", &dir.s("r.csv")]);
    let mean = report_mean(&dir.path("r.csv"));
    assert_eq!(mean, vec![99.0, 1.0, 0.0]);
    let rows = fs::read_to_string(dir.path("r.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 6 + 1);
}

#[test]
fn interp_frame_counts_and_endpoints() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--kind", "lissajous", "--k", "2", "--t", "20"]);
    let csv = format!("{data}/seq_0000.csv");
    let src = read_sequence_file(Path::new(&csv)).unwrap();
    ok(&["interp", "--input", &csv, "--from", "3", "--to", "17", "--out", &dir.s("i30.csv")]);
    let seq = read_sequence_file(&dir.path("i30.csv")).unwrap();
    assert_eq!(seq.len(), 30);
    assert_eq!(seq.frames()[0], src.frames()[3]);
    assert_eq!(seq.frames()[29], src.frames()[17]);
    ok(&["interp", "--input", &csv, "--steps", "2", "--out", &dir.s("i2.csv")]);
    let seq = read_sequence_file(&dir.path("i2.csv")).unwrap();
    assert_eq!(seq.frames(), &[src.frames()[0].clone(), src.frames()[19].clone()]);
    assert_eq!(code(&["interp", "--input", &csv, "--to", "20", "--out", &dir.s("bad.csv")]), 1);
}

#[test]
fn mismatched_landmark_counts_fail() {
    let dir = Dir::new();
    let two = synth(&dir, "two", &["--k", "2", "--t", "12"]);
    let three = synth(&dir, "three", &["--k", "3", "--t", "12"]);
    tiny_train(&dir, &two, "m.bin");
    let out = gausskey(&[
        "predict",
        "--ckpt",
        &dir.s("m.bin"),
        "--seeds",
        &format!("{three}/seq_0000.csv"),
        "--horizon",
        "3",
        "--out",
        &dir.s("p.csv"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("K = 3"));
    let out = gausskey(&[
        "eval",
        "--pred",
        &format!("{two}/seq_0000.csv"),
        "--reference",
        &format!("{three}/seq_0000.csv"),
        "--out",
        &dir.s("r.csv"),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_train_predict_eval_pipeline() {
    let dir = Dir::new();
    let data = synth(&dir, "data", &["--k", "2", "--t", "30", "--count", "4", "--seed", "8"]);
    ok(&[
        "train",
        "--data",
        &data,
        "--n-inputs",
        "4",
        "--m-future",
        "4",
        "--steps",
        "10",
        "--layers",
        "2",
        "--hidden",
        "16",
        "--lr",
        "1e-3",
        "--out",
        &dir.s("m.bin"),
    ]);
    let seeds = format!("{data}/seq_0001.csv");
    ok(&[
        "predict",
        "--ckpt",
        &dir.s("m.bin"),
        "--seeds",
        &seeds,
        "--n-seed",
        "4",
        "--horizon",
        "26",
        "--out",
        &dir.s("p.csv"),
    ]);
    ok(&["eval", "--pred", &dir.s("p.csv"), "--reference", &seeds, "--skip", "4", "--out", &dir.s("r.csv")]);
    let mean = report_mean(&dir.path("r.csv"));
    assert!(mean[0] > 0.0 && mean[1] <= 1.0 && mean[2] >= 0.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path("m.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}
