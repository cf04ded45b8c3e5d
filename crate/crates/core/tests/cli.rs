use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ppfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppfit"))
        .args(args)
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    ppfit(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn bench_data(dir: &Path) -> PathBuf {
    let data = dir.join("d.csv");
    assert_eq!(
        code(&[
            "gen-data",
            "--n",
            "100",
            "--seed",
            "1",
            "--sigma",
            "0.1",
            "--out",
            s(&data)
        ]),
        0
    );
    data
}

#[test]
fn gen_data_writes_header_and_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bench_data(tmp.path());
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y"));
    assert_eq!(lines.count(), 100);
}

#[test]
fn fit_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bench_data(tmp.path());
    let out = tmp.path().join("fit.json");
    let plot = tmp.path().join("plot.csv");
    let before = std::fs::read(&data).unwrap();

    let res = ppfit(&[
        "fit",
        "--data",
        s(&data),
        "--alpha",
        "0.10",
        "--beta",
        "0.45",
        "--out",
        s(&out),
        "--plot-out",
        s(&plot),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(std::fs::read(&data).unwrap(), before);

    let json = read_json(&out);
    assert_eq!(json["version"], "1");
    let correction = &json["correction"];
    let scale = correction["scale"].as_f64().unwrap();
    assert!(correction["max_abs_delta_after"].as_f64().unwrap() <= 1e-9 * scale);
    let lck = json["losses"]["lck"].as_f64().unwrap();
    assert!(lck <= (1e-9 * scale).powi(2), "lck {lck}");
    assert_eq!(json["coeffs"].as_array().unwrap().len(), 16);

    let rows = std::fs::read_to_string(&plot).unwrap();
    assert!(rows.starts_with("x,f,f1,f2\n"));
    assert_eq!(rows.lines().count(), 1 + 16 * 50);
}

#[test]
fn invalid_weights_are_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bench_data(tmp.path());
    let out = tmp.path().join("fit.json");
    assert_eq!(
        code(&[
            "fit",
            "--data",
            s(&data),
            "--alpha",
            "0.6",
            "--beta",
            "0.6",
            "--out",
            s(&out)
        ]),
        1
    );
    assert!(!out.exists());
}

#[test]
fn degree_too_low_for_projection_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bench_data(tmp.path());
    let out = tmp.path().join("fit.json");
    assert_eq!(
        code(&[
            "fit",
            "--data",
            s(&data),
            "--degree",
            "4",
            "--k",
            "2",
            "--out",
            s(&out)
        ]),
        1
    );
}

#[test]
fn malformed_inputs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n0,1\n0.5,oops\n").unwrap();
    let out = tmp.path().join("o.json");
    let res = ppfit(&["fit", "--data", s(&bad), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));

    assert_eq!(
        code(&[
            "fit",
            "--data",
            s(&tmp.path().join("missing.csv")),
            "--out",
            s(&out)
        ]),
        1
    );
    assert_eq!(code(&["fit", "--mode", "sideways"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn sweep_front_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bench_data(tmp.path());
    let runs = tmp.path().join("runs");
    assert_eq!(
        code(&[
            "sweep",
            "--data",
            s(&data),
            "--grid",
            "table1",
            "--out-dir",
            s(&runs)
        ]),
        0
    );
    let mut files: Vec<PathBuf> = std::fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 8);
    assert!(files[0]
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("run_000_a0.1_b0.9"));

    let snapshot: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let front = tmp.path().join("front.json");
    assert_eq!(
        code(&["front", "--in-dir", s(&runs), "--out", s(&front)]),
        0
    );
    let json = read_json(&front);
    assert_eq!(json["records"].as_array().unwrap().len(), 8);
    let on_front = json["front"].as_array().unwrap();
    assert!(!on_front.is_empty() && on_front.len() <= 8);
    for r in on_front {
        assert!(r["model_ref"].as_str().unwrap().starts_with("run_"));
    }

    let plot = tmp.path().join("p.csv");
    assert_eq!(
        code(&[
            "plot-data",
            "--model",
            s(&files[0]),
            "--samples-per-segment",
            "7",
            "--out",
            s(&plot)
        ]),
        0
    );
    let text = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(text.lines().count(), 1 + 16 * 7);

    let after: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(snapshot, after);
}

#[test]
fn sweep_accepts_grid_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bench_data(tmp.path());
    let grid = tmp.path().join("grid.csv");
    std::fs::write(&grid, "alpha,beta\n0.2,0.3\n0.4, 0.1\n").unwrap();
    let runs = tmp.path().join("runs");
    let args = [
        "sweep",
        "--data",
        s(&data),
        "--grid",
        s(&grid),
        "--out-dir",
        s(&runs),
        "--epochs",
        "20",
    ];
    assert_eq!(code(&args), 0);
    assert_eq!(std::fs::read_dir(&runs).unwrap().count(), 2);

    std::fs::write(&grid, "alpha,beta\n0.9,0.9\n").unwrap();
    assert_eq!(code(&args), 1);
}

#[test]
fn normalization_maps_back_to_data_units() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let mut text = String::from("x,y\n");
    for i in 0..60 {
        let x = 10.0 + 5.0 * i as f64 / 59.0;
        text.push_str(&format!("{x},{}\n", 2.0 * x - 3.0));
    }
    std::fs::write(&data, text).unwrap();
    let out = tmp.path().join("fit.json");
    let plot = tmp.path().join("p.csv");
    let args = [
        "fit",
        "--data",
        s(&data),
        "--segments",
        "3",
        "--degree",
        "5",
        "--k",
        "2",
        "--mode",
        "open",
        "--alpha",
        "0.0",
        "--beta",
        "1.0",
        "--out",
        s(&out),
        "--plot-out",
        s(&plot),
        "--samples-per-segment",
        "4",
    ];
    assert_eq!(code(&args), 0);
    let text = std::fs::read_to_string(&plot).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[0][0], 10.0);
    assert!((rows[11][0] - 15.0).abs() < 1e-12);
    for r in &rows {
        assert!((r[1] - (2.0 * r[0] - 3.0)).abs() < 1e-2, "{r:?}");
        assert!((r[2] - 2.0).abs() < 0.1, "{r:?}");
    }
}

#[test]
fn quiet_silences_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let res = ppfit(&["--quiet", "gen-data", "--out", s(&data)]);
    assert_eq!(res.status.code(), Some(0));
    assert!(res.stdout.is_empty());
    assert!(data.exists());
}
