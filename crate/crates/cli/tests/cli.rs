use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereokin")).current_dir(dir).args(args).output().expect("spawn")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn param(report: &serde_json::Value, name: &str) -> (f64, [f64; 2]) {
    let p = report["parameters"].as_array().unwrap().iter().find(|p| p["name"] == name).unwrap();
    (p["estimate"].as_f64().unwrap(), [p["ci95"][0].as_f64().unwrap(), p["ci95"][1].as_f64().unwrap()])
}

#[test]
fn simulate_writes_unit_suffixed_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["simulate", "--out", "sim.csv", "--points", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("sim.csv"));
    assert_eq!(header, ["t_s", "n0_cm2", "n1_cm2", "n2_cm2", "n_tot_cm2"]);
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert!((r[1] + r[2] + r[3] - r[4]).abs() <= 1e-9 * r[4]);
    }
    assert!(rows.windows(2).all(|w| w[1][4] < w[0][4]));
    let m = json(&dir.path().join("sim.csv.manifest.json"));
    assert_eq!(m["subcommand"], "simulate");
    assert!(m["config"].is_object());
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--config", "nowhere.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn malformed_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{ \"temperature_nk\": ").unwrap();
    let out = run(dir.path(), &["--config", "bad.json", "occupancy"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seeded_datasets_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |name: &'static str| ["--seed", "7", "simulate", "--noise", "0.05", "--dataset-out", name];
    assert!(run(dir.path(), &args("a.csv")).status.success());
    assert!(run(dir.path(), &args("b.csv")).status.success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert!(run(dir.path(), &["--seed", "8", "simulate", "--noise", "0.05", "--dataset-out", "c.csv"])
        .status
        .success());
    assert_ne!(a, std::fs::read(dir.path().join("c.csv")).unwrap());
}

#[test]
fn dual_fit_recovers_simulated_rates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["--seed", "1", "simulate", "--noise", "0.02", "--dataset-out", "th.csv"]).status.success());
    assert!(run(
        d,
        &["--seed", "2", "simulate", "--noise", "0.02", "--ground-fraction", "0.5", "--dataset-out", "he.csv"]
    )
    .status
    .success());
    let out = run(d, &["fit", "--thermal", "th.csv", "--heated", "he.csv", "--out", "fit.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&d.join("fit.json"));
    assert_eq!(rep["model"], "level-resolved");
    assert_eq!(rep["converged"], true);
    for (name, truth) in [("beta2_cm2_per_s", 1e-5), ("beta3_cm2_per_s", 1e-6)] {
        let (est, ci) = param(&rep, name);
        assert!((est - truth).abs() < 0.15 * truth, "{name} {est}");
        assert!(ci[0] < est && est < ci[1]);
    }
    assert_eq!(rep["covariance"].as_array().unwrap().len(), 4);
    assert!(d.join("fit.json.manifest.json").exists());
}

#[test]
fn single_fit_reports_one_rate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("t_s,n_cm2\n");
    for i in 0..12 {
        let t = 0.01 * i as f64;
        text.push_str(&format!("{t},{}\n", 2e7 / (1.0 + 3e-6 * 2e7 * t)));
    }
    std::fs::write(d.join("one.csv"), text).unwrap();
    let out = run(d, &["fit", "--single", "one.csv", "--out", "fit.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&d.join("fit.json"));
    assert_eq!(rep["model"], "single-beta");
    let (beta, _) = param(&rep, "beta1_cm2_per_s");
    assert!((beta - 3e-6).abs() < 1e-6 * 3e-6);
    let (n0, _) = param(&rep, "n0_single_cm2");
    assert!((n0 - 2e7).abs() < 1e-6 * 2e7);
}

#[test]
fn empty_or_malformed_data_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.csv"), "t_s,n_cm2\n").unwrap();
    let out = run(d, &["fit", "--single", "empty.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.csv"));
    std::fs::write(d.join("bad.csv"), "t_s,n_cm2\n0,1e7\n0.1,abc\n").unwrap();
    let out = run(d, &["fit", "--single", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let out = run(d, &["fit", "--thermal", "empty.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scan_of_repulsive_channel_has_rising_barrier() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--channel", "3", "scan-dipole", "--points", "6", "--out", "scan.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("scan.csv"));
    assert_eq!(header, ["d_debye", "beta_cm3_per_s", "barrier_uK", "in_window"]);
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]));
    assert!(rows.windows(2).all(|w| w[1][1] < w[0][1]));
    let slope = json(&dir.path().join("scan.csv.slope.json"));
    assert!(slope["slope"].as_f64().unwrap() < 0.0);
}

#[test]
fn scan_of_attractive_channel_follows_sixth_power() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "scan-dipole",
        "--d-min",
        "0.1",
        "--d-max",
        "0.2",
        "--points",
        "11",
        "--temperature-nk",
        "300",
        "--out",
        "s.csv",
    ];
    let out = run(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let slope = json(&dir.path().join("s.csv.slope.json"))["slope"].as_f64().unwrap();
    assert!((slope - 6.0).abs() <= 1.5, "slope {slope}");
}

#[test]
fn scan_in_two_dimensions_uses_areal_units() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--mode", "2d", "scan-dipole", "--points", "5", "--out", "s.csv"]);
    assert!(out.status.success());
    let (header, _) = csv_rows(&dir.path().join("s.csv"));
    assert_eq!(header[1], "beta_cm2_per_s");
}

#[test]
fn scan_rejects_short_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["scan-dipole", "--points", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["scan-dipole", "--d-min", "0.2", "--d-max", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn occupancy_and_cloud_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["--format", "json", "--out", "occ.json", "occupancy", "--ground-fraction", "0.5"])
        .status
        .success());
    let occ = json(&d.join("occ.json"));
    let f: Vec<f64> = occ["fractions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((f[0] - 0.5).abs() < 1e-9);
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    assert!(run(d, &["--out", "cloud.csv", "cloud"]).status.success());
    let s = json(&d.join("cloud.csv.summary.json"));
    assert!((s["alpha0"].as_f64().unwrap() - 23.0).abs() < 1e-6);
    let (header, rows) = csv_rows(&d.join("cloud.csv"));
    assert_eq!(header, ["layer", "molecules", "peak_density_cm2"]);
    let total: f64 = rows.iter().map(|r| r[1]).sum();
    assert!((total - 34000.0).abs() < 1e-6 * 34000.0);
}

#[test]
fn channels_table_lists_allowed_channels() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["channels", "--same-state"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("lowest channel: |3>"));
    assert!(!text.contains("|1>"));
    let out = run(dir.path(), &["--format", "json", "channels", "--v2", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lowest"], "|1>");
}

#[test]
fn bandmap_image_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (rows, cols) = (21usize, 81usize);
    let f = [0.5, 0.35, 0.15];
    let erf = |x: f64| {
        let n = 2000;
        let h = x / n as f64;
        (0..n).map(|i| (-(h * (i as f64 + 0.5)).powi(2)).exp()).sum::<f64>() * h * 2.0 / std::f64::consts::PI.sqrt()
    };
    let sigma = 0.1f64;
    let boxf = |p: f64, a: f64| 0.5 * (erf((p + a) / (sigma * 2f64.sqrt())) - erf((p - a) / (sigma * 2f64.sqrt())));
    let mut text = String::new();
    for r in 0..rows {
        let y = r as f64 - 10.0;
        let w = (-0.5 * (y / 3.0).powi(2)).exp();
        let line: Vec<String> = (0..cols)
            .map(|c| {
                let p = (c as f64 - 40.0) * 0.1;
                let od = f[0] / 2.0 * boxf(p, 1.0)
                    + f[1] / 2.0 * (boxf(p, 2.0) - boxf(p, 1.0))
                    + f[2] / 2.0 * (boxf(p, 3.0) - boxf(p, 2.0));
                format!("{}", w * od)
            })
            .collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(d.join("img.csv"), text).unwrap();
    let out = run(d, &["--out", "bm.json", "bandmap", "--image", "img.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&d.join("bm.json"));
    for (k, truth) in f.iter().enumerate() {
        let got = rep["fractions"][k].as_f64().unwrap();
        assert!((got - truth).abs() < 1e-3, "zone {k}: {got}");
    }
    assert!((rep["sigma_px"].as_f64().unwrap() - 1.0).abs() < 0.05);
    let (header, _) = csv_rows(&d.join("bm.json.overlay.csv"));
    assert_eq!(header, ["p_hbark", "od", "model_od"]);
}

#[test]
fn bandmap_needs_an_input() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["bandmap"]).status.code(), Some(2));
}
