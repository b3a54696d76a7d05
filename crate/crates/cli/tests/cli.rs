use std::path::PathBuf;
use std::process::{Command, Output};

fn cvqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvqkd"))
        .args(args)
        .output()
        .expect("spawn cvqkd")
}

fn example_config() -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/fig3.toml");
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn missing_mean_photons_is_a_config_error() {
    let o = cvqkd(&[
        "grid",
        "--set",
        "constellation.R_A=3",
        "--set",
        "constellation.b=2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("constellation.N"), "{}", stderr(&o));
}

#[test]
fn one_bit_grid_has_four_rows() {
    let cfg = example_config();
    let o = cvqkd(&["grid", "--config", &cfg, "--set", "constellation.b=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# cvqkd-grid v1"));
    assert_eq!(lines.next(), Some("j,k,q_Aj,p_Ak,re_alpha,im_alpha,p_jk"));
    assert_eq!(lines.count(), 4);
    // summary goes to stderr in CSV mode
    let summary: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(summary["points"], 4);
}

#[test]
fn paper_grid_summary() {
    let cfg = example_config();
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.json");
    let csv = dir.path().join("grid.csv");
    let o = cvqkd(&[
        "grid",
        "--config",
        &cfg,
        "--out",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap().lines().count(),
        4096 + 2
    );
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s["epsilon_a"].as_f64().unwrap() <= 1e-5);
    assert!((s["delta_a"].as_f64().unwrap() - 0.32).abs() < 0.01);
    assert!((s["epsilon_p_closed"].as_f64().unwrap() - 0.16).abs() < 0.01);
}

#[test]
fn keyrate_requires_beta() {
    let cfg = example_config();
    let o = cvqkd(&["keyrate", "--config", &cfg, "--set", "security.beta=1.0"]);
    assert!(o.status.success());
    // removing beta is not possible through --set, so use a config without it
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nobeta.toml");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("beta = 0.95\n", "");
    std::fs::write(&path, text).unwrap();
    let o = cvqkd(&["keyrate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("security.beta"));
}

#[test]
fn keyrate_csv_is_monotone() {
    let cfg = example_config();
    let o = cvqkd(&["keyrate", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# cvqkd-keyrate v1"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "r_n").unwrap();
    let r: Vec<f64> = lines
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(r.len(), 50);
    assert!(r.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn f_figure() {
    let cfg = example_config();
    let o = cvqkd(&[
        "keyrate", "--config", &cfg, "--figure", "f", "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(rows.as_array().unwrap().len() >= 4 * 61);
    let o = cvqkd(&["keyrate", "--config", &cfg, "--figure", "grid"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn covbounds_json() {
    let cfg = example_config();
    let o = cvqkd(&[
        "covbounds",
        "--config",
        &cfg,
        "--format",
        "json",
        "--set",
        "sweep.b_max=8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 8);
    assert!(v["threshold_b"].as_u64().is_some());
}

#[test]
fn simulate_is_byte_identical_for_fixed_seed() {
    let cfg = example_config();
    let args = [
        "simulate",
        "--config",
        &cfg,
        "--set",
        "sim.n_rounds=200000",
        "--seed",
        "17",
        "--set",
        "measurement.b_B=4",
    ];
    let a = cvqkd(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = cvqkd(&[&args[..], &["--threads", "1"]].concat());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["result"]["seed"], 17);
    assert!(v["result"]["h_ybar"].as_f64().unwrap() <= 8.0);
    assert!(v["result"].get("h_ybar_miller_madow").is_none());
}

#[test]
fn simulate_histogram_csv() {
    let cfg = example_config();
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("hist.csv");
    let o = cvqkd(&[
        "simulate",
        "--config",
        &cfg,
        "--set",
        "sim.n_rounds=10000",
        "--miller-madow",
        "--histogram",
        hist.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["result"]["h_ybar_miller_madow"].as_f64().is_some());
    let text = std::fs::read_to_string(&hist).unwrap();
    let total: u64 = text
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 10000);
}

#[test]
fn bad_values_exit_two() {
    let cfg = example_config();
    for set in [
        "channel.eta=1.5",
        "measurement.b_B=1",
        "security.n_sweep.points=1",
        "constellation.b=0",
    ] {
        let cmd = if set.starts_with("security") {
            "keyrate"
        } else {
            "simulate"
        };
        let o = cvqkd(&[
            cmd,
            "--config",
            &cfg,
            "--set",
            set,
            "--set",
            "sim.n_rounds=10",
        ]);
        assert_eq!(o.status.code(), Some(2), "{set}: {}", stderr(&o));
    }
    let o = cvqkd(&["grid", "--config", "/nonexistent.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_grid_is_a_resource_error() {
    let cfg = example_config();
    let o = cvqkd(&["grid", "--config", &cfg, "--set", "constellation.b=13"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn simulated_variance_near_analytic() {
    let cfg = example_config();
    let o = cvqkd(&[
        "simulate",
        "--config",
        &cfg,
        "--set",
        "sim.n_rounds=1000000",
        "--set",
        "measurement.M=30.0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let var = v["result"]["empirical_cov"][2][2].as_f64().unwrap();
    let se = v["result"]["variance_std_err"][2].as_f64().unwrap();
    assert!((var - 1.3001).abs() <= 3.0 * se, "{var} +- {se}");
    assert!(v["result"]["h_ybar"].as_f64().unwrap() <= 12.0);
}
