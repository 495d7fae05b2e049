use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sobolis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sobolis"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_out(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key]
        .as_f64()
        .unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn estimate_gfunction_first_input() {
    let v = json_out(&sobolis(&[
        "estimate", "--model", "gfun", "--a", "1,2,3", "--u", "1", "--n", "100000", "--seed", "7",
    ]));
    let (eta, se) = (num(&v, "value"), num(&v, "stderr"));
    assert!((eta - 13.0 / 12.0).abs() < 4.0 * se, "{eta} ± {se}");
    assert_eq!(v["estimator"], "rank");
    assert!(v["sobol_index"].is_f64());
}

#[test]
fn estimate_is_deterministic_across_runs_and_modes() {
    let args = [
        "estimate", "--model", "gfun", "--u", "1,2", "--n", "5000", "--seed", "11", "--q-beta",
        "0.8,0.8",
    ];
    let a = sobolis(&args);
    let b = sobolis(&args);
    let mut seq = args.to_vec();
    seq.push("--sequential");
    let c = sobolis(&seq);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn config_errors_exit_2() {
    let out = sobolis(&["estimate", "--model", "gfun", "--n", "100", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = sobolis(&["estimate", "--model", "gfun", "--u", "1", "--n", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));

    let out = sobolis(&[
        "sweep",
        "--model",
        "gfun",
        "--u",
        "1,2",
        "--cv-curve",
        "--mc",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = sobolis(&["variance", "--model", "gfun", "--a", "1,2", "--u", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn support_violation_exits_3() {
    // a_1 = 0 makes the g-function vanish at x_1 = 1/2, where the
    // zero-variance density has no mass but the reference does.
    let out = sobolis(&[
        "variance", "--model", "gfun", "--a", "0,1,2", "--u", "1,2", "--case", "zero",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn variance_under_reference_and_beta() {
    let p = json_out(&sobolis(&[
        "variance", "--model", "gfun", "--u", "1,2", "--dist", "p",
    ]));
    let s = num(&p["report"], "sigma_sq");
    // 4 E[m^2 phi^2] - 3 E[m^4] - eta^2 with phi^2 = (49/48) m^2.
    let m4 = (3.0f64.powi(5) - 1.0) / (10.0 * 16.0) * (4.0f64.powi(5) - 32.0) / (10.0 * 81.0);
    let eta = 91.0 / 81.0;
    let oracle = (4.0 * 49.0 / 48.0 - 3.0) * m4 - eta * eta;
    assert!((s - oracle).abs() < 1e-10, "{s} vs {oracle}");

    let b = json_out(&sobolis(&[
        "variance", "--model", "gfun", "--u", "1,2", "--beta", "0.7,0.7",
    ]));
    assert!(num(&b, "reduction") >= 0.4);
    assert_eq!(b["divergent"], false);

    let d = json_out(&sobolis(&[
        "variance", "--model", "gfun", "--u", "1,2", "--beta", "2,2",
    ]));
    assert_eq!(d["divergent"], true);
}

#[test]
fn variance_cases() {
    let a = json_out(&sobolis(&[
        "variance", "--model", "gfun", "--u", "1,2", "--case", "A",
    ]));
    let eta = 91.0 / 81.0;
    assert!((num(&a["report"], "sigma_sq") - eta * eta / 12.0).abs() < 1e-10);
    let r = &a["s_over_m4"];
    assert!((num(r, "max") / num(r, "min") - 1.0).abs() < 1e-9);

    let z = json_out(&sobolis(&[
        "variance", "--model", "gfun", "--u", "1,2", "--case", "zero",
    ]));
    assert!(num(&z["report"], "sigma_sq") < 1e-8);
    assert!(num(&z, "max_relative_deviation") < 1e-10);
}

#[test]
fn surface_and_cv_curve() {
    let dir = tempfile::tempdir().unwrap();
    let surf = dir.path().join("surface.csv");
    let v = json_out(&sobolis(&[
        "sweep",
        "--model",
        "gfun",
        "--u",
        "1,2",
        "--surface",
        "--grid",
        "0.4:2:17",
        "--out",
        surf.to_str().unwrap(),
    ]));
    let rows = csv_rows(&surf);
    assert_eq!(rows.len(), 289);
    let best: Vec<&Vec<String>> = rows.iter().filter(|r| r[5] == "1").collect();
    assert_eq!(best.len(), 1);
    let alpha: f64 = best[0][0].parse().unwrap();
    assert!((alpha - 0.7).abs() < 1e-9);
    assert!(num(&v, "reduction") >= 0.4);

    let cv = dir.path().join("cv.csv");
    let v = json_out(&sobolis(&[
        "sweep",
        "--model",
        "gfun",
        "--u",
        "1,2",
        "--cv-curve",
        "--t-grid",
        "0:1:11",
        "--out",
        cv.to_str().unwrap(),
    ]));
    let rows = csv_rows(&cv);
    assert_eq!(rows.len(), 11);
    let cvs: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(cvs.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(v["strictly_decreasing"], true);
}

#[test]
fn csv_goes_to_stdout_without_out() {
    let out = sobolis(&[
        "sweep",
        "--model",
        "gfun",
        "--u",
        "1",
        "--cv-curve",
        "--t-grid",
        "0:1:3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("t,cv,sigma_sq,stderr"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"points\": 3"));
}

#[test]
fn generate_estimate_and_sweep_on_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let d = data.to_str().unwrap();
    let out = sobolis(&[
        "generate", "--model", "gfun", "--n", "4000", "--seed", "3", "--out", d,
    ]);
    assert!(out.status.success());

    let base = json_out(&sobolis(&[
        "estimate",
        "--data",
        d,
        "--u",
        "2",
        "--theta-all",
        "1,1",
    ]));
    assert_eq!(base["estimator"], "rank");

    let sweep = dir.path().join("s.csv");
    let v = json_out(&sobolis(&[
        "sweep",
        "--data",
        d,
        "--u",
        "2",
        "--marginal",
        "1",
        "--alpha-grid",
        "0.5:1.5:5",
        "--beta-grid",
        "0.5:1.5:5",
        "--lower",
        "0,0,0",
        "--upper",
        "1,1,1",
        "--out",
        sweep.to_str().unwrap(),
    ]));
    assert_eq!(num(&v, "rows"), 25.0);
    let rows = csv_rows(&sweep);
    assert_eq!(rows.len(), 25);
    // alpha_1..3, beta_1..3, eta_hat, stderr, ess, baseline, low_ess
    let baseline: Vec<&Vec<String>> = rows.iter().filter(|r| r[9] == "1").collect();
    assert_eq!(baseline.len(), 1);
    let eta: f64 = baseline[0][6].parse().unwrap();
    assert_eq!(eta, num(&v, "baseline_eta"));

    let g = json_out(&sobolis(&[
        "sweep",
        "--data",
        d,
        "--u",
        "1",
        "--global",
        "--alpha-grid",
        "1:2:2",
        "--beta-grid",
        "1:1:1",
        "--out",
        sweep.to_str().unwrap(),
    ]));
    assert_eq!(num(&g, "rows"), 2.0);
}

#[test]
fn generate_with_noise_drops_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("noisy.csv");
    let out = sobolis(&[
        "generate",
        "--model",
        "gfun",
        "--n",
        "10",
        "--seed",
        "1",
        "--noise",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,y");
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn validate_quick_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = sobolis(&[
        "validate",
        "--quick",
        "--seed",
        "5",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 8);
    assert!(checks.iter().all(|c| c["passed"] == true));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 8);
}
