use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mfa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfa"))
        .current_dir(dir)
        .env_remove("MFA_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const LACUNARY: [&str; 6] = ["--family", "lacunary", "--alpha", "0.5", "--eta", "0.5"];

fn generate(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["generate"];
    args.extend(LACUNARY);
    args.extend(["--J", "14", "--seed", "42", "--out", name]);
    args.extend(extra);
    let o = mfa(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn generate_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "t.mfa", &[]);
    generate(dir.path(), "u.mfa", &[]);
    let a = fs::read(dir.path().join("t.mfa")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("u.mfa")).unwrap());
    // magic, J, flags, then 2^15 - 1 doubles
    assert_eq!(a.len(), 4 + 4 + 1 + 8 * ((1 << 15) - 1));
    let m = json(&dir.path().join("t.manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["J"], 14);
}

#[test]
fn generate_writes_every_format_into_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["binary", "json", "csv"] {
        generate(dir.path(), f, &["--format", f]);
        let ext = if f == "binary" { "mfa" } else { f };
        assert!(dir.path().join(f).join(format!("tree.{ext}")).exists());
        assert!(dir.path().join(f).join("manifest.json").exists());
    }
    let o = mfa(dir.path(), &["analyze", "--input", "csv/tree.csv", "--p", "2", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn invalid_parameters_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfa(dir.path(), &["generate", "--family", "lacunary", "--alpha", "0.5", "--eta", "1.0", "--out", "t.mfa"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("eta must lie in (0, 1)"), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("t.manifest.json"))["status"], "error");

    let o = mfa(dir.path(), &["generate", "--out", "x.mfa"]);
    assert_eq!(code(&o), 2);
    let o = mfa(dir.path(), &["analyze", "--input", "missing.mfa"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn analyze_reports_distance_to_theory() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "t.mfa", &[]);
    let mut args = vec![
        "analyze",
        "--input",
        "t.mfa",
        "--p",
        "2,inf",
        "--epsilon",
        "0.02",
        "--aggregation",
        "origin-regression",
        "--out",
        "a",
    ];
    args.extend(LACUNARY);
    let o = mfa(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("max |D_formalism - D|"));
    let out = dir.path().join("a");
    for f in ["scaling.json", "scaling.csv", "density_p2.csv", "spectrum_p2.csv", "spectrum_pinf.json", "summary.json"]
    {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("spectrum_p2.csv")).unwrap();
    assert!(csv.starts_with("h,D_formalism,D_leader,D_theory\n"));
    let summary = json(&out.join("summary.json"));
    let gap: f64 = summary[0]["max_abs_diff_formalism"].as_str().unwrap().parse().unwrap();
    assert!(gap < 0.1, "{gap}");
    assert_eq!(summary[1]["p"], "inf");
}

#[test]
fn analyze_refuses_p_beyond_the_critical_index() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfa(
        dir.path(),
        &["generate", "--family", "lacunary", "--alpha", "-0.25", "--eta", "0.5", "--J", "14", "--out", "t.mfa"],
    );
    assert_eq!(code(&o), 0);
    let o = mfa(dir.path(), &["analyze", "--input", "t.mfa", "--p", "3", "--out", "a"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("refused"));
    assert_eq!(json(&dir.path().join("a/manifest.json"))["status"], "refused");
}

#[test]
fn theory_spectrum_and_p_nu() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["theory", "--p", "2", "--out", "th"];
    args.extend(LACUNARY);
    let o = mfa(dir.path(), &args);
    assert_eq!(code(&o), 0);
    let t = json(&dir.path().join("th/theory_p2.json"));
    assert_eq!(t["theory"]["h_max"], 1.5);
    let curve = &t["curve"];
    for (h, d) in curve["h"].as_array().unwrap().iter().zip(curve["D"].as_array().unwrap()) {
        let h = h.as_f64().unwrap();
        if (0.5..=1.5).contains(&h) {
            assert!((d.as_f64().unwrap() - 0.5 * (h + 0.5)).abs() < 1e-12);
        }
    }

    fs::write(
        dir.path().join("prof.json"),
        r#"{"alpha_min": -0.25, "knots": [[-0.25, 0.0], [0.25, 1.0]], "interpolation": "linear"}"#,
    )
    .unwrap();
    let o = mfa(dir.path(), &["theory", "--profile", "prof.json", "--what", "p-nu", "--out", "pn"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("pn/p_nu.json"))["p_nu"], "4.0");

    let o = mfa(
        dir.path(),
        &["theory", "--family", "lacunary", "--alpha", "-0.25", "--eta", "0.5", "--p", "3", "--out", "r"],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("p0 = 2"), "{}", stderr(&o));
}

#[test]
fn theory_asymptotics() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfa(dir.path(), &["theory", "--family", "discrete", "--atoms", "0.3:0.2,0.8:0.9", "--what", "asymptotics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("asymptotics.csv")).unwrap();
    assert!(csv.starts_with("alpha,rho,nu,lambda\n"));
}

#[test]
fn validate_default_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfa(dir.path(), &["validate", "--out", "v"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let r = json(&dir.path().join("v/report.json"));
    assert_eq!(r["passed"], true);
    let names: Vec<&str> = r["gates"].as_array().unwrap().iter().map(|g| g["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["density", "eta", "spectrum", "h_max"]);
}

#[test]
fn tight_tolerances_fail_with_an_intact_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfa(dir.path(), &["validate", "--tolerance", "0.001", "--out", "v"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    let r = json(&dir.path().join("v/report.json"));
    assert_eq!(r["passed"], false);
    assert_eq!(r["per_realization"].as_array().unwrap().len(), 8);
    assert_eq!(json(&dir.path().join("v/manifest.json"))["status"], "gate_failure");
}

#[test]
fn zero_realizations_warn() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfa(dir.path(), &["validate", "--realizations", "0", "--out", "v"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("warning"));
    assert!(json(&dir.path().join("v/report.json"))["gates"].as_array().unwrap().is_empty());
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "seed = 7\nout = \"from_config\"\n\n[theory]\nfamily = \"lacunary\"\nalpha = 0.3\neta = 0.6\np = [\"1\"]\n",
    )
    .unwrap();
    let o = mfa(dir.path(), &["--config", "run.toml", "theory", "--alpha", "0.4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(&dir.path().join("from_config/manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["alpha"], 0.4);
    assert_eq!(m["config"]["eta"], 0.6);
    assert_eq!(m["config"]["what"], "spectrum");
    let t = json(&dir.path().join("from_config/theory_p1.json"));
    // (α + 1/p)/η - 1/p with α = 0.4, η = 0.6, p = 1
    assert!((t["theory"]["h_max"].as_f64().unwrap() - (1.4 / 0.6 - 1.0)).abs() < 1e-12);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"theory": {"alpah": 0.3}}"#).unwrap();
    let o = mfa(dir.path(), &["--config", "bad.json", "theory"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alpah"));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mfa"))
        .current_dir(dir.path())
        .env("MFA_THREADS", "2")
        .args(["validate", "--realizations", "2", "--out", "v"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("v/manifest.json"))["globals"]["threads"], 2);
    let o = Command::new(env!("CARGO_BIN_EXE_mfa"))
        .current_dir(dir.path())
        .env("MFA_THREADS", "0")
        .args(["validate", "--realizations", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn analyze_decomposes_signals_and_sweeps_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    // x ↦ |x - 1/3|^0.4 sampled on 2^12 points
    let samples: Vec<String> =
        (0..4096).map(|i| format!("{}", (i as f64 / 4096.0 - 1.0 / 3.0).abs().powf(0.4))).collect();
    fs::write(dir.path().join("sig.txt"), samples.join("\n")).unwrap();
    let o = mfa(
        dir.path(),
        &[
            "analyze",
            "--signal",
            "sig.txt",
            "--filter",
            "haar",
            "--p",
            "inf",
            "--h-min",
            "0.01",
            "--epsilon-sweep",
            "0.2,0.1",
            "--verbose",
            "--out",
            "a",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("a");
    let sweep = fs::read_to_string(out.join("spectrum_pinf_epsilon_sweep.csv")).unwrap();
    assert!(sweep.starts_with("h,D_eps0.2,D_eps0.1\n"));
    assert!(out.join("density_pinf_regression.csv").exists());
    assert!(json(&out.join("summary.json"))[0]["aggregations"]["max_over_scales"].is_object());

    let o = mfa(dir.path(), &["analyze", "--signal", "sig.txt", "--filter-coefficients", "1,1", "--out", "b"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("orthonormal") || stderr(&o).contains("filter"), "{}", stderr(&o));
}
