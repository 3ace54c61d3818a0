use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockshadow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(out: &Output) -> Vec<Vec<String>> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn acquire(dir: &Path, name: &str, state: &str, n: &str, k: &str, nu: &str, ns: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = run(&["acquire", "--state", state, "--n", n, "--k", k, "--nu", nu, "--ns", ns, "--seed", seed, "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn acquire_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = acquire(dir.path(), "a.json", "random-circuit(3,7)", "4", "2", "50", "3", "11");
    let b = dir.path().join("b.json");
    let o = bin()
        .args(["--threads", "1", "acquire", "--state", "random-circuit(3,7)", "--n", "4", "--k", "2"])
        .args(["--nu", "50", "--ns", "3", "--seed", "11", "--out", p(&b)])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn indivisible_block_size_is_a_usage_error() {
    let o = run(&["acquire", "--state", "zero", "--n", "5", "--k", "2", "--nu", "1", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_state_spec_is_a_usage_error() {
    let o = run(&["acquire", "--state", "ghz(", "--n", "2", "--k", "1", "--nu", "1", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "ZZ\n").unwrap();
    let o = run(&["estimate", "--data", p(&dir.path().join("absent.json")), "--targets", p(&t)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn identity_estimate_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = acquire(dir.path(), "d.json", "ghz", "4", "2", "100", "1", "3");
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "IIII\nZZII\n").unwrap();
    let o = run(&["estimate", "--data", p(&d), "--targets", p(&t), "--state", "ghz"]);
    assert!(o.status.success());
    let r = rows(&o);
    assert_eq!(r[0], ["observable", "mean", "stderr", "N_U", "N_S", "k", "exact", "z", "predicted_var"]);
    assert_eq!(r[1][0], "IIII");
    assert_eq!(r[1][1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(r[1][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(r[1][5], "2");
    assert_eq!(r[1][7].parse::<f64>().unwrap(), 0.0);
    assert_eq!(r.len(), 3);
}

#[test]
fn purity_of_product_state_is_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = acquire(dir.path(), "d.json", "zero", "2", "1", "3000", "2", "5");
    let o = run(&["purity", "--data", p(&d), "--state", "zero", "--stderr", "analytic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&o);
    let mean: f64 = r[1][1].parse().unwrap();
    let se: f64 = r[1][2].parse().unwrap();
    let predicted: f64 = r[1][8].parse().unwrap();
    assert!((mean - 1.0).abs() < 4.0 * se, "purity {mean} +- {se}");
    assert!(predicted > 0.0);
}

#[test]
fn crm_reports_predicted_variance() {
    let dir = tempfile::tempdir().unwrap();
    let d = acquire(dir.path(), "d.json", "ghz", "4", "2", "200", "1", "9");
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "XXXX\n").unwrap();
    let o = run(&["crm", "--data", p(&d), "--sigma", "zero", "--targets", p(&t), "--state", "ghz"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&o);
    let predicted: f64 = r[1][8].parse().unwrap();
    assert!(predicted.is_finite() && predicted > 0.0);
}

#[test]
fn derandomize_compares_block_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "ZZIIII\nXXIIII\nIIYYII\nIIIIXX\n").unwrap();
    let (plan, cov, cmp) = (dir.path().join("plan.json"), dir.path().join("cov.csv"), dir.path().join("cmp.csv"));
    let o = run(&[
        "derandomize", "--targets", p(&t), "--n", "6", "--k", "2", "--min-cover", "3",
        "--candidates", "stabilizer_basis", "--compare-k", "1,2",
        "--out", p(&plan), "--coverage", p(&cov), "--compare-out", p(&cmp),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cov = std::fs::read_to_string(cov).unwrap();
    for line in cov.lines().skip(1) {
        assert!(line.split(',').nth(1).unwrap().parse::<usize>().unwrap() >= 3);
    }
    let cmp = std::fs::read_to_string(cmp).unwrap();
    let lines: Vec<_> = cmp.lines().collect();
    assert_eq!(lines[0], "k,bases,min_coverage,conf,expected_conf,guarantee_holds");
    let bases = |l: &str| l.split(',').nth(1).unwrap().parse::<usize>().unwrap();
    assert!(bases(lines[2]) < bases(lines[1]));
    assert!(std::fs::read_to_string(plan).unwrap().contains("\"guarantee_holds\": true"));
}

#[test]
fn derandomize_needs_a_budget() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "ZZ\n").unwrap();
    let o = run(&["derandomize", "--targets", p(&t), "--n", "2", "--k", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_then_mitigate() {
    let dir = tempfile::tempdir().unwrap();
    let cal = acquire(dir.path(), "cal.json", "zero", "4", "2", "500", "1", "1");
    let rep = dir.path().join("cal.rep");
    let o = run(&["calibrate", "--data", p(&cal), "--resamples", "50", "--out", p(&rep)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = acquire(dir.path(), "d.json", "ghz", "4", "2", "300", "1", "2");
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "ZZII\nXXXX\n").unwrap();
    let o = run(&["mitigate", "--data", p(&d), "--calibration", p(&rep), "--targets", p(&t), "--clamp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&o);
    assert_eq!(r[0][..3], ["observable", "label", "alpha"]);
    assert_eq!(r[1][1], "10");
    assert_eq!(r[2][1], "11");
}

#[test]
fn verify_passes() {
    let o = run(&["verify"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn phase_scan_writes_scan_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, fit) = (dir.path().join("scan.csv"), dir.path().join("fit.json"));
    let o = run(&[
        "phase-scan", "--n", "4", "--k", "2", "--records", "4", "--shots", "10", "--seed", "0",
        "--w-step", "0.3", "--bootstrap", "5", "--out", p(&csv), "--fit", p(&fit),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scan = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<_> = scan.lines().collect();
    assert_eq!(lines[0], "w,pc1,pc1_stderr");
    assert_eq!(lines.len(), 8);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fit).unwrap()).unwrap();
    for key in ["a", "b", "c", "w0", "p_value", "significant"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn sff_row_has_exact_value() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.json");
    std::fs::write(&h, r#"[{"coeff":1.0,"pauli":"ZZ"},{"coeff":0.5,"pauli":"XI"}]"#).unwrap();
    let o = run(&["sff", "--hamiltonian", p(&h), "--time", "0.7", "--k", "1", "--samples", "300", "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&o);
    let z: f64 = r[1][7].parse().unwrap();
    assert!(z.abs() < 4.0);
}
