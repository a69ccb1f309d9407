use std::path::Path;
use std::process::{Command, Output};

fn normsol(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normsol"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn thresholds_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = normsol(&["thresholds", "--rho", "1.3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let doc = json(&dir.path().join("thresholds.json"));
    assert!(doc["result"]["r0"].as_f64().unwrap() > 0.0);
    let man = json(&dir.path().join("manifest.json"));
    assert_eq!(man["command"], "thresholds");
    assert!(man["version"].is_string() && man["wall_time_s"].is_number());
}

#[test]
fn reports_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = normsol(&["ground", "--rho", "1.0", "--n", "1024"], d.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "ground.json"), read(&b, "ground.json"));
    assert_eq!(read(&a, "ground.csv"), read(&b, "ground.csv"));
    let doc = json(&a.path().join("ground.json"));
    let tags: Vec<&str> = doc["tags"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert!(tags.contains(&"th:locmin:lambda_positive"), "{tags:?}");
}

#[test]
fn excited_above_guard_is_a_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = normsol(&["excited", "--rho", "0.9"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("7.071068e-1"), "{err}");
}

#[test]
fn dilated_excited_state_blows_up() {
    let dir = tempfile::tempdir().unwrap();
    let o = normsol(&["excited", "--rho", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let field = dir.path().join("excited.csv");
    let evo = dir.path().join("evo");
    let o = normsol(
        &["evolve", "--field", field.to_str().unwrap(), "--s", "1.1", "--dt", "2e-6", "--T", "1e-3"],
        &evo,
    );
    assert_eq!(o.status.code(), Some(4));
    let trace = std::fs::read_to_string(evo.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,mass,energy,gradnorm,V,dV,M,dist"));
    assert!(trace.lines().count() > 10);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = normsol(&["ground", "--rho", "1.0", "--model", "/nonexistent/model.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    let o = normsol(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = normsol(&["thresholds", "--rho", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn model_file_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.toml");
    std::fs::write(&model, "family = \"multipower\"\nN = 3\nsub = [[1.0, 7, 3]]\nsup = [[1.0, 13, 3]]\n").unwrap();
    let o = normsol(
        &["sweep", "--model", model.to_str().unwrap(), "--rho", "0.8,1.0,1.2", "--jobs", "2", "--n", "1024"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let m: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(m.len(), 3);
    assert!(m[0] > m[1] && m[1] > m[2]);
}

#[test]
fn check_fiber_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(normsol(&["check"], dir.path()).status.code(), Some(0));
    assert!(json(&dir.path().join("check.json"))["result"]["all_ok"].as_bool().unwrap());
    assert_eq!(normsol(&["fiber", "--rho", "1.0", "--n", "1024"], dir.path()).status.code(), Some(0));
    let fib = json(&dir.path().join("fiber.json"));
    assert_eq!(fib["result"]["certificate"]["local_max_count"], 1);
    let o = normsol(&["bounds", "--rho", "0.5", "--above", "1,0.8333333333333334,1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let b = json(&dir.path().join("bounds.json"));
    assert!((b["result"]["above"]["t1"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert!(b["result"]["guard"]["rho_guard"].as_f64().unwrap() > 0.7);
}
