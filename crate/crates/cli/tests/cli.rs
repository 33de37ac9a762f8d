//! End-to-end runs of the two binaries. Reports are validated against the
//! schemas in `docs/schemas`.

use std::f64::consts::{E, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn problem(name: &str) -> PathBuf {
    repo().join("docs/problems").join(name)
}

fn run(bin: &str, args: &[&str], dir: &Path) -> Output {
    Command::new(bin)
        .args(args)
        .current_dir(dir)
        .env_remove("HERGLOTZ_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn herglotz(args: &[&str], dir: &Path) -> Output {
    run(env!("CARGO_BIN_EXE_herglotz"), args, dir)
}

fn fracop(args: &[&str], dir: &Path) -> Output {
    run(env!("CARGO_BIN_EXE_fracop"), args, dir)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Loads a report and checks it against `docs/schemas/<schema>.schema.json`.
fn report(path: &Path, schema: &str) -> Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let instance: Value = serde_json::from_str(&text).unwrap();
    validate(&instance, schema);
    instance
}

fn validate(instance: &Value, schema: &str) {
    let schema_path = repo().join(format!("docs/schemas/{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}\n{instance:#}");
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_owned();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn write_samples(path: &Path, n: usize, f: impl Fn(f64) -> f64) {
    let mut s = String::from("t,x_1\n");
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        s.push_str(&format!("{t:.17e},{:.17e}\n", f(t)));
    }
    fs::write(path, s).unwrap();
}

fn classical_solution(dir: &Path) -> PathBuf {
    let config = problem("classical-herglotz.json");
    let o = herglotz(
        &[
            "solve",
            "--config",
            config.to_str().unwrap(),
            "--nodes",
            "101",
            "--out-dir",
            "out",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("out/solution.csv")
}

#[test]
fn ibp_check_reproduces_the_monomial_value() {
    let dir = TempDir::new().unwrap();
    write_samples(&dir.path().join("f.csv"), 2049, |t| t);
    write_samples(&dir.path().join("g.csv"), 2049, |_| 1.0);
    let o = fracop(
        &[
            "ibp-check",
            "--alpha",
            "0.5",
            "--pset",
            "0,1,1,0",
            "--f",
            "f.csv",
            "--g",
            "g.csv",
            "--fail-above",
            "1e-2",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    validate(&v, "fracop-ibp-check");
    // ∫_0^1 D^{1/2} t dt = ∫ t^{1/2}/Γ(3/2) = 4/(3√π)
    let exact = 4.0 / (3.0 * PI.sqrt());
    assert!((v["lhs"].as_f64().unwrap() - exact).abs() < 1e-4, "{v}");
    assert_eq!(v["verification"]["passed"], true);
}

#[test]
fn ibp_check_fails_above_a_strict_threshold() {
    let dir = TempDir::new().unwrap();
    write_samples(&dir.path().join("f.csv"), 129, |t| t * (1.0 - t));
    write_samples(&dir.path().join("g.csv"), 129, |t| (PI * t).sin());
    let o = fracop(
        &[
            "ibp-check",
            "--alpha",
            "0.3",
            "--pset",
            "0,1,1,0",
            "--f",
            "f.csv",
            "--g",
            "g.csv",
            "--fail-above",
            "1e-14",
            "--report",
            "ibp.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let v = report(&dir.path().join("ibp.json"), "fracop-ibp-check");
    assert_eq!(v["verification"]["passed"], false);
    assert!(v["residual"].as_f64().unwrap() < 1e-3);
}

#[test]
fn apply_caputo_to_a_line() {
    let dir = TempDir::new().unwrap();
    write_samples(&dir.path().join("f.csv"), 65, |t| 3.0 * t);
    let o = fracop(
        &[
            "apply",
            "--alpha",
            "0.5",
            "--pset",
            "0,1,1,0",
            "--op",
            "B",
            "--input",
            "f.csv",
            "--report",
            "apply.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    report(&dir.path().join("apply.json"), "fracop-apply");
    let (header, rows) = read_csv(&dir.path().join("B.csv"));
    assert_eq!(header, "t,x_1");
    // D^{1/2}(3t) = 3 t^{1/2} / Γ(3/2) = 6 √(t/π)
    for r in rows {
        assert!((r[1] - 6.0 * (r[0] / PI).sqrt()).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn apply_rejects_a_grid_outside_the_parameter_set() {
    let dir = TempDir::new().unwrap();
    write_samples(&dir.path().join("f.csv"), 17, |t| t);
    let o = fracop(
        &[
            "apply",
            "--classical",
            "--pset",
            "0,2,1,0",
            "--op",
            "K",
            "--input",
            "f.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn solve_recovers_the_classical_extremal_deterministically() {
    let dir = TempDir::new().unwrap();
    let solution = classical_solution(dir.path());
    let v = report(&dir.path().join("out/solve.json"), "herglotz-solve");
    assert_eq!(v["converged"], true);
    let (header, rows) = read_csv(&solution);
    assert_eq!(header, "t,x_1");
    assert_eq!(rows.len(), 101);
    let err = rows
        .iter()
        .map(|r| (r[1] - (r[0].exp() - 1.0) / (E - 1.0)).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");

    let first = (
        fs::read(&solution).unwrap(),
        fs::read(dir.path().join("out/solve.json")).unwrap(),
    );
    classical_solution(dir.path());
    let second = (
        fs::read(&solution).unwrap(),
        fs::read(dir.path().join("out/solve.json")).unwrap(),
    );
    assert!(first == second, "outputs differ between identical runs");
}

#[test]
fn verify_accepts_the_solution_and_rejects_a_perturbation() {
    let dir = TempDir::new().unwrap();
    let solution = classical_solution(dir.path());
    let config = problem("classical-herglotz.json");
    let config = config.to_str().unwrap();
    let ok = herglotz(
        &[
            "verify",
            "--config",
            config,
            "--solution",
            solution.to_str().unwrap(),
            "--fail-above",
            "1e-3",
        ],
        dir.path(),
    );
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let v = report(&dir.path().join("verify.json"), "herglotz-verify");
    assert_eq!(v["boundary_defect"], 0.0);
    assert!(v["stationarity"]["max_improvement_rate"].as_f64().unwrap() <= 1e-6);

    let (_, rows) = read_csv(&solution);
    let mut text = String::from("t,x_1\n");
    for r in &rows {
        text.push_str(&format!("{:.17e},{:.17e}\n", r[0], r[1] + 0.01 * (PI * r[0]).sin()));
    }
    fs::write(dir.path().join("perturbed.csv"), text).unwrap();
    let bad = herglotz(
        &[
            "verify",
            "--config",
            config,
            "--solution",
            "perturbed.csv",
            "--fail-above",
            "1e-3",
            "--probe",
            "off",
        ],
        dir.path(),
    );
    assert_eq!(code(&bad), 4, "{}", stderr(&bad));
    let v = report(&dir.path().join("verify.json"), "herglotz-verify");
    assert_eq!(v["verification"]["passed"], false);
}

#[test]
fn convergence_observes_second_order_in_z_b() {
    let dir = TempDir::new().unwrap();
    let config = problem("classical-herglotz.json");
    let o = herglotz(
        &["convergence", "--config", config.to_str().unwrap(), "--nodes", "51"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = report(&dir.path().join("convergence.json"), "herglotz-convergence");
    let order = v["observed_order"].as_f64().unwrap();
    assert!((order - 2.0).abs() < 0.3, "{order}");
    let nodes: Vec<u64> = v["levels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["nodes"].as_u64().unwrap())
        .collect();
    assert_eq!(nodes, [51, 101, 201]);
    assert!(dir.path().join("convergence_201.csv").exists());
}

#[test]
fn noether_translation_is_an_exact_symmetry_of_the_classical_problem() {
    let dir = TempDir::new().unwrap();
    let solution = classical_solution(dir.path());
    let config = problem("classical-herglotz.json");
    let o = herglotz(
        &[
            "noether",
            "--config",
            config.to_str().unwrap(),
            "--solution",
            solution.to_str().unwrap(),
            "--generator",
            "translation",
            "--fail-above",
            "1e-3",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = report(&dir.path().join("noether.json"), "herglotz-noether");
    assert!(v["invariance_defect"]["relative"].as_f64().unwrap() <= 1e-8);
    assert!(v["random_probes"]["worst_relative_error"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn noether_accepts_a_tabulated_generator() {
    let dir = TempDir::new().unwrap();
    let solution = classical_solution(dir.path());
    write_samples(&dir.path().join("xi.csv"), 11, |t| 1.0 + t);
    let config = problem("classical-herglotz.json");
    let o = herglotz(
        &[
            "noether",
            "--config",
            config.to_str().unwrap(),
            "--solution",
            solution.to_str().unwrap(),
            "--generator",
            "xi.csv",
            "--probes",
            "0",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = report(&dir.path().join("noether.json"), "herglotz-noether");
    assert_eq!(v["generator"], "table");
    // ξ = 1 + t is not a symmetry: z(b) moves.
    assert!(v["invariance_defect"]["relative"].as_f64().unwrap() > 1e-3);
}

#[test]
fn oscillator_sweep_uses_the_output_directory_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_herglotz"))
        .args([
            "oscillator",
            "--sweep",
            "0.9,0.95,0.99",
            "--lambda0",
            "0",
            "--xb",
            "0",
            "--nodes",
            "101",
            "--jobs",
            "2",
        ])
        .current_dir(dir.path())
        .env("HERGLOTZ_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = report(&out.join("oscillator.json"), "herglotz-oscillator");
    assert_eq!(v["meta"]["jobs"], 2);
    assert_eq!(v["sweep"]["distance_decreasing"], true);
    assert_eq!(v["sweep"]["rows"].as_array().unwrap().len(), 3);
    for name in [
        "oscillator_alpha_0.9.csv",
        "oscillator_alpha_0.99.csv",
        "oscillator_classical.csv",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn classical_free_end_oscillator_meets_transversality() {
    let dir = TempDir::new().unwrap();
    let o = herglotz(
        &["oscillator", "--classical", "--nodes", "101", "--out-dir", "."],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = report(&dir.path().join("oscillator.json"), "herglotz-oscillator");
    let solve = &v["solve"];
    assert!(
        solve["transversality"][0]["value"].as_f64().unwrap().abs() <= 1e-4,
        "{solve}"
    );
    assert!(solve["residual_cross_check"].as_f64().unwrap() <= 1e-10);
    assert!(solve["lambda_deviation"].as_f64().unwrap() <= 1e-12);
    assert!(solve["distance_to_classical"].as_f64().unwrap() <= 1e-2);
}

#[test]
fn unconverged_solve_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let config = problem("fractional-oscillator.json");
    let o = herglotz(
        &[
            "solve",
            "--config",
            config.to_str().unwrap(),
            "--max-iterations",
            "2",
            "--nodes",
            "41",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let v = report(&dir.path().join("solve.json"), "herglotz-solve");
    assert_eq!(v["converged"], false);
}

#[test]
fn config_errors_exit_2_with_a_specific_message() {
    let dir = TempDir::new().unwrap();
    let base = fs::read_to_string(problem("classical-herglotz.json")).unwrap();
    let cases = [
        (
            "unknown.json",
            base.replace("\"x_a\"", "\"x_start\": [0], \"x_a\""),
            "unknown key `x_start`",
        ),
        (
            "alpha.json",
            base.replace("\"classical\": true", "\"alpha\": 1.5"),
            "`operator.alpha`",
        ),
        (
            "both.json",
            base.replace("\"classical\": true", "\"classical\": true, \"alpha\": 0.5"),
            "mutually exclusive",
        ),
        (
            "missing.json",
            base.replace("\"b\": 1,", ""),
            "missing required field `b`",
        ),
        ("malformed.json", base[..base.len() / 2].to_owned(), "malformed config"),
    ];
    for (name, text, needle) in cases {
        fs::write(dir.path().join(name), text).unwrap();
        let o = herglotz(&["solve", "--config", name], dir.path());
        assert_eq!(code(&o), 2, "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{name}: {}", stderr(&o));
    }
    let o = herglotz(&["solve", "--config", "absent.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn flag_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let conflict = herglotz(&["oscillator", "--alpha", "0.5", "--classical"], dir.path());
    assert_eq!(code(&conflict), 2);
    assert!(stderr(&conflict).contains("cannot be used with"));
    let domain = herglotz(&["oscillator", "--alpha", "1.5"], dir.path());
    assert_eq!(code(&domain), 2);
    assert!(stderr(&domain).contains("`--alpha`"));
    assert!(!dir.path().join("oscillator.json").exists());
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = TempDir::new().unwrap();
    let cases: [(&str, &[&str]); 7] = [
        (
            env!("CARGO_BIN_EXE_fracop"),
            &["apply", "--pset", "--op", "--kernel", "--out-dir"],
        ),
        (
            env!("CARGO_BIN_EXE_fracop"),
            &["ibp-check", "--f", "--g", "--fail-above"],
        ),
        (
            env!("CARGO_BIN_EXE_herglotz"),
            &["solve", "--config", "--nodes", "--fail-above", "HERGLOTZ_OUT_DIR"],
        ),
        (env!("CARGO_BIN_EXE_herglotz"), &["verify", "--solution", "--probe"]),
        (env!("CARGO_BIN_EXE_herglotz"), &["noether", "--generator", "--s-step"]),
        (
            env!("CARGO_BIN_EXE_herglotz"),
            &["oscillator", "--lambda0", "--sweep", "--jobs", "--xb"],
        ),
        (env!("CARGO_BIN_EXE_herglotz"), &["convergence", "--nodes", "--norm"]),
    ];
    for (bin, words) in cases {
        let o = run(bin, &[words[0], "--help"], dir.path());
        assert_eq!(code(&o), 0);
        let help = String::from_utf8_lossy(&o.stdout);
        for w in &words[1..] {
            assert!(help.contains(w), "{} --help lacks {w}:\n{help}", words[0]);
        }
    }
}

#[test]
fn bundled_problems_match_the_problem_schema() {
    let dir = repo().join("docs/problems");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let problem: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        validate(&problem, "problem");
        seen += 1;
    }
    assert!(seen >= 3);
}
