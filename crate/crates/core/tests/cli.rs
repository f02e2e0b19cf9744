use std::path::{Path, PathBuf};
use std::process::Command;

use esdmix::cli::{self, load_density_table, Mode, ProblemSpec, RunSpec};
use esdmix::montecarlo::read_eigenvalues;
use esdmix::Execution;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs").join(name)
}

fn esdmix(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_esdmix"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn esd_run_writes_density_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bundled("mp_esd.toml");
    let out = esdmix(dir.path(), &["--spec", spec.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(dir.path().join("mp_density.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x,f,re_m,im_m,converged"));
    assert_eq!(text.lines().count() - 1, 1200);
}

#[test]
fn csv_reproduces_in_memory_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = RunSpec::from_problem(
        Mode::Esd,
        ProblemSpec::TwoDelta { gamma: 0.3, lambdas: [1.0, 4.0], weights: [0.25, 0.75], m: 100 },
    );
    spec.output.density = dir.path().join("d.csv");
    let report = cli::run(&spec, dir.path(), Execution::default(), false).unwrap();
    let est = report.estimate.unwrap();
    let rows = load_density_table(&spec.output.density).unwrap();
    assert_eq!(rows.len(), est.len());
    for (row, (sol, &f)) in rows.iter().zip(est.solutions.iter().zip(&est.density)) {
        assert_eq!(row.x, sol.x);
        assert_eq!(row.f, f);
        assert_eq!(row.m, sol.m);
        assert_eq!(row.converged, sol.converged);
    }
}

#[test]
fn compare_run_reports_ks_and_mass() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bundled("diag2_compare.toml");
    let out = esdmix(dir.path(), &["--spec", spec.to_str().unwrap(), "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let line = stdout.lines().find(|l| l.starts_with("ks_distance=")).expect("report line");
    let mut parts = line.split_whitespace();
    let ks: f64 = parts.next().unwrap().trim_start_matches("ks_distance=").parse().unwrap();
    let mass: f64 = parts.next().unwrap().trim_start_matches("mass=").parse().unwrap();
    assert!(ks <= 0.03, "{line}");
    assert!((mass - 1.0).abs() <= 2e-3, "{line}");

    let eigs = std::fs::read_to_string(dir.path().join("diag2_eigenvalues.txt")).unwrap();
    let values = read_eigenvalues(eigs.as_bytes()).unwrap();
    assert_eq!(values.len(), 100 * 20);
}

#[test]
fn montecarlo_mode_respects_out_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bundled("diag2_compare.toml");
    let run = |seed: &str, out: &str| {
        let o = esdmix(dir.path(), &["--spec", spec.to_str().unwrap(), "--mode", "montecarlo", "--seed", seed, "--out", out]);
        assert!(o.status.success());
        std::fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let a = run("5", "a.txt");
    let b = run("5", "b.txt");
    let c = run("6", "c.txt");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(!dir.path().join("diag2_density.csv").exists());
}

#[test]
fn empty_spec_fails_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("empty.toml");
    std::fs::write(&spec, "").unwrap();
    let out = esdmix(dir.path(), &["--spec", spec.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("`problem`"), "{err}");
}

#[test]
fn malformed_spec_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    std::fs::write(&spec, "[problem.mp]\ngamma = \"half\"\n").unwrap();
    let out = esdmix(dir.path(), &["--spec", spec.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2") && err.contains("gamma"), "{err}");
}

#[test]
fn strict_flag_fails_on_nonconvergence() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tight.toml");
    std::fs::write(&spec, "[problem.mp]\ngamma = 0.5\n[solver]\nmax_iters = 3\n").unwrap();
    let lax = esdmix(dir.path(), &["--spec", spec.to_str().unwrap()]);
    assert!(lax.status.success());
    let strict = esdmix(dir.path(), &["--spec", spec.to_str().unwrap(), "--strict"]);
    assert!(!strict.status.success());
    assert!(String::from_utf8(strict.stderr).unwrap().contains("did not converge"));
}

#[test]
fn explicit_covariance_files_match_builtin_problem() {
    let dir = tempfile::tempdir().unwrap();
    // Two diagonal populations written as dense CSV files.
    let m = 8;
    let write = |name: &str, diag: &dyn Fn(usize) -> f64| {
        let text: String = (0..m)
            .map(|i| (0..m).map(|j| if i == j { format!("{}", diag(i)) } else { "0".into() }).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        std::fs::write(dir.path().join(name), text).unwrap();
    };
    write("p1.csv", &|i| (((i + 1) % 2) + 1) as f64);
    write("p2.csv", &|i| (((i + 2) % 2) + 1) as f64);
    let spec_text = "mode = \"esd\"\n[covariance]\ngamma = 0.5\nweights = [0.5, 0.5]\npopulations = [{ re = \"p1.csv\" }, { re = \"p2.csv\" }]\n[output]\ndensity = \"cov.csv\"\n";
    std::fs::write(dir.path().join("cov.toml"), spec_text).unwrap();
    let out = esdmix(dir.path(), &["--spec", "cov.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut builtin = RunSpec::from_problem(Mode::Esd, ProblemSpec::Diag { gamma: 0.5, k: 2, m });
    builtin.output.density = dir.path().join("builtin.csv");
    cli::run(&builtin, dir.path(), Execution::default(), false).unwrap();
    let a = load_density_table(&dir.path().join("cov.csv")).unwrap();
    let b = load_density_table(&builtin.output.density).unwrap();
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        assert!((ra.f - rb.f).abs() < 1e-12);
    }
}
