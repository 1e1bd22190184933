use std::fs;
use std::path::Path;

use pmopt::cli::main_with;
use pmopt::config::RunConfig;
use pmopt::run::Session;
use pmopt_core::geom::ParamVector;

const COARSE: &str = "[model]\nmesh_level = 2\n[audit]\nsamples = 2000\n";

fn run(dir: &Path, args: &[&str]) -> i32 {
    let config = dir.join("run.toml");
    if !config.exists() {
        fs::write(&config, COARSE).unwrap();
    }
    let mut all = vec!["pmopt".to_string(), "--config".into(), config.display().to_string()];
    all.extend(args.iter().map(|s| s.to_string()));
    main_with(all)
}

fn results(dir: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(dir.join("results.csv")).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn column(dir: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(dir.join("results.csv")).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|x| x.unwrap()[i].to_string()).collect()
}

#[test]
fn nominal_run_ends_on_the_emf_target_and_repeats_exactly() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    assert_eq!(run(t.path(), &["--out", a.to_str().unwrap(), "optimize"]), 0);
    assert_eq!(run(t.path(), &["--out", b.to_str().unwrap(), "optimize"]), 0);
    assert_eq!(results(&a).len(), 1);
    let e0: f64 = column(&a, "e0")[0].parse().unwrap();
    assert!((e0 - 30.37).abs() <= 1e-2, "{e0}");
    for f in ["results.csv", "trace.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // the written configuration reproduces the run
    let c = b.join("c");
    assert_eq!(main_with(["pmopt", "--config", a.join("config.toml").to_str().unwrap(), "--out", c.to_str().unwrap(), "optimize"]), 0);
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(c.join("results.csv")).unwrap());
}

#[test]
fn configuration_errors_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.toml");
    fs::write(&bad, "[model]\nmor = \"off\"\ndictionary = \"rb.dict\"\n").unwrap();
    assert_eq!(main_with(["pmopt", "--config", bad.to_str().unwrap(), "optimize"]), 2);
    fs::write(&bad, "[model]\nmesh = 3\n").unwrap();
    assert_eq!(main_with(["pmopt", "--config", bad.to_str().unwrap(), "optimize"]), 2);
    assert_eq!(run(t.path(), &["--formulation", "wc3", "optimize"]), 2);
    assert_eq!(run(t.path(), &["--delta", "0.5", "optimize"]), 2);
    assert_eq!(run(t.path(), &["--bogus", "optimize"]), 2);
}

#[test]
fn forward_solve_and_zero_width_audit() {
    let mut c = RunConfig::parse(COARSE).unwrap();
    c.uncertainty.delta = 0.0;
    let mut s = Session::open(c).unwrap();
    let e = s.solve(&ParamVector::new(19.0, 7.0, 7.0)).unwrap();
    assert!((e.value - 30.37).abs() < 1e-9);
    let r = s.audit(&ParamVector::new(21.0, 7.0, 7.0)).unwrap();
    assert_eq!(r.failures, 0);
}

#[test]
fn reduced_runs_reproduce_full_order_runs() {
    let t = tempfile::tempdir().unwrap();
    let dict = t.path().join("rb.dict");
    let (full, reduced) = (t.path().join("full"), t.path().join("reduced"));
    assert_eq!(run(t.path(), &["--out", t.path().join("rb").to_str().unwrap(), "rb-build", "--dictionary", dict.to_str().unwrap()]), 0);
    let common = ["--formulation", "uq_robust"];
    assert_eq!(run(t.path(), &[&common[..], &["--out", full.to_str().unwrap(), "optimize"]].concat()), 0);
    assert_eq!(run(t.path(), &[&common[..], &["--mor", dict.to_str().unwrap(), "--out", reduced.to_str().unwrap(), "optimize"]].concat()), 0);
    for p in ["p1", "p2", "p3"] {
        let (a, b): (f64, f64) = (column(&full, p)[0].parse().unwrap(), column(&reduced, p)[0].parse().unwrap());
        assert!((a - b).abs() <= 5e-2, "{p}: {a} vs {b}");
    }
    let (a, b): (f64, f64) = (column(&full, "failure_rate")[0].parse().unwrap(), column(&reduced, "failure_rate")[0].parse().unwrap());
    assert!((a - b).abs() <= 0.5, "{a}% vs {b}%");
    assert_eq!(column(&reduced, "mor")[0], "on");

    // a dictionary of another model is refused
    let fine = t.path().join("fine.toml");
    fs::write(&fine, "[model]\nmesh_level = 3\n").unwrap();
    assert_eq!(main_with(["pmopt", "--config", fine.to_str().unwrap(), "--mor", dict.to_str().unwrap(), "solve"]), 4);
}

#[test]
fn sweep_table_has_one_row_per_cell() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, format!("{COARSE}[sweep]\ndeltas = [0.2, 0.0]\nkinds = [\"nominal\", \"wc2\"]\n")).unwrap();
    let out = t.path().join("out");
    assert_eq!(run(t.path(), &["--out", out.to_str().unwrap(), "sweep"]), 0);
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().take(5).collect::<Vec<_>>(), ["delta", "kind", "area", "e0", "failure_rate"]);
    assert_eq!(r.records().count(), 4);
    assert_eq!(results(&out).len(), 4);
}
