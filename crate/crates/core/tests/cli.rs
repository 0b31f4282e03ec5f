use std::path::Path;
use std::process::{Command, Output};

fn cgl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgl")).args(args).current_dir(dir).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_params_standard_example() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cgl(&["verify-params", "--output", "rep"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&tmp.path().join("rep/params_report.json"));
    assert!((v["report"]["c_q"].as_f64().unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    assert_eq!(v["report"]["in_region"], true);
    assert!(v["admissible_pair"]["j_value"].as_f64().unwrap() >= 0.0);
}

#[test]
fn default_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cgl(&["verify-params"], tmp.path()).status.code(), Some(0));
    assert!(tmp.path().join("cgl-out/params_report.json").exists());
}

#[test]
fn raster_region_payload_size() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cgl(&["raster-region", "--output", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let pgm = std::fs::read(tmp.path().join("r/region.pgm")).unwrap();
    let header = b"P5\n512 512\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len() - header.len(), 512 * 512);
    let s = json(&tmp.path().join("r/region_summary.json"));
    assert!((s["r"].as_f64().unwrap() - 3f64.sqrt()).abs() < 1e-12);
}

#[test]
fn config_errors_exit_one_and_list_every_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "params.q = 1.5\nparams.r = params.q\nbogus.key = 3\n").unwrap();
    let out = cgl(&["solve-cauchy", "--config", "bad.cfg"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1: q must exceed 2"), "{err}");
    assert!(err.contains("line 2:"), "{err}");
    assert!(err.contains("line 3: unknown key"), "{err}");
    assert_eq!(cgl(&["solve-cauchy", "--config", "missing.cfg"], tmp.path()).status.code(), Some(1));
}

#[test]
fn forced_nonconvergence_exits_two_with_history() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("hard.cfg"),
        "grid.nx = 15\nscheme.tau = 0.01\nforcing.amplitude = 10\nsolver.outer_maxit = 1\nsolver.outer_tol = 1e-12\n",
    )
    .unwrap();
    let out = cgl(&["find-periodic", "outer", "--config", "hard.cfg", "--output", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let log = std::fs::read_to_string(tmp.path().join("o/iterations.jsonl")).unwrap();
    assert!(log.lines().any(|l| l.contains("\"stage\":\"outer\"")));
    assert_eq!(json(&tmp.path().join("o/summary.json"))["converged"], false);
}

#[test]
fn seed_flag_changes_random_start_only() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.cfg"), "grid.nx = 15\nscheme.tau = 0.01\ninitial.kind = random\n").unwrap();
    for (dir, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let out = cgl(&["solve-cauchy", "--config", "c.cfg", "--seed", seed, "--output", dir], tmp.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("final.cglf")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c.cfg"), "grid.dim = 2\ngrid.nx = 9\ngrid.ny = 7\nforcing.mode = 1, 1\nscheme.tau = 0.01\n").unwrap();
    for (dir, threads) in [("one", "1"), ("four", "4")] {
        let out = Command::new(env!("CARGO_BIN_EXE_cgl"))
            .args(["solve-cauchy", "--config", "c.cfg", "--output", dir])
            .env("CGL_THREADS", threads)
            .current_dir(tmp.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["diagnostics.csv", "final.cglf", "final.csv", "summary.json", "energy_margins.csv"] {
        let a = std::fs::read(tmp.path().join("one").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("four").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
