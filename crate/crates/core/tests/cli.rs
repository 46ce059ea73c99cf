use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Command, Output};

fn monobo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monobo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn illustrative_defaults_write_full_results_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = monobo(&["run", "--problem", "illustrative", "--out", path_arg(&a)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    // Same configuration with trials spread over threads.
    let second = monobo(&["run", "--problem", "illustrative", "--jobs", "3", "--out", path_arg(&b)]);
    assert!(second.status.success());

    let csv = fs::read_to_string(a.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,trial,iteration,x0,c0,c1,total,best_so_far,rank"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 10 * 12);
    for chunk in rows.chunks(12) {
        let ranks: Vec<usize> = chunk.iter().map(|r| r[8].parse().unwrap()).collect();
        assert!(ranks.windows(2).all(|w| w[1] <= w[0]));
        assert!(ranks.iter().all(|r| (1..=101).contains(r)));
        for (i, r) in chunk.iter().enumerate() {
            assert_eq!(r[2], i.to_string());
            let c0: f64 = r[4].parse().unwrap();
            let c1: f64 = r[5].parse().unwrap();
            assert_eq!(r[6].parse::<f64>().unwrap(), c0 + c1);
        }
    }
    assert_eq!(csv, fs::read_to_string(b.join("results.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let strategies = summary["strategies"].as_array().unwrap();
    assert_eq!(strategies.len(), 3);
    for s in strategies {
        assert_eq!(s["iterations"].as_array().unwrap().len(), 12);
    }
    assert_eq!(summary["baseline"].as_array().unwrap().len(), 100);
}

#[test]
fn unknown_problem_is_a_usage_error_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = monobo(&["run", "--problem", "rosenbrock", "--out", path_arg(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("rosenbrock"));
    assert!(!out.exists());

    let missing = dir.path().join("missing.json");
    let arg = format!("external:{}", missing.display());
    let r = monobo(&["run", "--problem", &arg, "--out", path_arg(&out)]);
    assert!(!r.status.success());
    assert!(!out.exists());
}

#[test]
fn invalid_flags_are_rejected() {
    for args in [
        &["run", "--problem", "illustrative", "--budget", "-1"][..],
        &["run", "--problem", "illustrative", "--trials", "0"],
        &["run", "--problem", "illustrative", "--strategies", "greedy"],
        &["run", "--problem", "illustrative", "--grid", "1"],
        &["run", "--problem", "illustrative", "--colour"],
        &["run"],
        &["baseline", "--problem", "elastic", "--n", "many"],
    ] {
        let r = monobo(args);
        assert_eq!(r.status.code(), Some(2), "{args:?}");
        assert!(!r.stderr.is_empty());
    }
    assert!(monobo(&["--help"]).status.success());
}

#[test]
fn baseline_prints_sorted_reproducible_totals() {
    let a = monobo(&["baseline", "--problem", "illustrative", "--n", "25", "--seed", "7"]);
    assert!(a.status.success());
    let b = monobo(&["baseline", "--problem", "illustrative", "--n", "25", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);
    let values: Vec<f64> = String::from_utf8(a.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 25);
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    assert!(values.iter().all(|v| (1.0..=1.75).contains(v)));
}

#[test]
fn external_problem_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let adapter = dir.path().join("bowl.sh");
    // Components 1 - x0 and x0 - (x0 - 0.3)^2, so the total is 1 - (x0 - 0.3)^2.
    fs::write(
        &adapter,
        "#!/bin/sh\nread line\nprintf '%s' \"$line\" | sed 's/.*\\[\\([^]]*\\)\\].*/\\1/' | \
         awk -F, '{ printf \"{\\\"components\\\":[%.17g,%.17g]}\\n\", 1 - $1, -($1 - 0.3) * ($1 - 0.3) + $1 }'\n",
    )
    .unwrap();
    fs::set_permissions(&adapter, fs::Permissions::from_mode(0o755)).unwrap();
    fs::write(
        dir.path().join("bowl.json"),
        r#"{"name": "bowl", "dimension": 1,
            "components": [{"name": "fall", "signs": [-1]}, {"name": "rise", "signs": [0]}],
            "command": ["./bowl.sh"], "timeout_s": 10}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let problem = format!("external:{}", dir.path().join("bowl.json").display());
    let r = monobo(&[
        "run", "--problem", &problem, "--trials", "2", "--init", "3", "--budget", "2", "--baseline", "10", "--out",
        path_arg(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 5);
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        let x = f[0];
        assert!((f[1] - (1.0 - x)).abs() < 1e-12);
        assert!((f[3] - (1.0 - (x - 0.3) * (x - 0.3))).abs() < 1e-12);
    }
}

#[test]
fn failing_adapter_is_recorded_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let adapter = dir.path().join("broken.sh");
    fs::write(&adapter, "#!/bin/sh\ncat >/dev/null\nexit 4\n").unwrap();
    fs::set_permissions(&adapter, fs::Permissions::from_mode(0o755)).unwrap();
    fs::write(
        dir.path().join("broken.json"),
        r#"{"name": "broken", "dimension": 1, "components": [{"name": "a", "signs": [1]}], "command": ["./broken.sh"]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let problem = format!("external:{}", dir.path().join("broken.json").display());
    let r = monobo(&["run", "--problem", &problem, "--trials", "1", "--out", path_arg(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("broken.sh"));
}
