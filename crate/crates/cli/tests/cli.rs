use std::path::Path;
use std::process::{Command, Output};

fn grasswalk(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasswalk"))
        .arg("--cache-dir")
        .arg(cache)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("one line")).expect("JSON line")
}

#[test]
fn eval_examples() {
    let cache = tempfile::tempdir().unwrap();
    let v = |args: &[&str]| {
        let out = grasswalk(cache.path(), args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out)["value"].as_f64().unwrap()
    };
    assert_eq!(v(&["eval", "--kind", "jacobi", "--d", "1", "--p", "1", "--q", "1", "--lambda", "2", "--x", "0"]), 1.0);
    let cos = v(&["eval", "--kind", "jacobi", "--d", "1", "--p", "1", "--q", "1", "--lambda", "2", "--x", "0.7853981634"]);
    assert!(cos.abs() < 1e-9);
    assert_eq!(v(&["eval", "--kind", "bessel", "--d", "1", "--p", "3", "--q", "1", "--lambda", "0", "--x", "1.0"]), 1.0);
    // expansion and Monte Carlo agree at rank two
    let exact = v(&["eval", "--kind", "jacobi", "--d", "2", "--p", "3", "--q", "2", "--lambda", "4,2", "--x", "0.3,0.1"]);
    let out = grasswalk(
        cache.path(),
        &["eval", "--kind", "jacobi", "--method", "mc", "--samples", "100000", "--d", "2", "--p", "3", "--q", "2", "--lambda", "4,2", "--x", "0.3,0.1"],
    );
    let j = stdout_json(&out);
    let (est, se) = (j["value"].as_f64().unwrap(), j["stderr"].as_f64().unwrap());
    assert!((est - exact).abs() < 4.0 * se, "{est} ± {se} vs {exact}");
}

#[test]
fn linearize_prints_the_chebyshev_row() {
    let cache = tempfile::tempdir().unwrap();
    let out = grasswalk(cache.path(), &["linearize", "--d", "1", "--p", "1", "--q", "1", "--lambda", "2", "--mu", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tau1,coefficient"));
    let rows: Vec<(u32, f64)> = lines
        .map(|l| {
            let (t, c) = l.split_once(',').unwrap();
            (t.parse().unwrap(), c.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].0, rows[1].0), (0, 4));
    assert!((rows[0].1 - 0.5).abs() < 1e-8 && (rows[1].1 - 0.5).abs() < 1e-8);
}

#[test]
fn one_step_walk_lands_on_the_step_law() {
    let cache = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let out = grasswalk(
        cache.path(),
        &["--out-dir", out_dir.path().to_str().unwrap(), "walk", "--d", "1", "--p", "1", "--q", "1", "--nu", "2:1.0", "--n", "1", "--traj", "100000", "--seed", "7"],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(out_dir.path().join("endpoints.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trajectory,l1"));
    let ends: Vec<&str> = lines.map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(ends.len(), 100_000);
    assert!(ends.iter().all(|&e| e == "2"));
    let hist = &stdout_json(&out)["histogram"];
    assert_eq!(hist[0][0], "2");
    assert_eq!(hist[0][1], 1.0);
}

#[test]
fn rank_one_clt_passes_and_exit_codes_follow_the_contract() {
    let cache = tempfile::tempdir().unwrap();
    let out = grasswalk(
        cache.path(),
        &["clt", "--d", "1", "--p", "1", "--q", "1", "--nu", "2:1.0", "--n", "2000", "--traj", "20000", "--seed", "7", "--reference-draws", "0"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(stdout_json(&out)["ks_corrected"].as_f64().unwrap() < 0.02);

    // tolerance failure
    let out = grasswalk(
        cache.path(),
        &["clt", "--d", "1", "--p", "1", "--q", "1", "--nu", "2:1.0", "--n", "50", "--traj", "200", "--seed", "7", "--ks-tol", "0.0001"],
    );
    assert_eq!(out.status.code(), Some(2));

    // library error
    let out = grasswalk(cache.path(), &["eval", "--kind", "jacobi", "--d", "3", "--p", "1", "--q", "1", "--lambda", "2", "--x", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "InvalidParams");

    // odd weight
    let out = grasswalk(cache.path(), &["linearize", "--d", "1", "--p", "1", "--q", "1", "--lambda", "3", "--mu", "2"]);
    assert_eq!(out.status.code(), Some(1));

    // step law that leaves the degree cap
    let out = grasswalk(
        cache.path(),
        &["walk", "--d", "1", "--p", "1", "--q", "1", "--nu", "2:1", "--n", "100", "--traj", "100", "--seed", "1", "--degree-cap", "6"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "DegreeCapExceeded");
    assert!(err["message"].as_str().unwrap().contains("(trajectory 0, step "), "{err}");
}

#[test]
fn config_files_round_trip_and_reject_unknown_keys() {
    let cache = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("walk.txt");
    std::fs::write(&cfg, "# rank-one walk\nd=2\np=2.5\nq=1\nnu=2:0.5;4:0.5\nn=30\ntraj=500\nseed=9\n").unwrap();
    let first = dir.path().join("first");
    let out = grasswalk(
        cache.path(),
        &["--out-dir", first.to_str().unwrap(), "walk", "--config", cfg.to_str().unwrap(), "--seed", "10"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = std::fs::read_to_string(first.join("config.txt")).unwrap();
    assert!(echoed.contains("seed=10\n") && echoed.contains("nu=2:0.5;4:0.5\n"));

    let second = dir.path().join("second");
    let out = grasswalk(
        cache.path(),
        &["--out-dir", second.to_str().unwrap(), "walk", "--config", first.join("config.txt").to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(echoed, std::fs::read_to_string(second.join("config.txt")).unwrap());
    assert_eq!(
        std::fs::read(first.join("endpoints.csv")).unwrap(),
        std::fs::read(second.join("endpoints.csv")).unwrap()
    );
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(first.join("walk.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], "10");

    std::fs::write(&cfg, "d=1\nbogus=3\n").unwrap();
    let out = grasswalk(cache.path(), &["walk", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "Usage");
}

#[test]
fn cache_directory_comes_from_the_environment() {
    let cache = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grasswalk"))
        .env("GRASSWALK_CACHE", cache.path())
        .args(["linearize", "--d", "2", "--p", "3", "--q", "2", "--lambda", "2,0", "--mu", "2,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let files: Vec<String> = std::fs::read_dir(cache.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files.len(), 1);
    assert!(files[0].starts_with("table-d2-p3-q2-cap4-"), "{files:?}");
}

#[test]
fn other_commands_report_and_gate() {
    let cache = tempfile::tempdir().unwrap();
    let out = grasswalk(cache.path(), &["admissible", "--d", "1", "--p", "2", "--q", "2", "--nu", "2,0:1", "--degree-cap", "8"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["min_coeff"].as_f64().unwrap() > -1e-8);

    let out = grasswalk(
        cache.path(),
        &["mehler-heine", "--d", "1", "--p", "3", "--q", "1", "--lambda", "2", "--x-grid", "0.4;0.8;1.2"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["slope"].as_f64().unwrap() < -0.9);

    let out = grasswalk(cache.path(), &["laguerre", "--d", "1", "--p", "2", "--q", "2", "--draws", "4000"]);
    assert_eq!(out.status.code(), Some(0));

    let out = grasswalk(
        cache.path(),
        &["gaussian", "--d", "1", "--p", "1", "--q", "1", "--lambda", "1", "--samples", "4000", "--inner", "100"],
    );
    assert_eq!(out.status.code(), Some(0));

    let out = grasswalk(
        cache.path(),
        &["slln", "--d", "1", "--p", "1", "--q", "1", "--nu", "2:1", "--n", "2048", "--traj", "400", "--seed", "2", "--epsilon", "0.75", "--n0", "128"],
    );
    assert_eq!(out.status.code(), Some(0));
}
