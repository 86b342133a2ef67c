use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_tmcc-qkd");

fn tmcc(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("TMCC_QKD_CONFIG").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn stats_vacuum_is_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f1.csv");
    assert!(tmcc(&["stats", "--lambda", "0", "--figure", "1", "--out", p(&out)]).status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "n,p_tmcc,p_poisson\n0,1.00000000000,1.00000000000\n");
}

#[test]
fn stats_figures_two_and_three() {
    let dir = tempfile::tempdir().unwrap();
    let (f2, f3) = (dir.path().join("f2.csv"), dir.path().join("f3.csv"));
    assert!(tmcc(&["stats", "--figure", "2", "--out", p(&f2)]).status.success());
    assert!(tmcc(&["stats", "--figure", "3", "--out", p(&f3)]).status.success());
    assert_eq!(header(&f2), "mean_n,mandel_q");
    let r2 = rows(&f2);
    assert_eq!(r2.len(), 100);
    assert!(r2.iter().all(|r| r[1] < 0.0));
    assert_eq!(header(&f3), "mean_n,sigma2_tmcc,sigma2_poisson");
    let r3 = rows(&f3);
    assert_eq!(r3.len(), 50);
    assert!(r3.iter().all(|r| r[1] < r[2]));
}

#[test]
fn figure_one_columns_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f1.csv");
    assert!(tmcc(&["stats", "--lambda", "2", "--out", p(&out)]).status.success());
    let r = rows(&out);
    assert!((r.iter().map(|r| r[1]).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((r.iter().map(|r| r[2]).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((r[0][1] - 0.088_480_526_076_449_89).abs() < 1e-13);
}

#[test]
fn simulate_noiseless_keys_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = tmcc(&[
        "simulate",
        "--lambda",
        "2",
        "--epsilon",
        "0",
        "--pulses",
        "10000",
        "--calibration-runs",
        "100",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (std::fs::read(out.join("alice.key")).unwrap(), std::fs::read(out.join("bob.key")).unwrap());
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("10000:"));
    let log = std::fs::read_to_string(out.join("pulses.csv")).unwrap();
    assert_eq!(log.lines().count(), 10_001);
    assert!(log.starts_with("pulse_index,n_a,n_b,n_e,noise_a,noise_b\n"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pulse_count"], 10_000);
    assert_eq!(report["calibration_runs"], 100);
}

#[test]
fn split_sweep_distances_grow_as_p_falls() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    assert!(tmcc(&["attack-split", "--lambda", "2", "--sweep", "--out", p(&out)]).status.success());
    assert_eq!(header(&out), "p,hs_dist_bob,hs_dist_eve,weak_dist");
    let r = rows(&out);
    assert_eq!(r.len(), 21);
    assert_eq!((r[0][0], r[20][0]), (1.0, 0.0));
    assert!(r.windows(2).all(|w| w[1][0] < w[0][0] && w[1][1] >= w[0][1] && w[1][3] >= w[0][3]));
    assert!(r.windows(2).all(|w| w[1][2] <= w[0][2]));
}

#[test]
fn attack_scenarios_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let clone = dir.path().join("clone");
    let split = dir.path().join("split");
    let o = tmcc(&[
        "attack-clone",
        "--lambda",
        "2",
        "--clone-strategy",
        "tmcc-clone",
        "--calibration-runs",
        "200",
        "--out",
        p(&clone),
    ]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("verdict: SUSPECT_CLONE"));
    let report = std::fs::read_to_string(clone.join("report.json")).unwrap();
    assert!(report.contains("\"verdict\": \"SUSPECT_CLONE\""));

    let o =
        tmcc(&["attack-split", "--lambda", "2", "--split-p2", "0.5", "--calibration-runs", "200", "--out", p(&split)]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(split.join("report.json")).unwrap().contains("\"verdict\": \"SUSPECT_SPLIT\""));

    // The detect command reproduces the verdict from the pulse log alone.
    let o = tmcc(&["detect", "--lambda", "2", "--calibration-runs", "200", "--input", p(&split.join("pulses.csv"))]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text, std::fs::read_to_string(split.join("report.json")).unwrap());
}

#[test]
fn same_seed_same_bytes_different_seed_different_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, seed: &str| {
        let out = dir.path().join(tag);
        let args = ["simulate", "--lambda", "1.5", "--epsilon", "0.1", "--pulses", "3000", "--seed", seed];
        assert!(Command::new(BIN)
            .args(args)
            .args(["--calibration-runs", "20", "--out", p(&out)])
            .output()
            .unwrap()
            .status
            .success());
        std::fs::read(out.join("pulses.csv")).unwrap()
    };
    assert_eq!(run("a", "7"), run("b", "7"));
    assert_ne!(run("a", "7"), run("c", "8"));
}

#[test]
fn validation_failures_leave_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    for args in [
        vec!["simulate", "--lambda", "2", "--epsilon", "0.9"],
        vec!["simulate", "--lambda", "-1"],
        vec!["simulate", "--lambda", "2", "--pulses", "1"],
        vec!["attack-split", "--lambda", "2", "--split-p2", "1.5"],
        vec!["attack-clone", "--lambda", "2", "--clone-strategy", "photocopier"],
        vec!["stats", "--figure", "9"],
    ] {
        let o = Command::new(BIN).args(&args).args(["--out", p(&out)]).output().unwrap();
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
        assert!(!out.exists(), "{args:?}");
    }
}

#[test]
fn exit_codes_for_usage_and_help() {
    assert_eq!(tmcc(&[]).status.code(), Some(1));
    assert_eq!(tmcc(&["teleport"]).status.code(), Some(1));
    assert_eq!(tmcc(&["--help"]).status.code(), Some(0));
    assert_eq!(tmcc(&["detect", "--lambda", "2", "--input", "/does/not/exist"]).status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("f1.csv");
    std::fs::write(&cfg, format!(r#"{{"lambda": 0, "figure": 1, "out": "{}"}}"#, p(&out))).unwrap();
    let o = Command::new(BIN).arg("stats").env("TMCC_QKD_CONFIG", &cfg).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&out).len(), 1);
    let o = Command::new(BIN).args(["stats", "--lambda", "2"]).env("TMCC_QKD_CONFIG", &cfg).output().unwrap();
    assert!(o.status.success());
    assert!(rows(&out).len() > 1);

    std::fs::write(&cfg, r#"{"lamda": 2}"#).unwrap();
    let o = Command::new(BIN).args(["stats", "--out", p(&out)]).env("TMCC_QKD_CONFIG", &cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn figures_writes_every_data_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("figs");
    assert!(tmcc(&["figures", "--out", p(&out)]).status.success());
    let expected = [
        ("fig1.csv", "n,p_tmcc,p_poisson"),
        ("fig2.csv", "mean_n,mandel_q"),
        ("fig3.csv", "mean_n,sigma2_tmcc,sigma2_poisson"),
        ("fig5.csv", "p,hs_dist_bob,hs_dist_eve,weak_dist"),
        ("fig6.csv", "lambda,mean_n,mandel_q_original,mandel_q_cloned,hs_dist,weak_dist"),
    ];
    for (name, head) in expected {
        assert_eq!(header(&out.join(name)), head);
    }
    let fig6 = rows(&out.join("fig6.csv"));
    assert_eq!(fig6.len(), 40);
    assert!(fig6.iter().all(|r| r[4] > 0.0 && r[5] > 0.0 && r[3] != r[2]));
    let mut names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
}

#[test]
fn reconcile_connect_without_responder_exits_three_after_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("k.key");
    std::fs::write(&key, "8:a5\n").unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let start = Instant::now();
    let o =
        tmcc(&["reconcile-connect", "--key", p(&key), "--peer", &format!("127.0.0.1:{port}"), "--timeout-secs", "0.5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(start.elapsed() >= Duration::from_millis(500));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "ABORT\n");
}

#[test]
fn reconcile_rejects_bad_key_file() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("k.key");
    std::fs::write(&key, "12:zz\n").unwrap();
    let o = tmcc(&["reconcile-connect", "--key", p(&key), "--peer", "127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(1));
}
