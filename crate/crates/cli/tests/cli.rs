use std::path::Path;
use std::process::{Command, Output};

fn osgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY: &str = "task = \"gan2d\"\nrounds = 6\nbatch = 16\neval_points = 64\ntiming = false\n";

#[test]
fn train_writes_artifacts_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let o = osgan(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--mode", "two"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("frechet="), "{}", stdout(&o));
    for f in ["config.toml", "metrics.csv", "eval.csv", "final.ckpt", "summary.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("mode = \"two\""), "{resolved}");
}

#[test]
fn identical_seeds_give_identical_metrics_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = osgan(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
        assert!(o.status.success(), "{}", stderr(&o));
        files.push((
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("eval.csv")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn multiple_runs_go_to_seed_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("sweep");
    let o = osgan(&[
        "train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3", "--runs", "2", "--jobs", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("seed-3/metrics.csv").exists());
    assert!(out.join("seed-4/metrics.csv").exists());
}

#[test]
fn unknown_loss_exits_2_and_lists_families() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TINY}loss = \"fisher\"\n"));
    let o = osgan(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for family in osgan::losses::FAMILIES {
        assert!(err.contains(family), "{err}");
    }
}

#[test]
fn malformed_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "task = \"gan2d\"\nrounds = 2\nlearning_rate = 1\n");
    let o = osgan(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
    let o = osgan(&["train", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_2() {
    let o = osgan(&["train", "--mode", "three"]);
    assert_eq!(o.status.code(), Some(2));
    let o = osgan(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_run_exits_3_with_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!("{TINY}loss = \"lsgan\"\n[optimizer]\nlr = 1e200\n"),
    );
    let out = tmp.path().join("run");
    let o = osgan(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(out.join("abort_dump.txt").exists());
    assert!(stderr(&o).contains("abort_dump.txt"), "{}", stderr(&o));
}

#[test]
fn bench_rejects_short_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = osgan(&["bench", "--config", &cfg, "--rounds", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warm-up"), "{}", stderr(&o));
}

#[test]
fn bench_reports_exact_pass_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("bench");
    let o = osgan(&["bench", "--config", &cfg, "--rounds", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("pass-unit ratio 1.5"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert!(csv.starts_with("rounds,warmup,pass_ratio"));
}

#[test]
fn verify_passes_and_fails_with_exit_codes() {
    let o = osgan(&["verify", "--trials", "2", "--seed", "5"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("verify: ok"));
    let o = osgan(&["verify", "--trials", "1", "--seed", "5", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("osgan verify --seed 5 --trials 1"), "{}", stdout(&o));
}

#[test]
fn metrics_subcommand_scores_point_files() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    std::fs::write(&a, "x,y\n2,0\n-2,0\n0,2\n0,-2\n").unwrap();
    std::fs::write(&b, "2,0\n-2,0\n0,2\n0,-2\n").unwrap();
    let o = osgan(&[
        "metrics", a.to_str().unwrap(), b.to_str().unwrap(), "--modes", "4", "--header",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frechet,kid,covered_modes,hq_fraction"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(row[0].abs() < 1e-12);
    assert!(row[1].abs() < 1e-12);
    assert_eq!(row[2], 4.0);
    assert_eq!(row[3], 1.0);

    let o = osgan(&["metrics", a.to_str().unwrap(), tmp.path().join("nope.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn distill_rejects_gan_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = osgan(&["distill", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}
