use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--synth.nodes=6",
    "--synth.steps=240",
    "--reservoir.units=8",
    "--reservoir.layers=2",
    "--decoder.hidden=[16, 16]",
    "--decoder.group_width=8",
    "--decoder.horizon=3",
    "--train.max_epochs=2",
    "--train.batches_per_epoch=15",
    "--train.batch_size=16",
];

fn sgp(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgp"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("SGP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(workdir: &Path, args: &[&str]) -> String {
    let out = sgp(workdir, args);
    assert!(
        out.status.success(),
        "sgp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with(cmd: &str, extra: &[&str]) -> Vec<String> {
    std::iter::once(cmd)
        .chain(SMALL.iter().copied())
        .chain(extra.iter().copied())
        .map(String::from)
        .collect()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default().to_string();
    assert!(line.starts_with("error: kind="), "unexpected stderr: {stderr}");
    assert!(line.contains(" msg=\""));
    line["error: kind=".len()..].split(' ').next().unwrap().to_string()
}

#[test]
fn synth_precompute_train_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let synth = ok(w, &args(&with("synth", &[])));
    assert!(synth.contains("values.csv") && synth.contains("edges.csv"));

    let from_files = ["--data.path=synth/values.csv", "--data.edges=synth/edges.csv"];
    let pre = ok(w, &args(&with("precompute", &from_files)));
    assert!(pre.starts_with("store=") && pre.contains("nodes=6 steps=240"));

    let train = ok(w, &args(&with("train", &from_files)));
    assert!(train.contains("run_dir=") && train.contains("updates=30"));
    for f in ["config.toml", "history.csv", "checkpoint.sgpc", "metrics.txt"] {
        assert!(w.join("run").join(f).exists(), "{f} missing");
    }
    let history = std::fs::read_to_string(w.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_mae,val_mae,batch_per_sec"));
    assert_eq!(history.lines().count(), 3);

    let eval = ok(w, &args(&with("eval", &from_files)));
    let metrics = std::fs::read_to_string(w.join("run/metrics.txt")).unwrap();
    assert_eq!(eval, metrics);
    assert!(eval.starts_with("overall mae="));
    assert!(eval.contains("horizon_3 "));
}

#[test]
fn rerunning_from_the_saved_config_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &args(&with("precompute", &[])));
    let first = ok(w, &args(&with("train", &[])));
    let snapshot = w.join("snapshot.toml");
    std::fs::copy(w.join("run/config.toml"), &snapshot).unwrap();
    let again = ok(w, &["train", "--config", snapshot.to_str().unwrap(), "--output.run_dir=run2"]);
    let strip = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&first), strip(&again));
}

#[test]
fn train_without_store_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgp(dir.path(), &args(&with("train", &[])));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "missing_artifact");
}

#[test]
fn stale_store_is_not_reused() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &args(&with("precompute", &[])));
    let out = sgp(w, &args(&with("train", &["--reservoir.seed=9"])));
    assert_eq!(error_kind(&out), "fingerprint");
    let out = sgp(w, &args(&with("precompute", &["--reservoir.seed=9"])));
    assert_eq!(error_kind(&out), "fingerprint");
    ok(w, &args(&with("precompute", &["--reservoir.seed=9", "--output.force=true"])));
}

#[test]
fn schema_violations_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    for bad in [
        "--train.learning_rate=0.1",
        "--decoder.variant=huge",
        "--train.batch_size=0",
        "--reservoir.spectral_radius=1.2",
    ] {
        let out = sgp(w, &["precompute", bad]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert_eq!(error_kind(&out), "config", "{bad}");
    }
    std::fs::write(w.join("bad.toml"), "[decoder]\nwidth = 3\n").unwrap();
    let out = sgp(w, &["precompute", "--config", "bad.toml"]);
    assert_eq!(error_kind(&out), "config");
    assert!(std::fs::read_dir(w).unwrap().count() == 1, "no artifacts written");
}

#[test]
fn unknown_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgp(dir.path(), &["fly"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn ablate_writes_one_run_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let out = ok(
        w,
        &args(&with("ablate", &["--variant", "no_space_enc", "--variant", "fc_dec"])),
    );
    for v in ["no_space_enc", "fc_dec"] {
        assert!(out.contains(&format!("variant={v} ")));
        assert!(out.contains(&format!("{v} overall mae=")));
        assert!(w.join(format!("ablate-{v}/checkpoint.sgpc")).exists());
        assert!(w.join(format!("store-{v}.sgpe")).exists());
    }
}

#[test]
fn benchmark_reports_each_size_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &args(&with(
            "benchmark",
            &["--benchmark.nodes=[5, 20]", "--benchmark.steps=40", "--benchmark.batches=12", "--benchmark.trim=2"],
        )),
    );
    assert!(out.contains("nodes=5 batch_per_sec="));
    assert!(out.contains("nodes=20 batch_per_sec="));
    assert!(out.lines().last().unwrap().starts_with("time_ratio="));
}
