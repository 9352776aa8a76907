//! End-to-end checks of the `gfp` binary: outputs, determinism and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gfp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfp"))
        .args(args)
        .current_dir(cwd)
        .env("GFP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn gendata(cwd: &Path, out: &str) {
    let o = gfp(
        &["gendata", "--env", "bandit-bimodal", "--n", "2000", "--mix", "low-mode=0.5,expert=0.5", "--seed", "1", "--out", out],
        cwd,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn tiny_config(cwd: &Path) {
    let cfg = serde_json::json!({
        "env_id": "bandit-bimodal",
        "dataset_path": "data",
        "total_steps": 30,
        "batch_size": 16,
        "hidden_dims": [8, 8],
        "time_embed_dim": 4,
        "euler_steps": 4,
        "eval_every": 15,
        "eval_episodes": 8
    });
    fs::write(cwd.join("cfg.json"), cfg.to_string()).unwrap();
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    gendata(tmp.path(), "data");
    tiny_config(tmp.path());
    tmp
}

fn metrics_column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn gendata_reports_the_manifest_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    gendata(tmp.path(), "a");
    gendata(tmp.path(), "b");
    for file in ["manifest.json", "s.bin", "a.bin", "r.bin", "s_next.bin", "terminal.bin"] {
        assert_eq!(fs::read(tmp.path().join("a").join(file)).unwrap(), fs::read(tmp.path().join("b").join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 2000);
}

#[test]
fn gendata_rejects_a_bad_mix() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gfp(&["gendata", "--env", "two-goal", "--n", "10", "--mix", "expert=2", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mix"), "{}", stderr(&o));
}

#[test]
fn train_writes_one_metrics_row_per_step_and_eval_reads_the_checkpoint() {
    let tmp = setup();
    let o = gfp(&["train", "--config", "cfg.json", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&o);
    assert_eq!(report["steps"], 30);
    assert!(report["actor"]["normalized_score"].is_number());
    assert_eq!(metrics_column(&tmp.path().join("run/metrics.csv"), "step").len(), 30);

    for policy in ["actor", "vabc"] {
        let args = ["eval", "--run", "run", "--policy", policy, "--episodes", "20", "--seed", "4"];
        let first = gfp(&args, tmp.path());
        assert_eq!(code(&first), 0, "{}", stderr(&first));
        let second = gfp(&args, tmp.path());
        assert_eq!(first.stdout, second.stdout);
        let r = json(&first);
        assert_eq!(r["policy"], policy);
        assert_eq!(r["episodes"], 20);
        assert!(r["mean_return"].is_number() && r["normalized_score"].is_number());
    }
    let direct = gfp(&["eval", "--run", "run/checkpoint"], tmp.path());
    assert_eq!(code(&direct), 0, "{}", stderr(&direct));
}

#[test]
fn unguided_override_gives_unit_mean_weight() {
    let tmp = setup();
    let o = gfp(&["train", "--config", "cfg.json", "--set", "guidance.mode=none", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let g = metrics_column(&tmp.path().join("run/metrics.csv"), "g_mean");
    assert!(g.iter().all(|v| v.parse::<f64>().unwrap() == 1.0));
}

#[test]
fn resumed_training_continues_the_metrics_file() {
    let tmp = setup();
    let o = gfp(&["train", "--config", "cfg.json", "--set", "total_steps=15", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = gfp(&["train", "--config", "cfg.json", "--resume", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = gfp(&["train", "--config", "cfg.json", "--out", "full"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(tmp.path().join("run/metrics.csv")).unwrap(), fs::read(tmp.path().join("full/metrics.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_usage_status() {
    let tmp = setup();
    fs::write(tmp.path().join("bad.json"), r#"{"env_id": "bandit-bimodal"}"#).unwrap();
    let o = gfp(&["train", "--config", "bad.json"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dataset_path"), "{}", stderr(&o));

    let o = gfp(&["train", "--config", "cfg.json", "--set", "eta=-1"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("eta"), "{}", stderr(&o));

    let o = gfp(&["eval", "--run", "nowhere"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_emits_one_sorted_row_per_run() {
    let tmp = setup();
    let o = gfp(
        &["sweep", "--config", "cfg.json", "--axis", "eta", "--eta", "1e-1,1e-3,1e-5", "--seeds", "1,0", "--set", "total_steps=10", "--out", "sweep.csv"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let tails: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("g_p_gt_")).map(|(i, _)| i).collect();
    assert_eq!(tails.len(), 5);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let keys: Vec<(f64, u64)> = rows.iter().map(|x| (x[0].parse().unwrap(), x[2].parse().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    assert_eq!(keys, sorted);
    for row in &rows {
        assert_eq!(&row[3], "ok");
        let p: Vec<f64> = tails.iter().map(|&i| row[i].parse().unwrap()).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "{p:?}");
    }
}

#[test]
fn profile_counts_tasks_above_each_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("scores.csv"), "task,algorithm,score\nt1,gfp,100\nt2,gfp,0\nt1,fql,40\nt2,fql,60\n").unwrap();
    let o = gfp(&["profile", "--scores", "scores.csv", "--taus", "-1,50,99"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<(String, f64, f64)> = r
        .records()
        .map(|x| {
            let x = x.unwrap();
            (x[0].to_string(), x[1].parse().unwrap(), x[2].parse().unwrap())
        })
        .collect();
    let frac = |alg: &str, tau: f64| rows.iter().find(|r| r.0 == alg && r.1 == tau).unwrap().2;
    assert_eq!(frac("gfp", 50.0), 0.5);
    assert_eq!(frac("gfp", -1.0), 1.0);
    assert_eq!(frac("fql", 50.0), 0.5);
    assert_eq!(frac("fql", 99.0), 0.0);

    fs::write(tmp.path().join("empty.csv"), "task,algorithm,score\n").unwrap();
    let o = gfp(&["profile", "--scores", "empty.csv", "--taus", "0"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_exit_status_follows_the_outcome() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gfp(&["gradcheck"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["passed"], true);
    assert_eq!(code(&gfp(&["gradcheck", "--tolerance", "1e-12"], tmp.path())), 1);
    assert_eq!(code(&gfp(&["gradcheck", "--corrupt"], tmp.path())), 1);
}
