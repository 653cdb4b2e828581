use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn listnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_listnet"))
        .args(args)
        .env_remove("LISTNET_SEED")
        .output()
        .expect("spawn listnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, queries: usize, docs: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let o = listnet(&[
        "synth",
        "--queries",
        &queries.to_string(),
        "--docs",
        &docs.to_string(),
        "--dim",
        "4",
        "--seed",
        &seed.to_string(),
        "--out",
        s(&path),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

#[test]
fn train_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 10, 6, 1);
    let out = dir.path().join("run");
    let o = listnet(&["train", "--data", s(&data), "--k", "2", "--iters", "4", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["model.txt", "report.csv", "report.txt", "manifest.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,loss,eta,seconds"));
    assert_eq!(csv.lines().count(), 5);
    let weights = fs::read_to_string(out.join("model.txt")).unwrap();
    assert_eq!(weights.lines().count(), 4);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("input.sha256.train"));
    assert!(stdout(&o).contains("P@1"));
}

#[test]
fn zero_order_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 2, 4, 1);
    let o = listnet(&["train", "--data", s(&data), "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = listnet(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn conventional_top3_on_long_lists_is_refused() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 2, 40, 1);
    let o = listnet(&[
        "train",
        "--data",
        s(&data),
        "--mode",
        "conventional",
        "--k",
        "3",
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("59280"), "{err}");
    assert!(err.contains("stochastic"), "{err}");
}

#[test]
fn manifest_replays_the_run() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 8, 6, 3);
    let first = dir.path().join("a");
    let o = listnet(&[
        "train", "--data", s(&data), "--k", "2", "--mode", "stochastic", "--sampler", "adaptive",
        "--lists", "10", "--iters", "5", "--seed", "11", "--out", s(&first),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = dir.path().join("b");
    let manifest = first.join("manifest.txt");
    let o = listnet(&["train", "--config", s(&manifest), "--out", s(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let losses = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("report.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(losses(&first), losses(&second));
    assert_eq!(
        fs::read_to_string(first.join("model.txt")).unwrap(),
        fs::read_to_string(second.join("model.txt")).unwrap()
    );
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 4, 5, 2);
    let run = |name: &str, env_seed: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_listnet"));
        cmd.args(["train", "--data", s(&data), "--iters", "2", "--out", s(&out)]);
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        match env_seed {
            Some(v) => cmd.env("LISTNET_SEED", v),
            None => cmd.env_remove("LISTNET_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(out.join("model.txt")).unwrap()
    };
    assert_eq!(run("env", Some("42"), None), run("flag", None, Some("42")));
    assert_eq!(run("override", Some("7"), Some("42")), run("flag2", None, Some("42")));
    assert_ne!(run("default", None, None), run("flag3", None, Some("42")));
}

#[test]
fn synth_is_deterministic_and_parses() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "a.txt", 30, 9, 5);
    let b = synth(dir.path(), "b.txt", 30, 9, 5);
    let c = synth(dir.path(), "c.txt", 30, 9, 6);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_ne!(text, fs::read_to_string(&c).unwrap());

    let ds = listnet::parse_letor_str(&text).unwrap();
    assert_eq!(ds.queries().len(), 30);
    assert_eq!(ds.num_documents(), 270);
    // Noise-free terciles: three documents per label in every query.
    for q in ds.queries() {
        let mut counts = [0; 3];
        for d in q.documents() {
            counts[d.label as usize] += 1;
        }
        assert_eq!(counts, [3, 3, 3], "query {}", q.query_id);
    }
}

#[test]
fn eval_with_model() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 10, 6, 1);
    let run = dir.path().join("run");
    assert!(listnet(&["train", "--data", s(&data), "--iters", "3", "--out", s(&run)]).status.success());
    let o = listnet(&["eval", "--data", s(&data), "--model", s(&run.join("model.txt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("split,cutoff,mean,std,runs"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("train,1,"));
    assert!(rows[0].ends_with(",1"));
}

#[test]
fn eval_missing_model_fails() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 3, 4, 1);
    let o = listnet(&["eval", "--data", s(&data), "--model", s(&dir.path().join("nope.txt"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_single_repeat_matches_train() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 10, 6, 1);
    let run = dir.path().join("run");
    assert!(listnet(&["train", "--data", s(&data), "--iters", "3", "--seed", "9", "--out", s(&run)])
        .status
        .success());
    let with_model = listnet(&["eval", "--data", s(&data), "--model", s(&run.join("model.txt"))]);
    let repeated = listnet(&["eval", "--data", s(&data), "--iters", "3", "--repeats", "1", "--seed-base", "9"]);
    assert!(repeated.status.success(), "{}", stderr(&repeated));
    assert_eq!(stdout(&with_model), stdout(&repeated));
}

#[test]
fn eval_repeats_report_spread() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "train.txt", 10, 6, 1);
    let csv = dir.path().join("summary.csv");
    let o = listnet(&[
        "eval", "--data", s(&data), "--test", s(&data), "--mode", "stochastic", "--lists", "5",
        "--iters", "2", "--repeats", "20", "--jobs", "2", "--out", s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[4], "20");
        let std: f64 = r[3].parse().unwrap();
        assert!(std.is_finite() && std >= 0.0);
    }
    assert!(rows.iter().any(|r| r[0] == "test"));
}

fn gradcheck_error(h: &str) -> f64 {
    let o = listnet(&["gradcheck", "--instances", "10", "--h", h, "--tol", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "ok"));
    text.lines()
        .find_map(|l| l.strip_prefix("max_absolute_error = "))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn gradcheck_error_grows_with_step() {
    assert!(gradcheck_error("1e-3") > gradcheck_error("1e-5"));
}

#[test]
fn gradcheck_fails_over_tolerance() {
    let o = listnet(&["gradcheck", "--instances", "5", "--h", "0.5", "--tol", "1e-12", "--abs-tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn enumerate_prints_distribution() {
    let o = listnet(&["enumerate", "--n", "3", "--k", "2", "--scores", "1,0,-1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[6], "sum\t1.000000");
    let total: f64 = lines[..6]
        .iter()
        .map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-5);
}

#[test]
fn bench_writes_csv() {
    let o = listnet(&["bench", "--n", "8", "--queries", "3", "--k", "1,2", "--lists", "5", "--iters", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mode,k,l,n,seconds_per_iter"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().any(|r| r.starts_with("conventional,2,56,8,")));
}
