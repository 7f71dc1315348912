use std::path::Path;
use std::process::{Command, Output};

fn multisage(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multisage"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "world.n_users = 20\nworld.pins_per_topic = 120\nworld.background_pins = 800\nworld.n_topics = 8\n\
                     embeddings = embeddings.bin\nactions = actions.jsonl\nstore = store.jsonl\nindex = index.bin\n";

fn small_corpus() -> tempfile::TempDir {
    corpus_with(SMALL)
}

fn corpus_with(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.conf"), config).unwrap();
    let out = multisage(dir.path(), &["--config", "small.conf", "gen", "--out-dir", "."]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let help = multisage(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for cmd in ["gen", "batch", "replay", "index", "retrieve", "eval", "bench"] {
        assert!(stdout(&help).contains(cmd), "help lists {cmd}");
    }
    let version = multisage(dir.path(), &["--version"]);
    assert_eq!(version.status.code(), Some(0));
    assert!(stdout(&version).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = multisage(dir.path(), &["batch", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn negative_alpha_names_the_field() {
    let dir = small_corpus();
    let out = multisage(dir.path(), &["--config", "small.conf", "batch", "--alpha", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`alpha`"), "{}", stderr(&out));
}

#[test]
fn config_bounds_are_checked_at_load() {
    let dir = tempfile::tempdir().unwrap();
    for (line, field) in [("lambda = -2", "lambda"), ("e = 0", "e"), ("e = 5\nbudget = 4", "budget")] {
        std::fs::write(dir.path().join("bad.conf"), line).unwrap();
        let out = multisage(dir.path(), &["--config", "bad.conf", "bench", "--sizes", "10"]);
        assert_eq!(out.status.code(), Some(1), "{line}");
        assert!(stderr(&out).contains(&format!("`{field}`")), "{}", stderr(&out));
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = multisage(
        dir.path(),
        &["batch", "--actions", "nope.jsonl", "--embeddings", "nope.bin", "--out", "s.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn missing_path_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = multisage(dir.path(), &["batch"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--actions"));
}

#[test]
fn gen_batch_retrieve_produces_recommendations() {
    let dir = small_corpus();
    let c = ["--config", "small.conf"];
    for file in ["embeddings.bin", "actions.jsonl", "labels.jsonl", "interests.jsonl"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    for step in [&["batch"][..], &["index", "build"]] {
        let args: Vec<&str> = c.iter().chain(step).copied().collect();
        let out = multisage(dir.path(), &args);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = multisage(dir.path(), &["--config", "small.conf", "retrieve", "--user", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(line["user"], 1);
    assert!(!line["pins"].as_array().unwrap().is_empty());
    assert!(line["pins"].as_array().unwrap().len() <= 400);

    // Same answer with the cache off.
    let uncached = multisage(dir.path(), &["--config", "small.conf", "retrieve", "--user", "1", "--no-cache"]);
    assert_eq!(stdout(&out), stdout(&uncached));
}

#[test]
fn replay_overlays_and_index_tools() {
    let dir = small_corpus();
    let c = ["--config", "small.conf"];
    for step in [&["batch", "--as-of", "2024-01-20"][..], &["index", "build"]] {
        let args: Vec<&str> = c.iter().chain(step).copied().collect();
        assert!(multisage(dir.path(), &args).status.success());
    }
    // Replay the next day's actions.
    let actions = std::fs::read_to_string(dir.path().join("actions.jsonl")).unwrap();
    let day: String = actions
        .lines()
        .filter(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let ts = v["ts"].as_u64().unwrap();
            (1_705_795_200..1_705_881_600).contains(&ts)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(!day.is_empty());
    std::fs::write(dir.path().join("day.jsonl"), day).unwrap();
    let out = multisage(dir.path(), &["--config", "small.conf", "replay", "--events", "day.jsonl", "--out", "served.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let counters: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(counters["applied"].as_u64().unwrap() > 0);
    assert!(std::fs::read_to_string(dir.path().join("served.jsonl")).unwrap().contains("\"online\""));

    // Replaying events older than the store's version is rejected.
    let out = multisage(dir.path(), &["--config", "small.conf", "replay", "--events", "actions.jsonl"]);
    assert_eq!(out.status.code(), Some(1));

    let q = multisage(dir.path(), &["--config", "small.conf", "index", "query", "--pin", "3", "--k", "5"]);
    assert!(q.status.success(), "{}", stderr(&q));
    let v: serde_json::Value = serde_json::from_str(stdout(&q).trim()).unwrap();
    assert_eq!(v["neighbors"].as_array().unwrap().len(), 5);
    assert_eq!(v["neighbors"][0]["pin"], 3);

    let b = multisage(dir.path(), &["--config", "small.conf", "index", "bench", "--queries", "50", "--beams", "20,100"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let csv = stdout(&b);
    assert!(csv.starts_with("query_beam,recall@10,mean_query_us\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn eval_suites_write_reports() {
    // No index path: the suites build one in memory.
    let dir = corpus_with(&SMALL.replace("index = index.bin\n", ""));
    let out = multisage(
        dir.path(),
        &["--config", "small.conf", "eval", "--suite", "next-action", "--out-dir", "na"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("| LastPin | "));
    assert!(stdout(&out).contains("| Oracle | "));
    let csv = std::fs::read_to_string(dir.path().join("na/report.csv")).unwrap();
    assert!(csv.starts_with("model,next_action,"));

    let out = multisage(
        dir.path(),
        &["--config", "small.conf", "eval", "--suite", "ranking", "--out-dir", "rk"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("R-precision"));
    assert!(stdout(&out).contains("PinnerSage(Ward, Medoid"));

    // The diversity suite needs ground-truth interests.
    let out = multisage(dir.path(), &["--config", "small.conf", "eval", "--suite", "diversity"]);
    assert_eq!(out.status.code(), Some(1));
    let out = multisage(
        dir.path(),
        &["--config", "small.conf", "eval", "--suite", "diversity", "--interests", "interests.jsonl", "--out-dir", "dv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("dv/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn json_logs_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = multisage(dir.path(), &["--log", "json", "--threads", "1", "bench", "--sizes", "50,100", "--repeats", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("m,mean_seconds,pushes,push_bound,merges,clusters\n"));
    let bad = multisage(dir.path(), &["--log", "json", "--set", "alpha=-3", "bench", "--sizes", "10"]);
    assert_eq!(bad.status.code(), Some(1));
    let line = stderr(&bad);
    let v: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(v["level"], "ERROR");
}
