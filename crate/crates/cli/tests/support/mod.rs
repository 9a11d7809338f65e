//! Running the `sentrank` binary against copies of the bundled mini-corpus.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub const BIN: &str = env!("CARGO_BIN_EXE_sentrank");
pub const MINI_FILES: [&str; 6] = [
    "corpus.trec",
    "topics.txt",
    "qrels.txt",
    "folds2.json",
    "folds5.json",
    "config.json",
];

pub fn mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini")
}

/// A fresh directory holding the mini-corpus inputs and its config.
pub fn mini_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in MINI_FILES {
        std::fs::copy(mini_dir().join(f), dir.path().join(f)).unwrap();
    }
    dir
}

/// Runs `sentrank` with the working directory set to `dir`.
pub fn sentrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

/// Runs `sentrank` and fails the test unless it exits 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = sentrank(dir, args);
    assert!(
        out.status.success(),
        "sentrank {args:?} failed ({}):\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

pub fn report(dir: &Path, command: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, &format!("out/reports/{command}.json"))).unwrap()
}

/// Ranked doc ids per topic of a run file.
pub fn run_order(text: &str) -> std::collections::BTreeMap<String, Vec<String>> {
    let mut out: std::collections::BTreeMap<String, Vec<(usize, String)>> = Default::default();
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        out.entry(f[0].to_string())
            .or_default()
            .push((f[3].parse().unwrap(), f[2].to_string()));
    }
    out.into_iter()
        .map(|(t, mut v)| {
            v.sort();
            (t, v.into_iter().map(|(_, d)| d).collect())
        })
        .collect()
}

/// Index, baseline search and a lexical rerank with the config defaults.
pub fn index_search_rerank(dir: &Path) {
    ok(dir, &["index", "--config", "config.json"]);
    ok(dir, &["search", "--config", "config.json"]);
    ok(dir, &["rerank", "--config", "config.json"]);
}

/// The stub scorer binary of the core crate, built on first use.
pub fn stub_scorer() -> &'static Path {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        let path = Path::new(BIN).with_file_name(format!("sentrank-stub-scorer{}", std::env::consts::EXE_SUFFIX));
        if !path.exists() {
            let status = Command::new(env!("CARGO"))
                .args(["build", "-p", "sentrank", "--bin", "sentrank-stub-scorer"])
                .status()
                .unwrap();
            assert!(status.success(), "building the stub scorer failed");
        }
        path
    })
}
