#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iterbank::conllu::{self, Treebank};

pub const CORPUS: &str = include_str!("../../../core/testdata/synthetic-tr-300.conllu");

pub fn corpus() -> Treebank {
    conllu::parse(CORPUS).unwrap()
}

pub fn slice(tb: &Treebank, from: usize, to: usize) -> Treebank {
    Treebank::new(tb.sentences[from..to].to_vec())
}

pub fn write(dir: &Path, name: &str, tb: &Treebank) -> PathBuf {
    let path = dir.join(name);
    conllu::write_file(&path, tb).unwrap();
    path
}

pub fn iterbank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iterbank"))
}

pub fn run(args: &[&str]) -> Output {
    iterbank().args(args).output().unwrap()
}

/// Runs and insists on success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "iterbank {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A project with `base` training sentences and `pool` pool sentences
/// taken from the synthetic corpus. Returns the project dir and the pool
/// file (which doubles as gold for the scripted annotator).
pub fn small_project(dir: &Path, base: usize, pool: usize, batch: usize) -> (PathBuf, PathBuf) {
    let tb = corpus();
    let base_file = write(dir, "base.conllu", &slice(&tb, 0, base));
    let pool_file = write(dir, "pool.conllu", &slice(&tb, 200, 200 + pool));
    let project = dir.join("proj");
    ok(&[
        "init",
        "-p",
        s(&project),
        "--pool",
        s(&pool_file),
        "--base-train",
        s(&base_file),
        "--batch-size",
        &batch.to_string(),
        "--epochs",
        "2",
        "--seed",
        "3",
    ]);
    (project, pool_file)
}
