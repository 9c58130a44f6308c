//! Subprocess protocol for external parsers.
//!
//! An external parser is any executable that understands two subcommands:
//!
//! ```text
//! <exe> <base args> predict --model <dir>              < input.conllu > output.conllu
//! <exe> <base args> train --model <dir> --out <dir>    < corpus.conllu
//! ```
//!
//! CoNLL-U travels over standard streams, exit status 0 means success and
//! diagnostics go to standard error.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::conllu::{self, Treebank};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("invalid external parser config: {0}")]
    Config(String),
    #[error("failed to start {executable}: {source}")]
    Spawn {
        executable: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o with external parser: {0}")]
    Io(#[from] std::io::Error),
    #[error("external parser exited with {}: {stderr}", status_text(*.code))]
    Exit { code: Option<i32>, stderr: String },
    #[error("external parser timed out after {0} s")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
}

fn status_text(code: Option<i32>) -> String {
    match code {
        Some(c) => format!("status {c}"),
        None => "a signal".to_string(),
    }
}

impl AdapterError {
    pub fn exit_code(&self) -> Option<i32> {
        match self {
            AdapterError::Exit { code, .. } => *code,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalParserConfig {
    pub executable: PathBuf,
    #[serde(default)]
    pub base_args: Vec<String>,
    pub model_dir: PathBuf,
    /// Seconds; must be positive.
    pub timeout: u64,
    #[serde(default)]
    pub env: Vec<(String, String)>,
}

impl ExternalParserConfig {
    pub fn new(executable: impl Into<PathBuf>, model_dir: impl Into<PathBuf>) -> Self {
        ExternalParserConfig {
            executable: executable.into(),
            base_args: Vec::new(),
            model_dir: model_dir.into(),
            timeout: 600,
            env: Vec::new(),
        }
    }

    /// Same configuration pointing at another model directory.
    pub fn with_model_dir(&self, dir: impl Into<PathBuf>) -> Self {
        ExternalParserConfig {
            model_dir: dir.into(),
            ..self.clone()
        }
    }

    /// Checks that the executable can be found and run and the timeout is
    /// positive.
    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.timeout == 0 {
            return Err(AdapterError::Config("timeout must be positive".into()));
        }
        let exe = resolve_executable(&self.executable).ok_or_else(|| {
            AdapterError::Config(format!("{} not found", self.executable.display()))
        })?;
        if !is_executable(&exe) {
            return Err(AdapterError::Config(format!(
                "{} is not executable",
                exe.display()
            )));
        }
        Ok(())
    }
}

fn resolve_executable(exe: &Path) -> Option<PathBuf> {
    if exe.components().count() > 1 || exe.is_absolute() {
        return exe.is_file().then(|| exe.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(exe))
        .find(|p| p.is_file())
}

#[cfg(unix)]
fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    path.metadata()
        .map(|m| m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}

#[cfg(not(unix))]
fn is_executable(path: &Path) -> bool {
    path.is_file()
}

/// Runs the child, feeding `input` to stdin. Returns stdout on exit 0.
fn run(
    cfg: &ExternalParserConfig,
    args: &[&std::ffi::OsStr],
    input: String,
) -> Result<Vec<u8>, AdapterError> {
    cfg.validate()?;
    let mut cmd = Command::new(&cfg.executable);
    cmd.args(&cfg.base_args)
        .args(args)
        .envs(cfg.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    tracing::debug!(?cmd, "spawning external parser");
    let mut child = cmd.spawn().map_err(|source| AdapterError::Spawn {
        executable: cfg.executable.display().to_string(),
        source,
    })?;

    let mut stdin = child.stdin.take().expect("piped");
    let writer = thread::spawn(move || {
        // a child that exits early closes the pipe; that is reported through
        // its exit status instead
        let _ = stdin.write_all(input.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("piped");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let mut stderr = child.stderr.take().expect("piped");
    let err_reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let status = match child.wait_timeout(Duration::from_secs(cfg.timeout))? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(AdapterError::Timeout(cfg.timeout));
        }
    };
    let _ = writer.join();
    let out = reader.join().expect("reader thread")?;
    let err = err_reader.join().expect("stderr thread");
    if !status.success() {
        return Err(AdapterError::Exit {
            code: status.code(),
            stderr: String::from_utf8_lossy(&err).trim_end().to_string(),
        });
    }
    Ok(out)
}

/// Pseudo-annotates `tb` with the external parser.
///
/// The output must parse as valid CoNLL-U with the same number of sentences
/// and the same FORM sequence in every sentence.
pub fn external_predict(
    cfg: &ExternalParserConfig,
    tb: &Treebank,
) -> Result<Treebank, AdapterError> {
    let out = run(
        cfg,
        &[
            "predict".as_ref(),
            "--model".as_ref(),
            cfg.model_dir.as_os_str(),
        ],
        conllu::serialize(tb),
    )?;
    let text =
        String::from_utf8(out).map_err(|_| AdapterError::Protocol("output is not UTF-8".into()))?;
    let parsed = conllu::parse(&text)
        .map_err(|e| AdapterError::Protocol(format!("invalid CoNLL-U output: {e}")))?;
    check_identity(tb, &parsed)?;
    Ok(parsed)
}

fn check_identity(input: &Treebank, output: &Treebank) -> Result<(), AdapterError> {
    if input.len() != output.len() {
        return Err(AdapterError::Protocol(format!(
            "sentence count {} ≠ {}",
            output.len(),
            input.len()
        )));
    }
    for (i, (a, b)) in input.sentences.iter().zip(&output.sentences).enumerate() {
        if !a.forms().eq(b.forms()) {
            return Err(AdapterError::Protocol(format!(
                "sentence {} ({}) has a different FORM sequence",
                i + 1,
                a.sent_id
            )));
        }
    }
    Ok(())
}

/// Trains a new model from `cfg.model_dir` on `corpus` into `out_model_dir`.
/// Succeeds when the child exits 0 and leaves `out_model_dir` non-empty.
pub fn external_train(
    cfg: &ExternalParserConfig,
    corpus: &Treebank,
    out_model_dir: &Path,
) -> Result<PathBuf, AdapterError> {
    std::fs::create_dir_all(out_model_dir)?;
    run(
        cfg,
        &[
            "train".as_ref(),
            "--model".as_ref(),
            cfg.model_dir.as_os_str(),
            "--out".as_ref(),
            out_model_dir.as_os_str(),
        ],
        conllu::serialize(corpus),
    )?;
    if std::fs::read_dir(out_model_dir)?.next().is_none() {
        return Err(AdapterError::Protocol(format!(
            "output model directory {} is empty",
            out_model_dir.display()
        )));
    }
    Ok(out_model_dir.to_path_buf())
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    const TWO: &str = "# sent_id = a\n# text = x y\n\
        1\tx\t_\tNOUN\t_\t_\t0\troot\t_\t_\n\
        2\ty\t_\tNOUN\t_\t_\t1\tnmod\t_\t_\n\n\
        # sent_id = b\n# text = z\n\
        1\tz\t_\tVERB\t_\t_\t0\troot\t_\t_\n\n";

    fn stub(dir: &Path, body: &str) -> ExternalParserConfig {
        let path = dir.join("stub.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        let model = dir.join("model");
        std::fs::create_dir_all(&model).unwrap();
        std::fs::write(model.join("weights"), "w").unwrap();
        let mut cfg = ExternalParserConfig::new(path, model);
        cfg.timeout = 20;
        cfg
    }

    #[test]
    fn echo_stub_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stub(dir.path(), "cat");
        let tb = conllu::parse(TWO).unwrap();
        assert_eq!(external_predict(&cfg, &tb).unwrap(), tb);
    }

    #[test]
    fn dropped_sentence_is_a_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stub(dir.path(), "sed '/sent_id = b/,$d'");
        let tb = conllu::parse(TWO).unwrap();
        let err = external_predict(&cfg, &tb).unwrap_err();
        assert_eq!(err.to_string(), "protocol error: sentence count 1 ≠ 2");
    }

    #[test]
    fn changed_forms_are_a_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stub(dir.path(), "sed 's/\\tz\\t/\\tq\\t/'");
        let tb = conllu::parse(TWO).unwrap();
        let err = external_predict(&cfg, &tb).unwrap_err();
        assert!(err.to_string().contains("sentence 2 (b)"), "{err}");
    }

    #[test]
    fn exit_code_and_stderr_are_captured() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stub(
            dir.path(),
            "cat >/dev/null; echo 'model broken' >&2; exit 3",
        );
        let tb = conllu::parse(TWO).unwrap();
        let err = external_predict(&cfg, &tb).unwrap_err();
        assert_eq!(err.exit_code(), Some(3));
        assert!(err.to_string().contains("model broken"));
    }

    #[test]
    fn timeout_kills_the_child() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = stub(dir.path(), "exec sleep 30");
        cfg.timeout = 1;
        let tb = conllu::parse(TWO).unwrap();
        let start = std::time::Instant::now();
        assert!(matches!(
            external_predict(&cfg, &tb),
            Err(AdapterError::Timeout(1))
        ));
        assert!(start.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn train_copies_model() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stub(
            dir.path(),
            "cat >/dev/null; while [ $# -gt 0 ]; do case $1 in --model) m=$2;; --out) o=$2;; esac; shift; done; cp -r \"$m\"/. \"$o\"",
        );
        let tb = conllu::parse(TWO).unwrap();
        let out = dir.path().join("out");
        assert_eq!(external_train(&cfg, &tb, &out).unwrap(), out);
        assert_eq!(std::fs::read_to_string(out.join("weights")).unwrap(), "w");
        assert_eq!(
            std::fs::read_to_string(cfg.model_dir.join("weights")).unwrap(),
            "w"
        );
    }

    #[test]
    fn train_with_empty_output_is_a_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stub(dir.path(), "cat >/dev/null; exit 0");
        let tb = conllu::parse(TWO).unwrap();
        let err = external_train(&cfg, &tb, &dir.path().join("out")).unwrap_err();
        assert!(matches!(err, AdapterError::Protocol(_)), "{err}");
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = stub(dir.path(), "cat");
        assert!(cfg.validate().is_ok());
        cfg.timeout = 0;
        assert!(cfg.validate().is_err());
        let missing = ExternalParserConfig::new(dir.path().join("nope"), dir.path());
        assert!(missing.validate().is_err());
        let plain = dir.path().join("plain");
        std::fs::write(&plain, "").unwrap();
        assert!(ExternalParserConfig::new(plain, dir.path())
            .validate()
            .is_err());
        assert!(ExternalParserConfig::new("sh", dir.path())
            .validate()
            .is_ok());
    }
}
