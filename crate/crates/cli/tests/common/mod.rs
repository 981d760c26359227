#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn sample_dir() -> PathBuf {
    repo_root().join("corpus/sample")
}

pub fn fault_dir(kind: &str) -> PathBuf {
    repo_root().join("corpus/faults").join(kind)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn updating_golden() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command in-process with `--library` pointing at the sample
/// corpus unless the arguments name one.
pub fn cli(args: &[&str]) -> Output {
    let mut full: Vec<String> = vec!["scriptalign".into()];
    full.extend(args.iter().map(|a| a.to_string()));
    if !args.contains(&"--library") {
        full.push("--library".into());
        full.push(sample_dir().display().to_string());
    }
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = scriptalign_cli::run_with(full, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn path_str(p: &Path) -> String {
    p.display().to_string()
}
