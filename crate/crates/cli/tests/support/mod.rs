#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icpl_core::oracles::{synthetic_corpus, SyntheticSpec};

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn icpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icpl"))
        .args(args)
        .env_remove("ICPL_CORPUS")
        .env_remove("ICPL_USERS")
        .env_remove("ICPL_OUT")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn icpl")
}

/// Run `icpl` and fail loudly on a non-zero exit.
pub fn icpl_ok(args: &[&str]) -> serde_json::Value {
    let out = icpl(args);
    assert!(
        out.status.success(),
        "icpl {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Write a synthetic corpus into `dir` and return the global flags that point at it.
pub fn synthetic_inputs(dir: &Path, spec: SyntheticSpec) -> Vec<String> {
    let (news, users) = synthetic_corpus(&spec).write_tsv(dir).expect("write corpus");
    vec![
        "--corpus".into(),
        news.display().to_string(),
        "--users".into(),
        users.display().to_string(),
        "--out".into(),
        dir.join("out").display().to_string(),
    ]
}

pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect()
}
