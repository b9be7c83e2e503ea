//! Helpers shared by the integration targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn tlsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlsim")).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// train.csv's last column and the manifest's wall-clock field are the only
/// parts of any artifact allowed to differ between runs.
pub fn masked(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    match path.file_name().and_then(|n| n.to_str()) {
        Some("manifest.json") => {
            let mut v: Value = serde_json::from_str(&text).unwrap();
            v["wallclock_s"] = Value::Null;
            v["out"] = Value::Null;
            v.to_string()
        }
        Some("train.csv") => text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n"),
        _ => text,
    }
}

pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

pub fn assert_same_outputs(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    let rel = |fs: &[PathBuf], root: &Path| fs.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    assert_eq!(rel(&fa, a), rel(&fb, b));
    for (x, y) in fa.iter().zip(&fb) {
        if x.extension().is_some_and(|e| e == "tlqn") {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
        } else {
            assert_eq!(masked(x), masked(y), "{}", x.display());
        }
    }
}
