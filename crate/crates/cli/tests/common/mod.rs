#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn oodkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodkit"))
        .args(args)
        .env_remove("OODKIT_THREADS")
        .output()
        .expect("spawn oodkit")
}

pub fn ok(args: &[&str]) -> Output {
    let out = oodkit(args);
    assert!(
        out.status.success(),
        "oodkit {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn table3() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/table3_fpr.csv")
}

/// Runs synth → fit → score → eval for `methods` and returns the eval
/// output paths keyed by method name.
pub fn pipeline(root: &Path, spec: &str, methods: &[&str]) -> Vec<(String, PathBuf)> {
    let spec_path = root.join("spec.json");
    fs::write(&spec_path, spec).unwrap();
    let data = root.join("data");
    let state = root.join("state");
    let scores = root.join("scores");
    fs::create_dir_all(&scores).unwrap();
    ok(&["synth", "--spec", path_str(&spec_path), "--out", path_str(&data)]);
    let head = format!("{},{}", path_str(&data.join("head_weight.oodt")), path_str(&data.join("head_bias.oodt")));
    let list = methods.join(",");
    ok(&[
        "fit", "--train", path_str(&data.join("train.json")), "--head", &head, "--methods", &list,
        "--k", "10", "--out", path_str(&state),
    ]);
    let mut results = Vec::new();
    for m in methods {
        let id = scores.join(format!("{m}.id.oodt"));
        let ood = scores.join(format!("{m}.ood.oodt"));
        for (split, out) in [("id_test", &id), ("ood", &ood)] {
            ok(&[
                "score", "--state", path_str(&state), "--data", path_str(&data.join(format!("{split}.json"))),
                "--method", m, "--out", path_str(out),
            ]);
        }
        let eval = root.join(format!("{m}.eval.json"));
        ok(&[
            "eval", "--id", path_str(&id), "--ood", &format!("synth={}", path_str(&ood)), "--out", path_str(&eval),
        ]);
        results.push((m.to_string(), eval));
    }
    results
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
