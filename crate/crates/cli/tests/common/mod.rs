#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Run the CLI in-process; returns the exit code and stdout.
pub fn audit(runs: &Path, args: &[&str]) -> (i32, String) {
    let mut argv = vec!["audit".to_string(), "--runs-dir".into(), runs.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let mut out = Vec::new();
    let code = leakaudit_cli::main_with_args(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

pub fn run_golden(runs: &Path, extra: &[&str]) -> PathBuf {
    let cfg = golden_dir().join("config.json");
    let mut args = vec!["run", "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    let (code, out) = audit(runs, &args);
    assert_eq!(code, 0, "{out}");
    runs.join("golden")
}

/// `data` payloads of a run stream.
pub fn stream(run_dir: &Path, name: &str) -> Vec<Value> {
    let text = std::fs::read_to_string(run_dir.join(name)).unwrap_or_default();
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str::<Value>(l).unwrap()["data"].clone()).collect()
}

/// Every object key path in a JSON value, e.g. `cases[].accepted`.
pub fn key_paths(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.insert(p.clone());
                key_paths(x, &p, out);
            }
        }
        Value::Array(a) => {
            for x in a {
                key_paths(x, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

/// Raw personal values planted in the golden LLM fixture.
pub fn fixture_pii() -> Vec<String> {
    let text = std::fs::read_to_string(golden_dir().join("llm.json")).unwrap();
    let re = regex::Regex::new(r#"\\"([^"\\]*(?:@[a-z0-9.-]+\.[a-z]{2,}|\+\d[\d ()-]{6,}\d))\\""#).unwrap();
    let set: BTreeSet<String> = re.captures_iter(&text).map(|c| c[1].to_string()).collect();
    set.into_iter().collect()
}
