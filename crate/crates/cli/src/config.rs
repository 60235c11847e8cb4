//! Flat `key=value` experiment files.
//!
//! Keys are the subcommand's long flag names (`_` and `-` are equivalent).
//! Blank lines and lines starting with `#` are ignored. The file's entries are
//! spliced in as `--key=value` right after the subcommand, ahead of the
//! command-line flags, so later flags override them and unknown keys are
//! rejected by the argument parser.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {line:?}", lineno + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') {
            bail!("line {}: invalid key {k:?}", lineno + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text)
}

/// Inserts the entries of the `--config` file (if any) after the subcommand.
pub fn splice_config(argv: &[String], subcommands: &[&str]) -> Result<Vec<String>> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--config" {
            path = argv.get(i + 1).cloned();
            if path.is_none() {
                bail!("--config needs a file");
            }
            i += 1;
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(argv.to_vec());
    };
    let entries = load(Path::new(&path))?;
    let Some(pos) = argv.iter().skip(1).position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(argv.to_vec());
    };
    let pos = pos + 1;
    let mut out: Vec<String> = argv[..=pos].to_vec();
    out.extend(entries.into_iter().map(|(k, v)| format!("--{k}={v}")));
    out.extend(argv[pos + 1..].iter().cloned());
    Ok(out)
}

/// Effective settings as `(key, value)` pairs in declaration order.
pub fn echo<T: Serialize>(args: &T) -> Vec<(String, String)> {
    let value = serde_json::to_value(args).expect("arguments serialize");
    let mut out = Vec::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let s = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push((k, s));
        }
    }
    out
}

pub fn render(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
