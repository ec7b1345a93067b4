//! `run --config file.toml`: every key is a `run` flag name, and the file's
//! values are spliced in ahead of the real arguments so that anything given
//! on the command line overrides them.

use std::ffi::OsString;
use std::path::Path;

use anyhow::Context;

use crate::usage;

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn scalar(key: &str, v: &toml::Value) -> anyhow::Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        other => return Err(usage(format!("config key {key:?}: unsupported value {other}"))),
    })
}

pub fn flags_from_toml(text: &str, path: &Path) -> anyhow::Result<Vec<OsString>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in &table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(usage(format!("config {}: nested `config` key", path.display())));
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| scalar(key, v))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            v => {
                out.push(flag.into());
                out.push(scalar(key, v)?.into());
            }
        }
    }
    Ok(out)
}

/// Returns `argv` unchanged unless it is a `run` with `--config`.
pub fn expand_run_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    if argv.get(1).map(|a| a != "run").unwrap_or(true) {
        return Ok(argv);
    }
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|e| usage(format!("{e:#}")))?;
    let flags = flags_from_toml(&text, path)?;
    let mut expanded = argv[..2].to_vec();
    expanded.extend(flags);
    expanded.extend(argv[2..].iter().cloned());
    Ok(expanded)
}
