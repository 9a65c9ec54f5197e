//! `--config` support: flag values read from a JSON object are spliced in
//! right after the subcommand name, so flags typed on the command line come
//! later and win.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::args::COMMAND_NAMES;

/// Global flags that take a value; their value is never a subcommand name.
const VALUE_FLAGS: &[&str] = &["--config", "--threads"];

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(v.into());
        }
    }
    None
}

fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_str().unwrap_or("");
        if VALUE_FLAGS.contains(&a) {
            i += 2;
            continue;
        }
        if COMMAND_NAMES.contains(&a) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn scalar(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(format!("unsupported list element {other}")),
    }
}

/// Turns a flag object into command-line tokens. A run manifest is accepted
/// too, in which case its `config` member is used.
pub fn flags_from_json(v: &Value) -> Result<Vec<OsString>, String> {
    let obj: &Map<String, Value> = match v {
        Value::Object(o) => match (o.get("command"), o.get("config")) {
            (Some(Value::String(_)), Some(Value::Object(inner))) => inner,
            _ => o,
        },
        _ => return Err("config must be a JSON object".into()),
    };
    let mut out = Vec::new();
    for (key, value) in obj {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::String(_) | Value::Number(_) => {
                out.push(flag.into());
                out.push(scalar(value)?.into());
            }
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                out.push(flag.into());
                out.push(parts.join(",").into());
            }
            Value::Object(_) => return Err(format!("value of {key:?} must not be an object")),
        }
    }
    Ok(out)
}

fn read_config(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config {} is not JSON: {e}", path.display()))
}

/// Expands `--config` into explicit flags. Arguments without `--config`
/// pass through unchanged.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(at) = subcommand_index(&argv) else {
        return Ok(argv);
    };
    let flags = flags_from_json(&read_config(Path::new(&path))?)?;
    let mut out = argv;
    out.splice(at + 1..at + 1, flags);
    Ok(out)
}
