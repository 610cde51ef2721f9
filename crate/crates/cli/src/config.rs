//! `key = value` config files, spliced into the argument list so that flags
//! given on the command line override them.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

/// Turns config lines into flags. `#` starts a comment; `key = true` becomes a
/// bare `--key` and `key = false` is dropped.
pub fn parse(text: &str) -> Result<Vec<OsString>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value, got {raw:?}", i + 1);
        };
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        match value {
            "true" => args.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                args.push(format!("--{key}").into());
                args.push(value.into());
            }
        }
    }
    Ok(args)
}

/// Removes `--config <path>` from `args` and inserts the file's flags right
/// after the subcommand name, ahead of the flags typed by the user.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(args.len());
    let mut path = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            path = Some(iter.next().context("--config needs a path")?);
        } else if let Some(p) = text.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            out.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(out);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let extra = parse(&text)?;
    // out[0] is the program name; the subcommand is the first non-flag after it
    let at = out
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(out.len(), |p| p + 2);
    out.splice(at..at, extra);
    Ok(out)
}
