//! Flat `key=value` config files. Keys mirror long flag names; a flag given
//! on the command line wins over the file.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

/// Flags that take no value. `true` in a file turns them on.
const SWITCHES: &[&str] = &["retain-truth"];

/// Flags whose file value is a whitespace-separated list.
const LISTS: &[&str] = &["runs", "run"];

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {line:?}", i + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Splices `--config FILE` entries into the argument list right after the
/// subcommand, skipping keys already present on the command line.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(at) = strs.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match strs[at].split_once('=') {
        Some((_, p)) => p.to_string(),
        None => strs
            .get(at + 1)
            .cloned()
            .context("--config needs a file path")?,
    };
    let skip = if strs[at].contains('=') { 1 } else { 2 };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let given: Vec<&str> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();

    let mut injected = Vec::new();
    for (key, value) in parse(&text)? {
        if given.contains(&key.as_str()) {
            continue;
        }
        if SWITCHES.contains(&key.as_str()) {
            match value.as_str() {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                _ => bail!("config key {key}: expected true or false, got {value:?}"),
            }
        } else if LISTS.contains(&key.as_str()) {
            for v in value.split_whitespace() {
                injected.push(format!("--{key}"));
                injected.push(v.to_string());
            }
        } else {
            injected.push(format!("--{key}"));
            injected.push(value);
        }
    }

    let rest: Vec<&String> = strs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i < at || i >= at + skip)
        .map(|(_, a)| a)
        .collect();
    // The subcommand is the first argument after the program name that is
    // not a flag.
    let sub = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1);
    let mut out: Vec<OsString> = Vec::with_capacity(rest.len() + injected.len());
    for (i, a) in rest.iter().enumerate() {
        out.push(OsString::from(a.as_str()));
        if Some(i) == sub {
            out.extend(injected.iter().map(OsString::from));
        }
    }
    if sub.is_none() {
        bail!("--config needs a subcommand");
    }
    Ok(out)
}
