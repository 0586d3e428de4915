//! Flat `key = value` config files for the command-line runner.
//!
//! Each line becomes `--key value`; `key = true` becomes a bare `--key` and
//! `key = false` is dropped. Blank lines and `#` comments are ignored.

use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config(format!(
                "config line {}: bad key {key:?}",
                n + 1
            )));
        }
        match value.trim() {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            v => {
                args.push(format!("--{key}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

pub fn load_config(path: &Path) -> Result<Vec<String>> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Splices config-file flags in right after the subcommand so that flags given
/// on the command line, which come later, take precedence.
pub fn expand_args(args: Vec<String>, config_flag: &str) -> Result<Vec<String>> {
    let Some(pos) = args
        .iter()
        .position(|a| a == config_flag || a.starts_with(&format!("{config_flag}=")))
    else {
        return Ok(args);
    };
    let mut args = args;
    let path = if let Some(v) = args[pos].strip_prefix(&format!("{config_flag}=")) {
        let v = v.to_string();
        args.remove(pos);
        v
    } else {
        if pos + 1 >= args.len() {
            return Err(Error::Config(format!("{config_flag} needs a path")));
        }
        let v = args.remove(pos + 1);
        args.remove(pos);
        v
    };
    let extra = load_config(Path::new(&path))?;
    let sub = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.starts_with('-'))
        .map_or(args.len(), |(i, _)| i + 1);
    args.splice(sub..sub, extra);
    Ok(args)
}
