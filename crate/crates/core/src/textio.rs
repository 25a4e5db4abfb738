//! Shared helpers for the line-oriented text artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("not a number: `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

pub(crate) fn parse_floats<'a>(
    toks: impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<Vec<f64>> {
    toks.map(|t| parse_f64(t, line)).collect()
}

/// Appends `values` separated by `sep`, each in shortest round-trip form.
pub(crate) fn push_floats(out: &mut String, values: &[f64], sep: char) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        write!(out, "{v:?}").expect("writing to String");
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Identifier tokens must be non-empty and free of whitespace.
pub(crate) fn check_id(tok: &str, line: usize, what: &str) -> Result<()> {
    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
        return Err(Error::parse(line, format!("invalid {what} `{tok}`")));
    }
    Ok(())
}
