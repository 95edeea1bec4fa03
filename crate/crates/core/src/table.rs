//! Comma-separated numeric tables with a fixed header line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::fmt_f64;

/// A parsed data row with its 1-based source line.
#[derive(Clone, Debug)]
pub struct Row {
    pub line: usize,
    pub values: Vec<f64>,
}

pub fn parse(source: &str, text: &str, header: &[&str]) -> Result<Vec<Row>> {
    let err = |line: usize, column: Option<usize>, message: String| Error::Parse {
        path: source.to_string(),
        line,
        column,
        message,
    };
    let mut lines = text.lines().enumerate();
    let expected = header.join(",");
    match lines.next() {
        Some((_, h)) if h.trim().replace(' ', "") == expected => {}
        Some((_, h)) => {
            return Err(err(1, None, format!("expected header '{expected}', found '{}'", h.trim())))
        }
        None => return Err(err(1, None, format!("empty file (expected header '{expected}')"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != header.len() {
            return Err(err(
                line,
                None,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
        let values = fields
            .iter()
            .enumerate()
            .map(|(c, f)| {
                let f = f.trim();
                match f.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(err(
                        line,
                        Some(c + 1),
                        format!("invalid value '{f}' for '{}'", header[c]),
                    )),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row { line, values });
    }
    Ok(rows)
}

pub fn read(path: &Path, header: &[&str]) -> Result<Vec<Row>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&path.display().to_string(), &text, header)
}

/// Renders a header plus rows, every number with 17 significant digits.
pub fn render<'a>(header: &[&str], rows: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
