//! Flat `key = value` text documents with `#` comments.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug)]
pub struct KvDoc {
    pub source: String,
    pub entries: Vec<Entry>,
}

impl KvDoc {
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line,
                    column: None,
                    message: format!("expected 'key = value', found '{content}'"),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line,
                    column: Some(1),
                    message: "empty key".into(),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line,
                    column: None,
                    message: format!("duplicate key '{key}' (first set on line {})", prev.line),
                });
            }
            entries.push(Entry {
                key,
                value: v.trim().to_string(),
                line,
            });
        }
        Ok(KvDoc {
            source: source.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Errors on the first key not in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key.as_str())) {
            Some(e) => Err(Error::Parse {
                path: self.source.clone(),
                line: e.line,
                column: None,
                message: format!("unknown key '{}'", e.key),
            }),
            None => Ok(()),
        }
    }

    pub fn error_at(&self, entry: &Entry, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line: entry.line,
            column: None,
            message: format!("{}: {}", entry.key, message.into()),
        }
    }

    /// Parses `key` if present.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| self.error_at(e, format!("invalid value '{}' ({err})", e.value))),
        }
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_opt(key)?.ok_or_else(|| Error::Parse {
            path: self.source.clone(),
            line: 0,
            column: None,
            message: format!("missing required key '{key}'"),
        })
    }
}

/// Writes `contents` to a temporary sibling of `path` and renames it into
/// place, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
