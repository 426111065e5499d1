//! Line-oriented `key = value` text used for model and config files.
//!
//! Scalars are written bare, arrays as `[v1, v2, ...]`. Floats use 17
//! significant digits, which round-trips every finite f64 exactly. Blank
//! lines and lines starting with `#` are ignored.

use std::fmt::{Display, Write as _};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("line {line}: duplicate key '{key}'")]
    Duplicate { line: usize, key: String },
    #[error("missing key '{0}'")]
    Missing(String),
    #[error("key '{key}': {detail}")]
    Invalid { key: String, detail: String },
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Default, Clone)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn value(&mut self, key: &str, value: impl Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.value(key, format_f64(value))
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let body: Vec<String> = values.iter().map(|v| format_f64(*v)).collect();
        self.value(key, format!("[{}]", body.join(", ")))
    }

    pub fn list<T: Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let body: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.value(key, format!("[{}]", body.join(", ")))
    }

    /// Appends every line of `other` with `prefix` glued to its key.
    pub fn nested(&mut self, prefix: &str, other: &KvWriter) -> &mut Self {
        for line in other.out.lines() {
            if line.starts_with('#') {
                let _ = writeln!(self.out, "{line}");
            } else {
                let _ = writeln!(self.out, "{prefix}{line}");
            }
        }
        self
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}

/// Parsed document; keys keep file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| KvError::Syntax {
                line,
                detail: format!("expected 'key = value', got '{trimmed}'"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(KvError::Syntax {
                    line,
                    detail: format!("bad key '{key}'"),
                });
            }
            if entries.iter().any(|(k, _)| k == key) {
                return Err(KvError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> KvDoc {
        KvDoc {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Entries whose key does not start with `prefix`.
    pub fn without_prefix(&self, prefix: &str) -> KvDoc {
        KvDoc {
            entries: self.entries.iter().filter(|(k, _)| !k.starts_with(prefix)).cloned().collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_str(&self, key: &str) -> Result<&str, KvError> {
        self.raw(key).ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        let raw = self.get_str(key)?;
        raw.parse().map_err(|_| KvError::Invalid {
            key: key.to_string(),
            detail: format!("cannot parse '{raw}'"),
        })
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        if self.contains(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, KvError> {
        let raw = self.get_str(key)?;
        let invalid = |detail: String| KvError::Invalid {
            key: key.to_string(),
            detail,
        };
        let body = raw
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| invalid("expected '[...]'".into()))?
            .trim();
        if body.is_empty() {
            return Ok(Vec::new());
        }
        body.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse().map_err(|_| invalid(format!("cannot parse element '{item}'")))
            })
            .collect()
    }

    pub fn get_list_len<T: FromStr>(&self, key: &str, len: usize) -> Result<Vec<T>, KvError> {
        let values = self.get_list(key)?;
        if values.len() != len {
            return Err(KvError::Invalid {
                key: key.to_string(),
                detail: format!("{} elements, expected {len}", values.len()),
            });
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn writes_and_reads_back() {
        let text = KvWriter::new()
            .comment("model")
            .value("kind", "lstm")
            .value("hidden", 3)
            .float("lr", 0.1)
            .floats("w", &[1.0 / 3.0, -2.5e-300, 0.0])
            .list("windows", &[4usize, 10, 100, 1000])
            .finish();
        let doc = KvDoc::parse(&text).unwrap();
        assert_eq!(doc.get_str("kind").unwrap(), "lstm");
        assert_eq!(doc.get::<usize>("hidden").unwrap(), 3);
        assert_eq!(doc.get::<f64>("lr").unwrap(), 0.1);
        assert_eq!(doc.get_list::<f64>("w").unwrap(), vec![1.0 / 3.0, -2.5e-300, 0.0]);
        assert_eq!(doc.get_list_len::<usize>("windows", 4).unwrap(), vec![4, 10, 100, 1000]);
        assert_eq!(doc.keys().collect::<Vec<_>>(), vec!["kind", "hidden", "lr", "w", "windows"]);

        let mut inner = KvWriter::new();
        inner.value("steps", 4);
        let outer = KvWriter::new().value("steps", 1).nested("config.", &inner).finish();
        let doc = KvDoc::parse(&outer).unwrap();
        assert_eq!(doc.get::<usize>("steps").unwrap(), 1);
        assert_eq!(doc.section("config.").get::<usize>("steps").unwrap(), 4);
        assert_eq!(doc.without_prefix("config.").keys().collect::<Vec<_>>(), vec!["steps"]);
    }

    #[test]
    fn errors_name_the_problem() {
        assert!(matches!(KvDoc::parse("a = 1\na = 2"), Err(KvError::Duplicate { line: 2, .. })));
        assert!(matches!(KvDoc::parse("\n\njunk"), Err(KvError::Syntax { line: 3, .. })));
        let doc = KvDoc::parse("n = x\nv = [1, y]").unwrap();
        assert_eq!(doc.get::<usize>("m"), Err(KvError::Missing("m".into())));
        assert!(matches!(doc.get::<usize>("n"), Err(KvError::Invalid { .. })));
        assert!(matches!(doc.get_list::<f64>("v"), Err(KvError::Invalid { .. })));
        assert!(matches!(doc.get_list::<f64>("n"), Err(KvError::Invalid { .. })));
        assert_eq!(KvDoc::parse("e = []").unwrap().get_list::<f64>("e").unwrap(), Vec::<f64>::new());
    }

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(bits in prop::collection::vec(any::<u64>(), 0..20)) {
            let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).filter(|v| v.is_finite()).collect();
            let text = KvWriter::new().floats("x", &values).finish();
            let back = KvDoc::parse(&text).unwrap().get_list::<f64>("x").unwrap();
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
