//! Plain-text `key = value` settings files.
//!
//! One assignment per line, `#` starts a comment. Per-entity values (one per
//! server or dispatcher) are written as comma-separated lists; a single value
//! is broadcast. The same format carries environment, training and sweep
//! settings, so each consumer takes the keys it understands and whatever is
//! left over is reported as unknown.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

/// Parsed settings with per-key source line numbers.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            let value = value.trim().to_string();
            if entries.insert(key.clone(), Entry { line, value }).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override (as passed on the command line), replacing
    /// any value read from a file.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("override `{assignment}` is not of the form key=value"),
        })?;
        self.entries.insert(
            key.trim().to_string(),
            Entry {
                line: 0,
                value: value.trim().to_string(),
            },
        );
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and returns the raw string for `key`.
    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|e| e.value)
    }

    /// Removes `key` and parses it as a scalar.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(entry) => parse_scalar(key, &entry).map(Some),
        }
    }

    /// Removes `key` and parses it as a comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(entry) => {
                let items = entry
                    .value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>().map_err(|_| Error::Parse {
                            line: entry.line,
                            message: format!("`{key}`: cannot parse list item `{s}`"),
                        })
                    })
                    .collect::<Result<Vec<T>>>()?;
                if items.is_empty() {
                    return Err(Error::Parse {
                        line: entry.line,
                        message: format!("`{key}`: empty list"),
                    });
                }
                Ok(Some(items))
            }
        }
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, entry)) => Err(Error::Parse {
                line: entry.line,
                message: format!("unknown key `{key}`"),
            }),
        }
    }
}

fn parse_scalar<T: FromStr>(key: &str, entry: &Entry) -> Result<T> {
    entry.value.parse::<T>().map_err(|_| Error::Parse {
        line: entry.line,
        message: format!("`{key}`: cannot parse `{}`", entry.value),
    })
}

/// Stretches `values` to `len` entries by cycling it, so a single value is
/// broadcast and an alternating pattern keeps alternating.
pub(crate) fn cycle_to<T: Clone>(values: &[T], len: usize) -> Vec<T> {
    assert!(!values.is_empty(), "cannot cycle an empty list");
    values.iter().cycle().take(len).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_lists_and_comments() {
        let mut s = Settings::parse("# header\n n_servers = 3 \nstay_available = 0.9, 0.5,0.7 # trailing\n\n").unwrap();
        assert_eq!(s.take::<usize>("n_servers").unwrap(), Some(3));
        assert_eq!(s.take_list::<f64>("stay_available").unwrap(), Some(vec![0.9, 0.5, 0.7]));
        assert!(s.finish().is_ok());
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            Settings::parse("a = 1\na = 2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Settings::parse("just words"),
            Err(Error::Parse { line: 1, .. })
        ));
        let mut s = Settings::parse("x = abc").unwrap();
        assert!(s.take::<f64>("x").is_err());
    }

    #[test]
    fn leftover_keys_are_reported() {
        let s = Settings::parse("mystery = 1").unwrap();
        let err = s.finish().unwrap_err().to_string();
        assert!(err.contains("mystery"), "{err}");
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut s = Settings::parse("query_cost = 0.1").unwrap();
        s.set_override("query_cost=0.2").unwrap();
        assert_eq!(s.take::<f64>("query_cost").unwrap(), Some(0.2));
        assert!(s.set_override("novalue").is_err());
    }

    #[test]
    fn cycling_broadcasts_and_repeats() {
        assert_eq!(cycle_to(&[1], 3), vec![1, 1, 1]);
        assert_eq!(cycle_to(&[1, 2], 5), vec![1, 2, 1, 2, 1]);
        assert_eq!(cycle_to(&[1, 2, 3], 2), vec![1, 2]);
    }
}
