//! `key=value` configuration files for the `train` command.
//!
//! Keys are the long flag names without dashes (`d`, `heads`, `lr`,
//! `variant`, ...). Command-line flags override file values, and file
//! values override built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{read_to_string, Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (String, usize)>,
    path: std::path::PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let k = k.trim().trim_start_matches("--").to_string();
            if entries.insert(k.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        Ok(ConfigFile { entries, path: path.to_path_buf() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| Error::Parse {
                path: self.path.clone(),
                line: *line,
                msg: format!("{key}: cannot parse {v:?}"),
            }),
        }
    }

    /// Fails on keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Parse { path: self.path.clone(), line: *line, msg: format!("unknown key {k:?}") });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types_values() {
        let c = ConfigFile::parse("# comment\nd = 64\n--lr=0.001\nvariant=fc\n", Path::new("c")).unwrap();
        assert_eq!(c.get::<usize>("d").unwrap(), Some(64));
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.001));
        assert_eq!(c.raw("variant"), Some("fc"));
        assert_eq!(c.get::<usize>("heads").unwrap(), None);
        assert!(c.get::<usize>("variant").is_err());
        assert!(c.check_keys(&["d", "lr"]).is_err());
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(ConfigFile::parse("d=1\nd=2\n", Path::new("c")).is_err());
        assert!(ConfigFile::parse("nonsense\n", Path::new("c")).is_err());
    }
}
