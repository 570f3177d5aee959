//! Flat `key = value` config files.
//!
//! One assignment per line, `#` starts a comment, values may be quoted.
//! Keys mirror the library's config field names (`base_lr`, `n_mels`,
//! `pooling`, ...). Consumers pull keys out with [`FileConfig::take`] and
//! then call [`FileConfig::finish`], which rejects anything left over so a
//! typo in a key name fails loudly instead of silently using a default.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug)]
pub struct FileConfig {
    values: BTreeMap<String, (usize, String)>,
    path: PathBuf,
}

impl FileConfig {
    /// A config with no entries, used when no file was given.
    pub fn empty() -> Self {
        FileConfig {
            values: BTreeMap::new(),
            path: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{line_no}: expected `key = value`, got `{raw}`",
                    path.display()
                );
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                bail!("{}:{line_no}: empty key", path.display());
            }
            let value = unquote(value.trim()).to_string();
            if values.insert(key.clone(), (line_no, value)).is_some() {
                bail!("{}:{line_no}: duplicate key `{key}`", path.display());
            }
        }
        Ok(FileConfig {
            values,
            path: path.to_path_buf(),
        })
    }

    /// Removes and parses one key; `None` when the file never set it.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, raw)) => match raw.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!(
                    "{}:{line}: key `{key}`: cannot parse `{raw}`: {e}",
                    self.path.display()
                ),
            },
        }
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        if self.values.is_empty() {
            return Ok(());
        }
        let names: Vec<&str> = self.values.keys().map(String::as_str).collect();
        bail!(
            "{}: unknown keys: {}",
            self.path.display(),
            names.join(", ")
        );
    }
}

fn unquote(v: &str) -> &str {
    let b = v.as_bytes();
    if b.len() >= 2
        && ((b[0] == b'"' && b[b.len() - 1] == b'"') || (b[0] == b'\'' && b[b.len() - 1] == b'\''))
    {
        &v[1..v.len() - 1]
    } else {
        v
    }
}
