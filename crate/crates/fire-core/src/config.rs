//! Flat key=value configuration files with `[section]` headers.
//!
//! ```text
//! # comment
//! [train]
//! iterations=6000
//! seed=1
//! ```
//!
//! Keys before any header land in the "" section. The same format backs
//! shape specs, run configs, camera files and the checkpoint config echo.

use crate::error::{FireError, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        if let Some(e) = self.entries.iter_mut().find(|(k, _)| k == key) {
            e.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                FireError::invalid(format!("key '{key}' in [{}]: {e}", self.name))
            }),
        }
    }

    /// Whitespace-separated float list.
    pub fn parse_floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => {
                let mut out = Vec::new();
                for tok in raw.split_whitespace() {
                    out.push(tok.parse::<f64>().map_err(|e| {
                        FireError::invalid(format!("key '{key}' in [{}]: {e}", self.name))
                    })?);
                }
                Ok(Some(out))
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    pub sections: Vec<Section>,
}

impl KvFile {
    pub fn new() -> KvFile {
        KvFile::default()
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn section_mut(&mut self, name: &str) -> &mut Section {
        if let Some(i) = self.sections.iter().position(|s| s.name == name) {
            &mut self.sections[i]
        } else {
            self.sections.push(Section {
                name: name.to_string(),
                entries: Vec::new(),
            });
            self.sections.last_mut().unwrap()
        }
    }

    pub fn parse_str(text: &str, origin: &Path) -> Result<KvFile> {
        let mut file = KvFile::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    FireError::parse(origin, format!("line {}: unterminated section", lineno + 1))
                })?;
                current = name.trim().to_string();
                file.section_mut(&current);
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(FireError::parse(
                    origin,
                    format!("line {}: expected key=value, got '{line}'", lineno + 1),
                ));
            };
            file.section_mut(&current)
                .entries
                .push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<KvFile> {
        let text = std::fs::read_to_string(path).map_err(|e| FireError::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if !s.name.is_empty() {
                let _ = writeln!(out, "[{}]", s.name);
            }
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| FireError::io(path, e))
    }
}
