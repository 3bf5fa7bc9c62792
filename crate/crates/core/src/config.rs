//! Line-based `key = value` files with `[section]` headers, used for run
//! configuration and for the manifests written next to outputs.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ini::{Ini, WriteOption};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("[{section}] {key} = {value:?}: {message}")]
    Value {
        section: String,
        key: String,
        value: String,
        message: String,
    },
}

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    ini: Ini,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(Self { ini })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Display) -> &mut Self {
        self.ini.with_section(Some(section)).set(key, value.to_string());
        self
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.get_from(Some(section), key)
    }

    /// Parse a value if present.
    pub fn get<T>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get_str(section, key) {
            None => Ok(None),
            Some(raw) => raw.trim().parse().map(Some).map_err(|e: T::Err| ConfigError::Value {
                section: section.to_string(),
                key: key.to_string(),
                value: raw.to_string(),
                message: e.to_string(),
            }),
        }
    }

    /// Overwrite `*slot` when the key is present.
    pub fn read_into<T>(&self, section: &str, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.get(section, key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.ini.section(Some(section)).is_some()
    }

    pub fn sections(&self) -> Vec<String> {
        self.ini.sections().flatten().map(str::to_string).collect()
    }

    pub fn entries(&self, section: &str) -> Vec<(String, String)> {
        self.ini
            .section(Some(section))
            .map(|p| p.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
            .unwrap_or_default()
    }

    /// Copy every entry of `other` over this one.
    pub fn merge(&mut self, other: &KvConfig) {
        for section in other.sections() {
            for (k, v) in other.entries(&section) {
                self.set(&section, &k, v);
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.ini
            .write_to_opt(
                &mut buf,
                WriteOption {
                    kv_separator: " = ",
                    ..Default::default()
                },
            )
            .expect("writing to memory");
        String::from_utf8(buf).expect("configuration text is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        write_atomic(path, self.to_text().as_bytes()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Write through a temporary file in the destination directory, then
/// rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
