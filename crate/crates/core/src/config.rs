//! Plain-text `key = value` configuration files and the lithography
//! configuration they describe.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{DesignRule, GeometryError};
use crate::optics::{GoldenResistModel, OpticalModel, OpticsError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Parse { key: String, value: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get_str(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::Parse {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        self.get_str(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse().map_err(|_| ConfigError::Parse {
                            key: key.to_string(),
                            value: s.to_string(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// A lithography configuration: design rule, optics and resist material.
#[derive(Debug, Clone, PartialEq)]
pub struct LithoConfig {
    pub tag: String,
    pub rule: DesignRule,
    pub optics: OpticalModel,
    pub resist: GoldenResistModel,
}

impl LithoConfig {
    /// Reads `tag`, `pitch_nm`, `blur_sigma_nm`, `kernel_truncate`,
    /// `peak_norm`, `c0`..`c3`, `clamp_lo`, `clamp_hi`, `window_px`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let rule = DesignRule::with_pitch_nm(kv.require("pitch_nm")?)?;
        let optics = OpticalModel::new(
            kv.require("blur_sigma_nm")?,
            kv.get_or("kernel_truncate", 3.0)?,
            kv.get_or("peak_norm", true)?,
        )?;
        let resist = GoldenResistModel::new(
            [kv.require("c0")?, kv.require("c1")?, kv.require("c2")?, kv.require("c3")?],
            kv.require("window_px")?,
            kv.require("clamp_lo")?,
            kv.require("clamp_hi")?,
        )?;
        Ok(Self {
            tag: kv.get_str("tag").unwrap_or("litho").to_string(),
            rule,
            optics,
            resist,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("tag", &self.tag);
        kv.set("pitch_nm", self.rule.min_pitch() as f64 / crate::geometry::DBU_PER_NM as f64);
        kv.set("blur_sigma_nm", self.optics.blur_sigma_nm);
        kv.set("kernel_truncate", self.optics.kernel_truncate);
        kv.set("peak_norm", self.optics.peak_norm);
        for (i, c) in self.resist.c.iter().enumerate() {
            kv.set(&format!("c{i}"), c);
        }
        kv.set("clamp_lo", self.resist.clamp_lo);
        kv.set("clamp_hi", self.resist.clamp_hi);
        kv.set("window_px", self.resist.window);
        kv
    }

    fn preset(tag: &str, pitch_nm: f64, blur_nm: f64, resist: GoldenResistModel) -> Self {
        Self {
            tag: tag.to_string(),
            rule: DesignRule::with_pitch_nm(pitch_nm).expect("preset pitch is valid"),
            optics: OpticalModel::new(blur_nm, 3.0, true).expect("preset optics are valid"),
            resist,
        }
    }

    /// 64 nm pitch, 35 nm blur, material A.
    pub fn n10() -> Self {
        Self::preset("N10", 64.0, 35.0, GoldenResistModel::material_a())
    }

    /// 45 nm pitch, 25 nm blur, material A.
    pub fn n7a() -> Self {
        Self::preset("N7a", 45.0, 25.0, GoldenResistModel::material_a())
    }

    /// 45 nm pitch, 25 nm blur, material B (intensity slope x1.2).
    pub fn n7b() -> Self {
        Self::preset("N7b", 45.0, 25.0, GoldenResistModel::material_a().with_slope_scaled(1.2))
    }

    pub fn preset_by_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "n10" => Some(Self::n10()),
            "n7a" => Some(Self::n7a()),
            "n7b" => Some(Self::n7b()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let kv = KeyValues::parse("# c\n a = 1 \n\nlist = 0.1, 0.2,0.5\n").unwrap();
        assert_eq!(kv.require::<i32>("a").unwrap(), 1);
        assert_eq!(kv.get_list::<f64>("list").unwrap().unwrap(), vec![0.1, 0.2, 0.5]);
        assert!(matches!(kv.require::<i32>("b"), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(KeyValues::parse("novalue"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(ConfigError::Duplicate { .. })));
        let kv = KeyValues::parse("a = x").unwrap();
        assert!(matches!(kv.require::<f64>("a"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn litho_config_round_trips_through_text() {
        for cfg in [LithoConfig::n10(), LithoConfig::n7a(), LithoConfig::n7b()] {
            let back = LithoConfig::from_kv(&KeyValues::parse(&cfg.to_kv().to_text()).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
