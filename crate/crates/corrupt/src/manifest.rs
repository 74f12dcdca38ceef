use std::path::Path;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{CorruptError, Result};
use crate::kind::{validate_params, CorruptionKind};

const BUILTIN: &str = include_str!("../severities.toml");
pub const MANIFEST_VERSION: i64 = 1;

/// Per-kind parameter tables for severities 1..=5.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    params: Vec<[Vec<f64>; 5]>,
    hash: String,
}

fn err(msg: impl Into<String>) -> CorruptError {
    CorruptError::Manifest(msg.into())
}

fn number(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Integer(i) => Some(*i as f64),
        toml::Value::Float(f) => Some(*f),
        _ => None,
    }
}

impl Manifest {
    /// The manifest shipped with the crate.
    pub fn builtin() -> &'static Manifest {
        static CELL: OnceLock<Manifest> = OnceLock::new();
        CELL.get_or_init(|| Manifest::parse(BUILTIN).expect("built-in severity manifest is valid"))
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text =
            std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Manifest::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| err(e.to_string()))?;
        match table.get("version").and_then(toml::Value::as_integer) {
            Some(MANIFEST_VERSION) => {}
            Some(v) => return Err(err(format!("unsupported version {v}"))),
            None => return Err(err("missing integer `version`")),
        }
        for key in table.keys() {
            if key != "version" {
                key.parse::<CorruptionKind>()?;
            }
        }
        let mut params = Vec::with_capacity(19);
        for kind in CorruptionKind::ALL {
            let section = table
                .get(kind.name())
                .and_then(toml::Value::as_table)
                .ok_or_else(|| err(format!("missing section [{kind}]")))?;
            if let Some(extra) = section
                .keys()
                .find(|k| !matches!(k.as_str(), "s1" | "s2" | "s3" | "s4" | "s5"))
            {
                return Err(err(format!("[{kind}] unexpected key `{extra}`")));
            }
            let mut levels: [Vec<f64>; 5] = Default::default();
            for (s, level) in levels.iter_mut().enumerate() {
                let key = format!("s{}", s + 1);
                let value = section
                    .get(&key)
                    .ok_or_else(|| err(format!("[{kind}] missing `{key}`")))?;
                let values = match value {
                    toml::Value::Array(items) => {
                        items.iter().map(number).collect::<Option<Vec<_>>>()
                    }
                    other => number(other).map(|v| vec![v]),
                }
                .ok_or_else(|| {
                    err(format!(
                        "[{kind}] `{key}` must be a number or array of numbers"
                    ))
                })?;
                validate_params(kind, &values)
                    .map_err(|e| err(format!("[{kind}] `{key}`: {e}")))?;
                *level = values;
            }
            params.push(levels);
        }
        let hash = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Manifest { params, hash })
    }

    /// Parameters for `kind` at `severity` in 1..=5.
    pub fn params(&self, kind: CorruptionKind, severity: u8) -> Result<&[f64]> {
        match severity {
            1..=5 => Ok(&self.params[kind as usize][usize::from(severity) - 1]),
            s => Err(CorruptError::InvalidSeverity(s)),
        }
    }

    /// Hex SHA-256 of the manifest text.
    pub fn hash(&self) -> &str {
        &self.hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses() {
        let m = Manifest::builtin();
        assert_eq!(m.params(CorruptionKind::GaussianNoise, 3).unwrap(), &[0.08]);
        assert_eq!(
            m.params(CorruptionKind::JpegCompression, 5).unwrap(),
            &[40.0]
        );
        assert_eq!(m.hash().len(), 64);
        assert!(m.params(CorruptionKind::Fog, 0).is_err());
        assert!(m.params(CorruptionKind::Fog, 6).is_err());
    }

    #[test]
    fn rejects_bad_manifests() {
        let bad_version = BUILTIN.replacen("version = 1", "version = 2", 1);
        assert!(Manifest::parse(&bad_version)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let unknown = format!("{BUILTIN}\n[rain]\ns1 = 1\n");
        assert_eq!(
            Manifest::parse(&unknown).unwrap_err(),
            CorruptError::UnknownKind("rain".into())
        );
        let missing = BUILTIN.replacen("[saturate]", "[saturate_x]", 1);
        assert!(Manifest::parse(&missing).is_err());
        let out_of_range = BUILTIN.replacen("s5 = 40", "s5 = 400", 1);
        assert!(Manifest::parse(&out_of_range)
            .unwrap_err()
            .to_string()
            .contains("jpeg_compression"));
        let wrong_arity = BUILTIN.replacen("s1 = [1.0, 0.5]", "s1 = [1.0]", 1);
        assert!(Manifest::parse(&wrong_arity)
            .unwrap_err()
            .to_string()
            .contains("defocus_blur"));
    }
}
