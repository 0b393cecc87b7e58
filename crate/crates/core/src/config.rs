//! The run configuration file: one TOML document with a section per
//! subsystem, plus dotted `key=value` overrides applied after loading.
//!
//! ```toml
//! [network]
//! base_resolution = 64
//! [loss]
//! w_cc = 1.0
//! [train]
//! steps = 2000
//! [[data.roots]]
//! path = "images"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskParams;
use crate::model::NetworkConfig;
use crate::objectives::LossWeights;
use crate::train::data::DatasetSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Directory of real images for FID; unset disables FID.
    pub real_dir: Option<PathBuf>,
    /// TorchScript feature extractor; unset selects the builtin network.
    pub extractor: Option<PathBuf>,
    pub extractor_seed: u64,
    pub cache_stats: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            real_dir: None,
            extractor: None,
            extractor_seed: 0,
            cache_stats: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    /// Oldest sessions are dropped beyond this count.
    pub max_sessions: usize,
    pub max_body_bytes: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            max_sessions: 64,
            max_body_bytes: 32 << 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Checkpoint used by evaluate, edit, interpolate and serve.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub mask: MaskParams,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    pub model: ModelConfig,
}

/// Splits `a.b.c=value`; the value is parsed as a TOML literal and falls
/// back to a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like section.key=value"))?;
    let key = key.trim();
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::config(key, "empty path component"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = root;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::config(
                    path[..=i].join("."),
                    "is not a table and cannot hold sub-keys",
                ))
            }
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Maps a TOML parse or schema error to a field-level config error that
/// carries the line and column when the source text is known.
fn toml_error(origin: &str, text: Option<&str>, e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let location = match (text, e.span()) {
        (Some(t), Some(span)) => {
            let before = &t[..span.start.min(t.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("{origin}:{line}:{col}")
        }
        _ => origin.to_string(),
    };
    Error::config(location, msg)
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(origin, Some(text), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the file (or defaults when `path` is `None`) and applies the
    /// overrides in order. Relative data and model paths are resolved
    /// against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (text, origin, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(p.display().to_string(), e.to_string()))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (text, p.display().to_string(), Some(base))
            }
            None => (String::new(), "<defaults>".to_string(), None),
        };
        // Parse the file on its own first so schema errors point at a line.
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| toml_error(&origin, Some(&text), e))?;
        if let Some(base) = base {
            cfg.resolve_paths(&base);
        }
        if !overrides.is_empty() {
            let mut table = toml::Table::try_from(&cfg)
                .map_err(|e| Error::config(&origin, e.to_string()))?;
            for o in overrides {
                let (key, value) = parse_override(o)?;
                set_path(&mut table, &key, value)?;
                cfg = toml::Value::Table(table.clone())
                    .try_into()
                    .map_err(|e: toml::de::Error| {
                        Error::config(key.join("."), format!("override `{o}`: {}", e.message()))
                    })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for r in &mut self.data.roots {
            fix(&mut r.path);
        }
        for p in [
            &mut self.model.checkpoint,
            &mut self.eval.real_dir,
            &mut self.eval.extractor,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.mask.validate()?;
        self.train.validate()?;
        for (i, r) in self.data.roots.iter().enumerate() {
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::config(
                    format!("data.roots[{i}].weight"),
                    format!("must be positive, got {}", r.weight),
                ));
            }
        }
        if self.serve.max_sessions == 0 {
            return Err(Error::config("serve.max_sessions", "must be at least 1"));
        }
        Ok(())
    }

    /// Overrides every seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.network.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
