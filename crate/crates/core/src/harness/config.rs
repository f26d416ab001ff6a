//! Run configuration: TOML file, `MEMLAB_*` environment overrides, then
//! command-line overrides (applied by the caller on the returned struct).
//!
//! Environment variables map onto keys with `__` as the path separator,
//! e.g. `MEMLAB_MEMORY__LAMBDA=0.4` sets `memory.lambda` and
//! `MEMLAB_SEED=7` sets `seed`. Values are parsed as TOML scalars when
//! possible and taken as strings otherwise.
//!
//! The top-level `seed` is the run seed. Unless `codec.seed` or
//! `memory.seed` are given explicitly, they are derived from it as
//! `derive(seed, "codec") >> 1` and `derive(seed, "memory") >> 1`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use super::SynthesisMode;
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_BINS;
use crate::memory::MemoryConfig;
use crate::metrics::{RougeVariant, StdKind};
use crate::seed;

pub const ENV_PREFIX: &str = "MEMLAB_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub rouge_variant: RougeVariant,
    pub std: StdKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub bins: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; entries are the unit of work.
    pub parallelism: usize,
    /// Record failing entries and continue instead of aborting.
    pub skip_failures: bool,
    pub dump_latents: Option<PathBuf>,
    pub mode: SynthesisMode,
    pub codec: CodecConfig,
    pub memory: MemoryConfig,
    pub metrics: MetricsConfig,
    pub geometry: GeometryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::with_seed(0)
    }
}

impl RunConfig {
    /// Desk-scale defaults (`C = 64`, `K = 128`) with component seeds
    /// derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = RunConfig {
            seed,
            corpus: None,
            output_dir: None,
            parallelism: 1,
            skip_failures: false,
            dump_latents: None,
            mode: SynthesisMode::Base,
            codec: CodecConfig::default(),
            memory: MemoryConfig::default(),
            metrics: MetricsConfig::default(),
            geometry: GeometryConfig::default(),
        };
        cfg.derive_component_seeds();
        cfg
    }

    /// Full-size dimensions: 512 slots of width 768.
    pub fn full_scale(seed: u64) -> Self {
        let mut cfg = RunConfig::with_seed(seed);
        cfg.codec.latent_dim = 768;
        cfg.memory.latent_dim = 768;
        cfg.memory.slots = 512;
        cfg
    }

    /// The top bit is cleared so derived seeds stay valid TOML integers.
    pub fn derive_component_seeds(&mut self) {
        self.codec.seed = seed::derive(self.seed, "codec") >> 1;
        self.memory.seed = seed::derive(self.seed, "memory") >> 1;
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.memory.validate()?;
        self.mode.validate()?;
        if self.codec.latent_dim != self.memory.latent_dim {
            return Err(Error::Config(format!(
                "codec.latent_dim ({}) and memory.latent_dim ({}) must agree",
                self.codec.latent_dim, self.memory.latent_dim
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.geometry.bins == 0 {
            return Err(Error::Config("geometry.bins must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses TOML text, applies environment overrides, resolves seeds.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc: Value = if text.trim().is_empty() {
            Value::Table(Default::default())
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        for (key, value) in env {
            let Some(path) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let segments: Vec<String> = path.split("__").map(|s| s.to_ascii_lowercase()).collect();
            set_path(&mut doc, &segments, parse_scalar(&value))?;
        }
        let explicit_codec_seed = lookup(&doc, &["codec", "seed"]).is_some();
        let explicit_memory_seed = lookup(&doc, &["memory", "seed"]).is_some();
        let mut cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let (codec_seed, memory_seed) = (cfg.codec.seed, cfg.memory.seed);
        cfg.derive_component_seeds();
        if explicit_codec_seed {
            cfg.codec.seed = codec_seed;
        }
        if explicit_memory_seed {
            cfg.memory.seed = memory_seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (if any) with overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn lookup<'a>(doc: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(doc, |v, k| v.get(*k))
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut cur = doc;
    for seg in parents {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{}' crosses a scalar", path.join("."))))?;
        cur = table
            .entry(seg.clone())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{}' crosses a scalar", path.join("."))))?
        .insert(last.clone(), value);
    Ok(())
}
