//! Run manifests and output-root resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// Written before any computation; records what produced every file next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub code_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Resolved configuration, every default materialised.
    pub config: BTreeMap<String, String>,
    /// SHA-256 of every built-in environment definition, by family.
    #[serde(default)]
    pub env_checksums: BTreeMap<String, String>,
    /// Output name to path, relative to the manifest's directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            format_version: FORMAT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed: None,
            config: BTreeMap::new(),
            env_checksums: empo_core::envsim::builtin_families()
                .into_iter()
                .map(|f| (f.to_string(), empo_core::envsim::env_def(f).expect("builtin family").checksum.clone()))
                .collect(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, cfg: &empo_core::Config) -> Self {
        for k in empo_core::trainer::config::KEYS {
            self.config.insert(k.to_string(), cfg.get(k).expect("listed key"));
        }
        self.seed = Some(cfg.seed);
        self
    }

    pub fn output(mut self, name: &str, path: &str) -> Self {
        self.outputs.insert(name.to_string(), path.to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(dir.join(MANIFEST), text).with_context(|| format!("writing manifest in {}", dir.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST)).with_context(|| format!("reading manifest in {}", dir.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The resolved config as `key = value` text.
    pub fn config_kv(&self) -> String {
        self.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Relative output paths resolve against `$EMPO_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os("EMPO_OUT_ROOT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
