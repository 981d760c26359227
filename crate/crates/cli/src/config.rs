//! `scriptalign.toml`: defaults for any command-line flag.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

pub const CONFIG_FILE: &str = "scriptalign.toml";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub library: Option<PathBuf>,
    pub condition: Option<String>,
    pub backend: Option<String>,
    pub profile: Option<String>,
    pub sessions: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub labelmap: Option<String>,
    pub topic: Option<String>,
    pub max_turns: Option<usize>,
    pub digress_every: Option<usize>,
    pub mode: Option<String>,
    pub bind: Option<String>,
    pub log: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

impl FileConfig {
    /// Reads `explicit` when given, else `scriptalign.toml` in the working
    /// directory if there is one.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from(CONFIG_FILE);
                if !p.exists() {
                    return Ok(FileConfig::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
