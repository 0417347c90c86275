//! The run configuration and its layered resolution: command-line
//! overrides, then `DICE_` environment variables, then the config file,
//! then defaults.

use std::fs;
use std::path::{Path, PathBuf};

use dice_core::eval::{DEFAULT_BUCKET_EDGES, DEFAULT_LOW_QUALITY_THRESHOLD};
use dice_core::runtime::DEFAULT_MAX_STEPS;
use dice_core::selector::{SelectorConfig, Strategy};
use dice_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "DICE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedAgent {
    /// Rule-based agent for synthetic worlds.
    #[default]
    Simulated,
    /// Completions from the `agent_rules` file.
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub agent: ScriptedAgent,
    pub agent_rules: Option<PathBuf>,
    /// Scripted retriever rules; built-in rules for synthetic worlds when absent.
    pub retriever_rules: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
    /// Defaults to `model`.
    pub retriever_model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            agent: ScriptedAgent::Simulated,
            agent_rules: None,
            retriever_rules: None,
            endpoint_url: None,
            model: None,
            retriever_model: None,
            api_key_env: None,
            timeout_secs: 60,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    #[default]
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub kind: EmbedKind,
    pub dim: usize,
    /// Hashing salt.
    pub seed: u64,
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { kind: EmbedKind::Hashing, dim: 256, seed: 0, endpoint_url: None, model: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    Synthetic,
    Toywiki,
    Shop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// World file for `toywiki` and `shop`.
    pub world_path: Option<PathBuf>,
    pub n_tasks: usize,
    pub n_pool: usize,
    /// Weights for recovery, two-hop, lookup and direct tasks, in that order.
    pub pattern_mix: Vec<f64>,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: EnvKind::Synthetic,
            world_path: None,
            n_tasks: 30,
            n_pool: 20,
            pattern_mix: vec![0.4, 0.3, 0.3],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSection {
    pub max_steps: usize,
    /// Episode worker threads; 0 picks one per core.
    pub workers: usize,
    /// Base of the per-task seeds, combined with `selector.seed`.
    pub seed: u64,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        RuntimeSection { max_steps: DEFAULT_MAX_STEPS, workers: 0, seed: 0, max_tokens: 256, temperature: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pool: Option<PathBuf>,
    /// Defaults to `<pool stem>.tk.jsonl` next to the pool.
    pub tk_cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { pool: None, tk_cache: None, out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    /// JSON file with `demo` and `context` templates.
    pub template_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub strategies: Vec<Strategy>,
    /// Task ids to evaluate; all non-pool tasks when absent.
    pub tasks: Option<Vec<String>>,
    pub bucket_edges: Vec<f64>,
    pub sweep_m: Vec<usize>,
    pub low_quality_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategies: Strategy::ALL.to_vec(),
            tasks: None,
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
            sweep_m: vec![0, 1, 2, 3],
            low_quality_threshold: DEFAULT_LOW_QUALITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub embed: EmbedConfig,
    pub selector: SelectorConfig,
    pub env: EnvConfig,
    pub runtime: RuntimeSection,
    pub paths: PathsConfig,
    pub retriever: RetrieverConfig,
    pub eval: EvalConfig,
}

/// Parses a command-line or environment value as a TOML value, falling back
/// to a plain string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<(), Error> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key {key:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: {part} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `DICE_SELECTOR__M=3` becomes `("selector.m", "3")`; variables without a
/// double underscore are ignored.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            rest.contains("__").then(|| (rest.to_lowercase().replace("__", "."), v))
        })
        .collect();
    out.sort();
    out
}

impl RunConfig {
    /// Layers `file`, then `env`, then `flags` over the defaults.
    pub fn resolve(file: Option<&Path>, env: &[(String, String)], flags: &[(String, String)]) -> Result<Self, Error> {
        let mut root = match file {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for (key, raw) in env.iter().chain(flags) {
            set_path(&mut root, key, parse_value(raw))?;
        }
        let cfg: RunConfig =
            Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.selector.validate()?;
        if self.runtime.max_steps == 0 {
            return Err(Error::Config("runtime.max_steps must be at least 1".into()));
        }
        if self.backend.kind == BackendKind::Http
            && (self.backend.endpoint_url.is_none() || self.backend.model.is_none())
        {
            return Err(Error::Config("backend.endpoint_url and backend.model are required for http".into()));
        }
        if self.backend.kind == BackendKind::Scripted
            && self.backend.agent == ScriptedAgent::Rules
            && self.backend.agent_rules.is_none()
        {
            return Err(Error::Config("backend.agent = \"rules\" needs backend.agent_rules".into()));
        }
        if self.embed.kind == EmbedKind::Http && (self.embed.endpoint_url.is_none() || self.embed.model.is_none()) {
            return Err(Error::Config("embed.endpoint_url and embed.model are required for http".into()));
        }
        if self.env.kind != EnvKind::Synthetic && self.env.world_path.is_none() {
            return Err(Error::Config("env.world_path is required for this env.kind".into()));
        }
        if self.eval.strategies.is_empty() {
            return Err(Error::Config("eval.strategies is empty".into()));
        }
        let inputs = [
            self.backend.agent_rules.as_deref(),
            self.backend.retriever_rules.as_deref(),
            self.env.world_path.as_deref(),
            self.retriever.template_path.as_deref(),
        ];
        for path in inputs.into_iter().flatten() {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the fully resolved configuration, output directory excluded.
    pub fn fingerprint(&self) -> String {
        let mut settings = self.clone();
        settings.paths.out_dir = PathBuf::new();
        let digest = Sha256::digest(settings.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Base seed handed to the per-task seed derivation.
    pub fn episode_seed(&self) -> u64 {
        self.selector.seed.wrapping_add(self.runtime.seed)
    }
}
