//! Run configuration: a TOML file, named backend profiles, and
//! `VIDSUM_<SECTION>_<KEY>` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::RetryPolicy;
use crate::chat::ChatBackendConfig;
use crate::embedding::EmbeddingBackendConfig;
use crate::error::{Error, Result};
use crate::evaluate::BleuConfig;
use crate::ingest::ExtractOptions;
use crate::prompts::PromptSet;
use crate::sampler::SamplerConfig;
use crate::semantics::SemanticsConfig;
use crate::summarizer::{DEFAULT_CONTEXT_TOKENS, DEFAULT_TILE};
use crate::util;

pub const ENV_PREFIX: &str = "VIDSUM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub fps: f64,
    pub decoder: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resize: Option<[u32; 2]>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            fps: 1.0,
            decoder: PathBuf::from("ffmpeg"),
            resize: None,
        }
    }
}

impl IngestConfig {
    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            decoder: self.decoder.clone(),
            resize: self.resize.map(|[w, h]| (w, h)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangepointConfig {
    /// Fixed penalty; the data-scaled default applies when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizerConfig {
    pub context_tokens: usize,
    pub tile_size: u32,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            context_tokens: DEFAULT_CONTEXT_TOKENS,
            tile_size: DEFAULT_TILE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_embed: Option<EmbeddingBackendConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_embed: Option<EmbeddingBackendConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chat: Option<ChatBackendConfig>,
}

impl BackendSet {
    fn overlay(&mut self, other: &BackendSet) {
        if other.frame_embed.is_some() {
            self.frame_embed = other.frame_embed.clone();
        }
        if other.joint_embed.is_some() {
            self.joint_embed = other.joint_embed.clone();
        }
        if other.chat.is_some() {
            self.chat = other.chat.clone();
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// TSV or JSON annotation matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// Reference summaries, one file each.
    pub references: Vec<PathBuf>,
    /// Ask the chat backend to grade the summary with a rubric.
    pub judge: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_rubric: Option<String>,
    pub bleu: BleuConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Backend response cache; `<run dir>/cache` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub skip_stage1: bool,
    pub skip_stage2: bool,
    pub video_only: bool,
    /// Summarize every selected frame on its own instead of in windows.
    pub no_grouping: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub changepoint: ChangepointConfig,
    pub sampler: SamplerConfig,
    pub semantics: SemanticsConfig,
    pub summarizer: SummarizerConfig,
    pub backends: BackendSet,
    pub retry: RetryPolicy,
    pub eval: EvalConfig,
    pub run: RunConfig,
    pub prompts: PromptSet,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub profiles: BTreeMap<String, BackendSet>,
}

impl PipelineConfig {
    /// Reads `path`, applies `profile`, then environment overrides from `env`.
    /// Relative paths inside the file are resolved against its directory.
    pub fn load(
        path: &Path,
        profile: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, profile, env)?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(
        text: &str,
        profile: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(name) = profile {
            let set = cfg
                .profiles
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no backend profile named {name:?}")))?;
            cfg.backends.overlay(&set);
        }
        cfg.apply_env(env)
    }

    /// Applies `VIDSUM_<SECTION>_<KEY>=value` overrides. Names are matched
    /// against the keys of the fully defaulted config, longest key first, so
    /// `VIDSUM_SAMPLER_DIFF_THRESHOLD` reaches `sampler.diff_threshold`. A
    /// name that runs out of known keys inside a table adds the remainder as a
    /// new key there, which lets unset optional fields be filled in.
    pub fn apply_env(self, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut overrides: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .collect();
        if overrides.is_empty() {
            return Ok(self);
        }
        overrides.sort();
        let mut value = toml::Value::try_from(&self)
            .map_err(|e| Error::Config(format!("cannot snapshot config: {e}")))?;
        for (name, raw) in overrides {
            set_by_env_name(&mut value, &name, &raw)?;
        }
        value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid environment override: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for set in std::iter::once(&mut self.backends).chain(self.profiles.values_mut()) {
            for emb in [&mut set.frame_embed, &mut set.joint_embed].into_iter().flatten() {
                emb.model_path.as_mut().map(fix);
                emb.fixtures.as_mut().map(fix);
            }
            if let Some(chat) = &mut set.chat {
                chat.fixtures.as_mut().map(fix);
            }
        }
        self.eval.annotations.as_mut().map(fix);
        self.eval.references.iter_mut().for_each(fix);
        self.run.cache_dir.as_mut().map(fix);
        // A bare decoder name is looked up on PATH; only explicit paths move.
        if self.ingest.decoder.components().count() > 1 {
            fix(&mut self.ingest.decoder);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ingest.fps.is_finite() && self.ingest.fps > 0.0) {
            return Err(Error::Config("ingest.fps must be positive".into()));
        }
        if let Some(p) = self.changepoint.penalty {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config("changepoint.penalty must be positive".into()));
            }
        }
        self.sampler.validate()?;
        self.semantics.validate()?;
        if self.summarizer.context_tokens == 0 || self.summarizer.tile_size == 0 {
            return Err(Error::Config("summarizer sizes must be positive".into()));
        }
        let b = &self.backends;
        for (name, emb) in [("frame_embed", &b.frame_embed), ("joint_embed", &b.joint_embed)] {
            emb.as_ref()
                .ok_or_else(|| Error::Config(format!("backends.{name} is not configured")))?
                .validate()?;
        }
        b.chat
            .as_ref()
            .ok_or_else(|| Error::Config("backends.chat is not configured".into()))?
            .validate()?;
        Ok(())
    }

    /// Stable digest of everything that can change a run's artifacts.
    pub fn hash(&self) -> String {
        let mut snapshot = self.clone();
        snapshot.profiles.clear();
        let bytes = serde_json::to_vec(&snapshot).expect("config serializes");
        util::sha256_hex(&bytes)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot write config: {e}")))
    }
}

fn set_by_env_name(root: &mut toml::Value, name: &str, raw: &str) -> Result<()> {
    let unknown = || Error::Config(format!("{ENV_PREFIX}{} does not name a config key", name.to_ascii_uppercase()));
    let mut node = root;
    let mut rest = name;
    loop {
        let table = node.as_table_mut().ok_or_else(unknown)?;
        let mut keys: Vec<&String> = table
            .keys()
            .filter(|k| rest == k.as_str() || rest.starts_with(&format!("{k}_")))
            .collect();
        keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
        match keys.first().map(|k| k.to_string()) {
            Some(k) if rest == k => {
                table.insert(k, parse_env_value(raw));
                return Ok(());
            }
            Some(k) if table[&k].is_table() => {
                rest = &rest[k.len() + 1..];
                node = table.get_mut(&k).expect("key exists");
            }
            _ if !rest.is_empty() => {
                table.insert(rest.to_string(), parse_env_value(raw));
                return Ok(());
            }
            _ => return Err(unknown()),
        }
    }
}

/// TOML scalar or array if it parses as one, otherwise a plain string.
fn parse_env_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
