use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use hitforge::agents::PipelineConfig;
use hitforge::eval::{TokenAggregate, DEFAULT_TRIALS};
use hitforge::kb::DEFAULT_ANNOTATION_ATTEMPTS;
use hitforge::retrieval::CardEmbedText;
use hitforge::runner::ExecConfig;

/// Config file looked up in the working directory when `--config` is absent.
pub const DEFAULT_CONFIG_FILE: &str = "hitforge.toml";

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kb_dir: PathBuf,
    /// Directory of `<name>.txt` prompt overrides.
    pub templates: Option<PathBuf>,
    /// Run logs and eval reports are created under this directory.
    pub work_dir: PathBuf,
    /// JSON marker table replacing the built-in error markers.
    pub markers: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            kb_dir: PathBuf::from("kb"),
            templates: None,
            work_dir: PathBuf::from("runs"),
            markers: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub endpoint: String,
    pub api_key: String,
    /// Model used for card generation.
    pub reasoning_model: String,
    /// Model used for alignment, queries, correction and annotation.
    pub general_model: String,
    pub timeout_seconds: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            api_key: String::new(),
            reasoning_model: "o3-mini".into(),
            general_model: "gpt-4o".into(),
            timeout_seconds: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProvider {
    #[default]
    Hashing,
    Http,
    Replay,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingProvider,
    /// Dimension of the hashing embedder.
    pub dim: usize,
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout_seconds: u64,
    /// JSON file of text -> vector for the replay provider.
    pub replay_file: Option<PathBuf>,
    pub embed_text: CardEmbedText,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Hashing,
            dim: 256,
            endpoint: "https://api.openai.com/v1".into(),
            api_key: String::new(),
            model: "text-embedding-3-small".into(),
            timeout_seconds: 60,
            replay_file: None,
            embed_text: CardEmbedText::Summary,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSettings {
    pub batch_size: usize,
    pub max_attempts: usize,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        Self {
            batch_size: 4,
            max_attempts: DEFAULT_ANNOTATION_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub trials: usize,
    pub concurrency: usize,
    pub token_aggregate: TokenAggregate,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            concurrency: 4,
            token_aggregate: TokenAggregate::Mean,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub llm: LlmSettings,
    pub embedding: EmbeddingSettings,
    pub pipeline: PipelineConfig,
    pub runner: ExecConfig,
    pub annotate: AnnotateSettings,
    pub eval: EvalSettings,
    pub seed: u64,
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Reads `path`, or `hitforge.toml` in the working directory if present,
    /// or falls back to defaults. Relative paths are taken relative to the
    /// config file. Secrets and endpoints can be overridden from the
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(p.to_path_buf()),
            None => Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.is_file()),
        };
        let mut config = match &file {
            Some(f) => {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading config {}", f.display()))?;
                toml::from_str::<Config>(&text).with_context(|| format!("parsing config {}", f.display()))?
            }
            None => Config::default(),
        };
        let base = file
            .as_ref()
            .and_then(|f| f.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default();
        config.anchor_paths(&base);
        config.apply_env();
        config.validate()?;
        Ok(config)
    }

    fn anchor_paths(&mut self, base: &Path) {
        anchor(base, &mut self.paths.kb_dir);
        anchor(base, &mut self.paths.work_dir);
        for p in [&mut self.paths.templates, &mut self.paths.markers, &mut self.embedding.replay_file]
            .into_iter()
            .flatten()
        {
            anchor(base, p);
        }
    }

    fn apply_env(&mut self) {
        if let Some(v) = env("HITFORGE_LLM_API_KEY") {
            self.llm.api_key = v;
        }
        if let Some(v) = env("HITFORGE_LLM_ENDPOINT") {
            self.llm.endpoint = v;
        }
        if let Some(v) = env("HITFORGE_EMBEDDING_API_KEY") {
            self.embedding.api_key = v;
        }
        if let Some(v) = env("HITFORGE_EMBEDDING_ENDPOINT") {
            self.embedding.endpoint = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.embedding.provider == EmbeddingProvider::Hashing && self.embedding.dim == 0 {
            bail!("embedding.dim must be positive");
        }
        if self.embedding.provider == EmbeddingProvider::Replay && self.embedding.replay_file.is_none() {
            bail!("embedding.provider = \"replay\" needs embedding.replay_file");
        }
        for p in [&self.paths.templates, &self.paths.markers, &self.embedding.replay_file]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("configured path {} does not exist", p.display());
            }
        }
        if self.eval.trials == 0 {
            bail!("eval.trials must be at least 1");
        }
        Ok(())
    }
}
