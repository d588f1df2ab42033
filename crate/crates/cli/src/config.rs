use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trajsmith::agent::EpisodeConfig;
use trajsmith::exec::SessionConfig;
use trajsmith::pipeline::PipelineConfig;
use trajsmith::tools::ToolModels;

/// OpenAI-compatible endpoint used in live and record mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Cap on in-flight requests.
    pub concurrency: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig { base_url: None, api_key_env: None, timeout_secs: 120, concurrency: 8 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    #[default]
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CassetteConfig {
    pub mode: CassetteMode,
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    /// In-process interpreter for a Python subset.
    #[default]
    Mock,
    /// External sandbox host over the stdio protocol.
    Process,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    pub kind: ExecutorKind,
    pub session: SessionConfig,
}

/// Everything a subcommand needs. `[episode]` applies to every agent run,
/// including the pipeline's trajectory stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub provider: ProviderConfig,
    pub cassette: CassetteConfig,
    pub episode: EpisodeConfig,
    pub pipeline: PipelineConfig,
    pub tools: ToolModels,
    pub judge_model: String,
    pub executor: ExecutorConfig,
    /// `pool.jsonl` of source images for retrieval.
    pub image_pool: Option<PathBuf>,
    /// Worker threads; the CPU count when unset.
    pub parallel: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            provider: ProviderConfig::default(),
            cassette: CassetteConfig::default(),
            episode: EpisodeConfig::default(),
            pipeline: PipelineConfig::default(),
            tools: ToolModels::default(),
            judge_model: "gpt-4o-mini".into(),
            executor: ExecutorConfig::default(),
            image_pool: None,
            parallel: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {1}", path = .0.display())]
    Read(PathBuf, std::io::Error),
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("environment variable `{0}` is not set")]
    MissingEnv(String),
    #[error("unterminated `${{` in config")]
    Unterminated,
    #[error("{0}")]
    Invalid(String),
}

/// Replace every `${NAME}` with the value of the environment variable `NAME`.
pub fn interpolate(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(at) = rest.find("${") {
        out.push_str(&rest[..at]);
        let after = &rest[at + 2..];
        let end = after.find('}').ok_or(ConfigError::Unterminated)?;
        let name = &after[..end];
        out.push_str(&env(name).ok_or_else(|| ConfigError::MissingEnv(name.to_owned()))?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl RunConfig {
    /// Read a TOML config, interpolating environment variables. Relative
    /// paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_owned(), e))?;
        let text = interpolate(&text, |k| std::env::var(k).ok())?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.cassette.dir);
        resolve(&mut cfg.image_pool);
        Ok(cfg)
    }

    pub fn parallel(&self) -> usize {
        self.parallel
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.provider.timeout_secs)
    }

    /// Checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match self.cassette.mode {
            CassetteMode::Replay | CassetteMode::Record if self.cassette.dir.is_none() => {
                return invalid("record and replay mode need a cassette directory".into());
            }
            _ => {}
        }
        if self.cassette.mode != CassetteMode::Replay {
            if self.provider.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
                return invalid("live mode needs provider.base_url (or use --replay)".into());
            }
            let Some(var) = &self.provider.api_key_env else {
                return invalid("live mode needs provider.api_key_env".into());
            };
            if std::env::var(var).is_err() {
                return Err(ConfigError::MissingEnv(var.clone()));
            }
        }
        if self.executor.kind == ExecutorKind::Process && self.executor.session.launch.is_empty() {
            return invalid("the process executor needs executor.session.launch".into());
        }
        self.episode.validate().map_err(ConfigError::Invalid)?;
        self.pipeline.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let env = |k: &str| (k == "KEY").then(|| "v".to_owned());
        assert_eq!(interpolate("a=${KEY}/${KEY}", env).unwrap(), "a=v/v");
        assert!(matches!(interpolate("${NOPE}", env), Err(ConfigError::MissingEnv(n)) if n == "NOPE"));
        assert!(matches!(interpolate("x ${KEY", env), Err(ConfigError::Unterminated)));
        assert_eq!(interpolate("no vars", env).unwrap(), "no vars");
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("[episode]\nmax_steps = 4\n[pipeline.query_gen]\nrng_seed = 7\n").unwrap();
        assert_eq!(cfg.episode.max_steps, 4);
        assert_eq!(cfg.episode.context_token_budget, 10240);
        assert_eq!(cfg.pipeline.query_gen.rng_seed, 7);
        assert_eq!(cfg.pipeline.n, PipelineConfig::default().n);
    }

    #[test]
    fn replay_without_dir_is_invalid() {
        let mut cfg = RunConfig::default();
        cfg.cassette.mode = CassetteMode::Replay;
        assert!(cfg.validate().is_err());
        cfg.cassette.dir = Some("c".into());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn live_without_endpoint_is_invalid() {
        let cfg = RunConfig::default();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(m)) if m.contains("base_url")));
    }
}
