//! Run configuration: command-line flags over a JSON config file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use attrib_core::attribution::{ModelSet, RankScheme};
use attrib_core::similarity::ExtractorKind;
use clap::Args;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_GAMMA: usize = 100;
pub const DEFAULT_SEED: u64 = 2023;
pub const DEFAULT_FAMILY_SEED: u64 = 2023;
pub const DEFAULT_FAMILY_SIZE: usize = 4;
pub const DEFAULT_WEIGHT: f64 = 0.5;

/// Flags shared by every subcommand that runs attribution.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON config file with flat keys named like the flags (`gamma`, `family-seed`, ...).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Comma-separated candidate model ids.
    #[arg(long, value_name = "M1,M2,...")]
    pub models: Option<String>,
    /// Candidate images per model [default: 100].
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Ranking scheme: avg, best or avg_best [default: best].
    #[arg(long)]
    pub scheme: Option<RankScheme>,
    /// Similarity: spectral, embed, ssim or combined [default: spectral].
    #[arg(long)]
    pub extractor: Option<ExtractorKind>,
    /// Weight of the cosine term for `--extractor combined` [default: 0.5].
    #[arg(long)]
    pub weight: Option<f64>,
    /// Run seed for candidate generation [default: 2023].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this text as the prompt.
    #[arg(long, value_name = "TEXT")]
    pub prompt: Option<String>,
    /// Recover prompts through a caption service.
    #[arg(long, value_name = "URL")]
    pub caption_url: Option<String>,
    /// Recover prompts from a synthetic prompt registry file.
    #[arg(long, value_name = "FILE")]
    pub registry: Option<PathBuf>,
    /// Make the registry return degraded prompts.
    #[arg(long)]
    pub lossy: bool,
    /// Generate candidates through a model gateway instead of the synthetic family.
    #[arg(long, value_name = "URL")]
    pub gateway: Option<String>,
    /// Embedding service for `--extractor embed` [default: the gateway URL].
    #[arg(long, value_name = "URL")]
    pub embed_url: Option<String>,
    /// Value of the X-Api-Key header sent to remote services.
    #[arg(long, env = "ATTRIB_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    /// Per-request timeout for remote services [default: 30000].
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Retries for failed remote requests [default: 2].
    #[arg(long)]
    pub retries: Option<u32>,
    /// Master seed of the synthetic model family [default: 2023].
    #[arg(long)]
    pub family_seed: Option<u64>,
    /// Number of synthetic models [default: 4].
    #[arg(long)]
    pub family_size: Option<usize>,
    /// Persist candidate pools under this directory.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Contents of a `--config` file. Keys may use `-` or `_`.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub models: Option<String>,
    pub gamma: Option<usize>,
    pub scheme: Option<String>,
    pub extractor: Option<String>,
    pub weight: Option<f64>,
    pub seed: Option<u64>,
    pub prompt: Option<String>,
    pub caption_url: Option<String>,
    pub registry: Option<PathBuf>,
    pub lossy: Option<bool>,
    pub gateway: Option<String>,
    pub embed_url: Option<String>,
    pub api_key: Option<String>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub family_seed: Option<u64>,
    pub family_size: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let serde_json::Value::Object(map) = value else {
            return Err("expected a JSON object".into());
        };
        let normalized: serde_json::Map<String, serde_json::Value> =
            map.into_iter().map(|(k, v)| (k.replace('_', "-"), v)).collect();
        serde_json::from_value(serde_json::Value::Object(normalized)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptSpec {
    /// Prompts come from the dataset manifest.
    Stored,
    Text(String),
    CaptionUrl(String),
    Registry {
        path: PathBuf,
        lossy: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Synthetic { family_seed: u64, family_size: usize },
    Gateway { url: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub models: Option<ModelSet>,
    pub gamma: usize,
    pub scheme: RankScheme,
    pub extractor: ExtractorKind,
    pub weight: f64,
    pub seed: u64,
    pub prompt: PromptSpec,
    pub backend: BackendSpec,
    pub embed_url: Option<String>,
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub cache_dir: Option<PathBuf>,
    /// 0 means one per logical core.
    pub workers: usize,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_enum<T: std::str::FromStr<Err = String>>(key: &str, v: Option<String>) -> Result<Option<T>, CliError> {
    v.map(|s| s.parse::<T>().map_err(|e| usage(format!("config `{key}`: {e}"))))
        .transpose()
}

/// Prompt mode from one layer; errors if the layer names more than one.
fn prompt_layer(
    prompt: Option<String>,
    caption_url: Option<String>,
    registry: Option<PathBuf>,
    lossy: bool,
    origin: &str,
) -> Result<Option<PromptSpec>, CliError> {
    let set = [prompt.is_some(), caption_url.is_some(), registry.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if set > 1 {
        return Err(usage(format!(
            "{origin} sets more than one of prompt, caption-url and registry; choose one prompt mode"
        )));
    }
    Ok(if let Some(t) = prompt {
        Some(PromptSpec::Text(t))
    } else if let Some(u) = caption_url {
        Some(PromptSpec::CaptionUrl(u))
    } else {
        registry.map(|path| PromptSpec::Registry { path, lossy })
    })
}

/// Resolves flags, then the config file named by `--config`, then defaults.
pub fn parse_config(flags: &RunFlags) -> Result<RunConfig, CliError> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    resolve(flags.clone(), file)
}

pub fn resolve(flags: RunFlags, file: FileConfig) -> Result<RunConfig, CliError> {
    let gamma = flags.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA);
    if gamma == 0 {
        return Err(usage("--gamma must be at least 1"));
    }
    let scheme = match flags.scheme {
        Some(s) => s,
        None => parse_enum("scheme", file.scheme)?.unwrap_or_default(),
    };
    let extractor = match flags.extractor {
        Some(e) => e,
        None => parse_enum("extractor", file.extractor)?.unwrap_or(ExtractorKind::Spectral),
    };
    let weight = flags.weight.or(file.weight).unwrap_or(DEFAULT_WEIGHT);
    if !(0.0..=1.0).contains(&weight) {
        return Err(usage(format!("--weight must be in [0, 1], got {weight}")));
    }
    let models = flags
        .models
        .or(file.models)
        .map(|m| ModelSet::parse(&m).map_err(|e| usage(format!("--models: {e}"))))
        .transpose()?;

    let lossy_file = file.lossy.unwrap_or(false);
    let from_flags = prompt_layer(
        flags.prompt,
        flags.caption_url,
        flags.registry,
        flags.lossy || lossy_file,
        "the command line",
    )?;
    let prompt = match from_flags {
        Some(p) => p,
        None => prompt_layer(
            file.prompt,
            file.caption_url,
            file.registry,
            flags.lossy || lossy_file,
            "the config file",
        )?
        .unwrap_or(PromptSpec::Stored),
    };
    if flags.lossy && !matches!(prompt, PromptSpec::Registry { .. }) {
        return Err(usage("--lossy only applies together with --registry"));
    }

    let gateway = flags.gateway.or(file.gateway);
    let family_seed = flags.family_seed.or(file.family_seed);
    let family_size = flags.family_size.or(file.family_size);
    let backend = match gateway {
        Some(url) => {
            if family_seed.is_some() || family_size.is_some() {
                return Err(usage(
                    "--family-seed and --family-size apply only to the synthetic backend, not --gateway",
                ));
            }
            BackendSpec::Gateway { url }
        }
        None => {
            let family_size = family_size.unwrap_or(DEFAULT_FAMILY_SIZE);
            if family_size == 0 {
                return Err(usage("--family-size must be at least 1"));
            }
            BackendSpec::Synthetic {
                family_seed: family_seed.unwrap_or(DEFAULT_FAMILY_SEED),
                family_size,
            }
        }
    };

    let embed_url = flags.embed_url.or(file.embed_url);
    if extractor == ExtractorKind::Embed && embed_url.is_none() && !matches!(backend, BackendSpec::Gateway { .. }) {
        return Err(usage("--extractor embed needs --embed-url or --gateway"));
    }
    let timeout_ms = flags
        .timeout_ms
        .or(file.timeout_ms)
        .unwrap_or(attrib_core::gateway::DEFAULT_TIMEOUT_MS);
    if timeout_ms == 0 {
        return Err(usage("--timeout-ms must be positive"));
    }

    Ok(RunConfig {
        models,
        gamma,
        scheme,
        extractor,
        weight,
        seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        prompt,
        backend,
        embed_url,
        api_key: flags.api_key.or(file.api_key),
        timeout_ms,
        retries: flags
            .retries
            .or(file.retries)
            .unwrap_or(attrib_core::gateway::DEFAULT_RETRIES),
        cache_dir: flags.cache_dir.or(file.cache_dir),
        workers: flags.workers.or(file.workers).unwrap_or(0),
    })
}
