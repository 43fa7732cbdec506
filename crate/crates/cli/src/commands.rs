use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrib_core::attribution::{AttributionConfig, Attributor, GenerationBackend, KnownPrompt, ModelSet, PromptSource};
use attrib_core::eval::{
    augment_pool, reports_to_csv, write_output, write_synthetic_dataset, DatasetItem, EvalReport, Evaluator,
    ExperimentConfig, LabeledDataset, PromptMode,
};
use attrib_core::gateway::{GatewayBackend, GatewayClient, GatewayConfig, PoolCache, RemoteCaption, RemoteEmbed};
use attrib_core::imagecore::{load_image, save_image, AttackConfig};
use attrib_core::similarity::{ExtractorKind, SimilarityMethod, SpectralExtractor};
use attrib_core::spectral::{average_spectrum, raps};
use attrib_core::synth::{synthetic_prompts, PromptRegistry, SyntheticBackend};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{parse_config, BackendSpec, PromptSpec, RunConfig};
use crate::{
    AttackArgs, AttributeArgs, AugmentArgs, CliError, Command, EvalArgs, SpectraArgs, SynthCommand, SynthGenArgs,
};

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Attribute(args) => attribute(args),
        Command::Eval(args) => eval(args),
        Command::Spectra(args) => spectra(args),
        Command::Attack(args) => attack(args),
        Command::Augment(args) => augment(args),
        Command::Synth {
            command: SynthCommand::Gen(args),
        } => synth_gen(args),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn set_workers(workers: usize) {
    if workers > 0 {
        // Only fails if a global pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn gateway_client(url: &str, cfg: &RunConfig) -> Result<GatewayClient, CliError> {
    let gc = GatewayConfig {
        api_key: cfg.api_key.clone(),
        timeout_ms: cfg.timeout_ms,
        retries: cfg.retries,
        ..GatewayConfig::new(url)
    };
    GatewayClient::new(gc).map_err(|e| usage(e.to_string()))
}

struct Backend {
    backend: Box<dyn GenerationBackend>,
    default_models: Option<ModelSet>,
}

fn build_backend(cfg: &RunConfig) -> Result<Backend, CliError> {
    match &cfg.backend {
        BackendSpec::Synthetic {
            family_seed,
            family_size,
        } => {
            let backend = SyntheticBackend::from_seed(*family_size, *family_seed).map_err(|e| usage(e.to_string()))?;
            let ids = ModelSet::new(backend.model_ids())?;
            Ok(Backend {
                backend: Box::new(backend),
                default_models: Some(ids),
            })
        }
        BackendSpec::Gateway { url } => Ok(Backend {
            backend: Box::new(GatewayBackend::new(gateway_client(url, cfg)?)),
            default_models: None,
        }),
    }
}

fn build_method(cfg: &RunConfig) -> Result<SimilarityMethod, CliError> {
    Ok(match cfg.extractor {
        ExtractorKind::Spectral => SimilarityMethod::spectral(),
        ExtractorKind::Ssim => SimilarityMethod::Ssim,
        ExtractorKind::Combined => SimilarityMethod::Combined {
            extractor: Arc::new(SpectralExtractor),
            weight: cfg.weight,
        },
        ExtractorKind::Embed => {
            let url = match (&cfg.embed_url, &cfg.backend) {
                (Some(u), _) => u.clone(),
                (None, BackendSpec::Gateway { url }) => url.clone(),
                (None, _) => return Err(usage("--extractor embed needs --embed-url or --gateway")),
            };
            SimilarityMethod::Cosine(Arc::new(RemoteEmbed::new(gateway_client(&url, cfg)?)))
        }
    })
}

fn build_prompt_source(cfg: &RunConfig) -> Result<Option<Arc<dyn PromptSource>>, CliError> {
    Ok(match &cfg.prompt {
        PromptSpec::Stored => None,
        PromptSpec::Text(t) => Some(Arc::new(KnownPrompt::new(Some(t.clone())))),
        PromptSpec::CaptionUrl(url) => Some(Arc::new(RemoteCaption::new(gateway_client(url, cfg)?))),
        PromptSpec::Registry { path, lossy } => {
            let reg = PromptRegistry::load(path)?;
            let lossy = *lossy || reg.lossy_mode();
            Some(Arc::new(reg.with_lossy_mode(lossy)))
        }
    })
}

fn attribution_config(cfg: &RunConfig) -> Result<AttributionConfig, CliError> {
    Ok(AttributionConfig {
        gamma: cfg.gamma,
        scheme: cfg.scheme,
        method: build_method(cfg)?,
        seed: cfg.seed,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable output")
}

fn attribute(args: AttributeArgs) -> Result<(), CliError> {
    let cfg = parse_config(&args.run)?;
    set_workers(cfg.workers);
    let source = build_prompt_source(&cfg)?
        .ok_or_else(|| usage("attribute needs one of --prompt, --caption-url or --registry"))?;
    let Backend {
        backend,
        default_models,
    } = build_backend(&cfg)?;
    let models = cfg
        .models
        .clone()
        .or(default_models)
        .ok_or_else(|| usage("--models is required with --gateway"))?;
    let cache = cfg.cache_dir.as_ref().map(PoolCache::new);
    let mut attributor = Attributor::new(backend.as_ref(), attribution_config(&cfg)?)?;
    if let Some(cache) = &cache {
        attributor = attributor.with_cache(cache);
    }
    let image = load_image(&args.image)?;
    let result = attributor.attribute(&image, &models, source.as_ref())?;
    info!("best model {} ({:.1} ms)", result.best, result.timing_ms.total_ms);
    write_output(&args.out, &to_json(&result))?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, list: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| usage(format!("{flag}: bad entry {s:?}: {e}")))
        })
        .collect()
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = parse_config(&args.run)?;
    let modes = [args.sweep_gamma.is_some(), args.attacks.is_some(), args.ablate_schemes]
        .iter()
        .filter(|b| **b)
        .count();
    if modes > 1 {
        return Err(usage(
            "use at most one of --sweep-gamma, --attacks and --ablate-schemes",
        ));
    }
    let prompt_mode = match &cfg.prompt {
        PromptSpec::Text(_) => return Err(usage("--prompt applies to attribute; eval uses the manifest prompts")),
        PromptSpec::Stored => PromptMode::Stored,
        _ => PromptMode::Source(build_prompt_source(&cfg)?.expect("non-stored prompt mode has a source")),
    };
    let gammas = args
        .sweep_gamma
        .as_deref()
        .map(|s| parse_list::<usize>("--sweep-gamma", s))
        .transpose()?;
    let attacks = args
        .attacks
        .as_deref()
        .map(|s| parse_list::<AttackConfig>("--attacks", s))
        .transpose()?;

    let dataset = LabeledDataset::load_manifest(&args.dataset, cfg.models.clone())?;
    let Backend { backend, .. } = build_backend(&cfg)?;
    let cache = cfg.cache_dir.as_ref().map(PoolCache::new);
    let mut evaluator = Evaluator::new(backend.as_ref());
    if let Some(cache) = &cache {
        evaluator = evaluator.with_cache(cache);
    }
    let experiment = ExperimentConfig {
        prompt_mode,
        workers: cfg.workers,
        skip_errors: args.skip_errors,
        ..ExperimentConfig::new(attribution_config(&cfg)?)
    };

    let (json, rows): (String, Vec<(String, EvalReport)>) = if let Some(gammas) = gammas {
        let runs = evaluator
            .gamma_sweep(&dataset, &experiment, &gammas)
            .map_err(|e| match e {
                attrib_core::eval::EvalError::InvalidConfig(m) => usage(format!("--sweep-gamma: {m}")),
                other => other.into(),
            })?;
        let rows: Vec<(String, EvalReport)> = runs.into_iter().map(|(g, r)| (format!("gamma={g}"), r)).collect();
        (runs_json(&rows, None), rows)
    } else if let Some(attacks) = attacks {
        let runs = evaluator.robustness_sweep(&dataset, &experiment, &attacks)?;
        let rows: Vec<(String, EvalReport)> = runs.into_iter().map(|(a, r)| (a.to_string(), r)).collect();
        (runs_json(&rows, None), rows)
    } else if args.ablate_schemes {
        let ablation = evaluator.scheme_ablation(&dataset, &experiment)?;
        let rows: Vec<(String, EvalReport)> = ablation
            .runs
            .into_iter()
            .map(|(s, r)| (format!("scheme={s}"), r))
            .collect();
        let extra = serde_json::to_value(&ablation.best_scheme_per_model).expect("serializable");
        (runs_json(&rows, Some(extra)), rows)
    } else {
        let report = evaluator.run(&dataset, &experiment)?;
        (report.to_json(), vec![(format!("gamma={}", cfg.gamma), report)])
    };
    for (label, r) in &rows {
        info!(
            "{label}: accuracy {:.4} over {} items ({} errors)",
            r.metrics.accuracy, r.metrics.n, r.errors
        );
    }
    write_output(&args.out, &json)?;
    if let Some(csv) = &args.csv {
        let refs: Vec<(String, &EvalReport)> = rows.iter().map(|(l, r)| (l.clone(), r)).collect();
        write_output(csv, reports_to_csv(&refs).trim_end())?;
    }
    Ok(())
}

fn runs_json(rows: &[(String, EvalReport)], best_scheme_per_model: Option<serde_json::Value>) -> String {
    let runs: Vec<serde_json::Value> = rows
        .iter()
        .map(|(label, report)| json!({"label": label, "report": report}))
        .collect();
    let mut out = json!({ "runs": runs });
    if let Some(v) = best_scheme_per_model {
        out["best_scheme_per_model"] = v;
    }
    to_json(&out)
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files under `dir`, recursively, in sorted order.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| CliError::Domain(format!("{}: {e}", d.display())))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if is_image(&path) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn spectra(args: SpectraArgs) -> Result<(), CliError> {
    if args.limit == 0 {
        return Err(usage("--limit must be at least 1"));
    }
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    if let Some(manifest) = &args.dataset {
        let ds = LabeledDataset::load_manifest(manifest, None)?;
        for item in ds.items {
            groups.entry(item.label.to_string()).or_default().push(item.path);
        }
    } else if let Some(dir) = &args.input {
        groups.insert("all".into(), list_images(dir)?);
    }
    fs::create_dir_all(&args.out)?;
    let mut summary = Vec::new();
    for (label, mut paths) in groups {
        paths.truncate(args.limit);
        if paths.is_empty() {
            continue;
        }
        let images = paths.par_iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
        let spectrum = average_spectrum(&images)?;
        let profile = raps(&spectrum)?;
        let csv = args.out.join(format!("{label}_raps.csv"));
        let png = args.out.join(format!("{label}_spectrum.png"));
        fs::write(&csv, profile.to_csv())?;
        save_image(&spectrum.heatmap(), &png)?;
        info!("{label}: {} images -> {}", images.len(), csv.display());
        summary.push(json!({"label": label, "images": images.len(), "raps_csv": csv, "heatmap": png}));
    }
    write_output(Path::new("-"), &to_json(&summary))?;
    Ok(())
}

fn attack(args: AttackArgs) -> Result<(), CliError> {
    let attack: AttackConfig = format!("{}:{}", args.op, args.param)
        .parse()
        .map_err(|e: attrib_core::imagecore::ImageError| usage(e.to_string()))?;
    let inputs = list_images(&args.input)?;
    let target = |src: &Path| -> PathBuf {
        let rel = src.strip_prefix(&args.input).unwrap_or(src);
        args.out.join(rel).with_extension("png")
    };
    inputs.par_iter().try_for_each(|src| -> Result<(), CliError> {
        let dst = target(src);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent)?;
        }
        save_image(&attack.apply(&load_image(src)?)?, &dst)?;
        Ok(())
    })?;
    let manifest = args.input.join("manifest.jsonl");
    if manifest.exists() {
        let ds = LabeledDataset::load_manifest(&manifest, None)?;
        let items = ds
            .items
            .iter()
            .map(|item| DatasetItem {
                path: target(&item.path),
                ..item.clone()
            })
            .collect();
        LabeledDataset::new(items, ds.models)?.save_manifest(args.out.join("manifest.jsonl"))?;
    }
    info!("applied {attack} to {} images", inputs.len());
    write_output(
        Path::new("-"),
        &to_json(&json!({"attack": attack.to_string(), "images": inputs.len()})),
    )?;
    Ok(())
}

fn augment(args: AugmentArgs) -> Result<(), CliError> {
    let cfg = parse_config(&args.run)?;
    set_workers(cfg.workers);
    let dataset = LabeledDataset::load_manifest(&args.dataset, cfg.models.clone())?;
    let Backend { backend, .. } = build_backend(&cfg)?;
    let source = build_prompt_source(&cfg)?;
    let out = augment_pool(
        &dataset,
        args.n_per_image,
        backend.as_ref(),
        source.as_deref(),
        cfg.seed,
        &args.out,
    )?;
    if args.n_per_image == 0 {
        out.save_manifest(args.out.join("manifest.jsonl"))?;
    }
    let summary = json!({
        "items": out.len(),
        "generated": out.len() - dataset.len(),
        "manifest": args.out.join("manifest.jsonl"),
    });
    write_output(Path::new("-"), &to_json(&summary))?;
    Ok(())
}

fn synth_gen(args: SynthGenArgs) -> Result<(), CliError> {
    let prompts: Vec<String> = match (&args.prompts, args.n_prompts) {
        (Some(path), _) => fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        (None, Some(n)) => synthetic_prompts(n, args.seed),
        (None, None) => return Err(usage("synth gen needs --prompts or --n-prompts")),
    };
    if prompts.is_empty() {
        return Err(usage("no prompts given"));
    }
    if args.per_prompt == 0 {
        return Err(usage("--per-prompt must be at least 1"));
    }
    let backend = SyntheticBackend::from_seed(args.k, args.family_seed).map_err(|e| usage(e.to_string()))?;
    let registry = PromptRegistry::new(false);
    let ds = write_synthetic_dataset(
        &backend,
        &prompts,
        args.per_prompt,
        args.seed,
        &args.out,
        Some(&registry),
    )?;
    let registry_path = args.out.join("registry.json");
    registry.save(&registry_path)?;
    let summary = json!({
        "items": ds.len(),
        "models": ds.models.ids(),
        "manifest": args.out.join("manifest.jsonl"),
        "registry": registry_path,
    });
    write_output(Path::new("-"), &to_json(&summary))?;
    Ok(())
}
