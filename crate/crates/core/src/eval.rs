//! Labeled datasets, metrics, experiment runs and sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    AttribError, AttributionConfig, AttributionResult, Attributor, GenerationBackend, KnownPrompt, ModelId, ModelSet,
    Prompt, PromptSource, RankScheme, SignatureMemo, StageTiming,
};
use crate::gateway::cache::PoolCache;
use crate::imagecore::{load_image, save_image, AttackConfig, ImageError};
use crate::rng::HashKey;
use crate::synth::{synth_generate, PromptRegistry, SynthError, SyntheticBackend};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} truth labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("label {0} is not in the model set")]
    UnknownLabel(String),
    #[error("no items to evaluate")]
    Empty,
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Attrib(#[from] AttribError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub path: PathBuf,
    pub label: ModelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pub items: Vec<DatasetItem>,
    pub models: ModelSet,
}

impl LabeledDataset {
    pub fn new(items: Vec<DatasetItem>, models: ModelSet) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::Empty);
        }
        if let Some(bad) = items.iter().find(|i| !models.contains(&i.label)) {
            return Err(EvalError::UnknownLabel(bad.label.to_string()));
        }
        Ok(LabeledDataset { items, models })
    }

    /// Reads a JSONL manifest (`{path, label, prompt?}` per line). Relative
    /// paths are resolved against the manifest's directory. The model set is
    /// `models` when given, otherwise the sorted distinct labels.
    pub fn load_manifest(path: impl AsRef<Path>, models: Option<ModelSet>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut items = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut item: DatasetItem = serde_json::from_str(&line).map_err(|e| EvalError::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if item.path.is_relative() {
                item.path = base.join(&item.path);
            }
            items.push(item);
        }
        let models = match models {
            Some(m) => m,
            None => {
                let labels: BTreeSet<ModelId> = items.iter().map(|i| i.label.clone()).collect();
                ModelSet::new(labels.into_iter().collect()).map_err(|_| EvalError::Empty)?
            }
        };
        LabeledDataset::new(items, models)
    }

    /// Writes a JSONL manifest with paths relative to the manifest directory
    /// where possible.
    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = String::new();
        for item in &self.items {
            let rel = DatasetItem {
                path: item
                    .path
                    .strip_prefix(base)
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|_| item.path.clone()),
                ..item.clone()
            };
            out.push_str(&serde_json::to_string(&rel).expect("item serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(io_err(path))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Number of items whose truth is this model.
    pub support: usize,
    /// Number of items predicted as this model.
    pub predicted: usize,
    /// Set when the class has no truth items, so recall is 0 by convention.
    pub recall_undefined: bool,
    /// Set when nothing was predicted as this class, so precision is 0 by convention.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub n: usize,
    pub models: Vec<ModelId>,
    pub per_model: BTreeMap<ModelId, ClassMetrics>,
    /// Rows are truth, columns are prediction, both in `models` order.
    pub confusion: Vec<Vec<usize>>,
    /// Per truth row, items that produced no prediction. Zero unless failed
    /// items are counted as misses.
    pub unattributed: Vec<usize>,
}

/// Accuracy, per-model recall, precision and F1, and the confusion matrix.
pub fn compute_metrics(truth: &[ModelId], pred: &[ModelId], models: &ModelSet) -> Result<Metrics, EvalError> {
    let pred: Vec<Option<ModelId>> = pred.iter().cloned().map(Some).collect();
    compute_metrics_partial(truth, &pred, models)
}

/// [`compute_metrics`] where `None` predictions count as misses.
pub fn compute_metrics_partial(
    truth: &[ModelId],
    pred: &[Option<ModelId>],
    models: &ModelSet,
) -> Result<Metrics, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = models.len();
    let index = |m: &ModelId| models.index_of(m).ok_or_else(|| EvalError::UnknownLabel(m.to_string()));
    let mut confusion = vec![vec![0usize; k]; k];
    let mut unattributed = vec![0usize; k];
    for (t, p) in truth.iter().zip(pred) {
        let ti = index(t)?;
        match p {
            Some(p) => confusion[ti][index(p)?] += 1,
            None => unattributed[ti] += 1,
        }
    }
    let n = truth.len();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let mut per_model = BTreeMap::new();
    for (i, m) in models.ids().iter().enumerate() {
        let tp = confusion[i][i];
        let support = confusion[i].iter().sum::<usize>() + unattributed[i];
        let predicted: usize = confusion.iter().map(|row| row[i]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let recall = ratio(tp, support);
        let precision = ratio(tp, predicted);
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        per_model.insert(
            m.clone(),
            ClassMetrics {
                recall,
                precision,
                f1,
                support,
                predicted,
                recall_undefined: support == 0,
                precision_undefined: predicted == 0,
            },
        );
    }
    Ok(Metrics {
        accuracy: correct as f64 / n as f64,
        n,
        models: models.ids().to_vec(),
        per_model,
        confusion,
        unattributed,
    })
}

/// How each item's prompt is obtained.
#[derive(Clone)]
pub enum PromptMode {
    /// The prompt stored in the dataset manifest.
    Stored,
    /// A shared prompt source (registry or captioning service).
    Source(Arc<dyn PromptSource>),
}

impl PromptMode {
    pub fn label(&self) -> &'static str {
        match self {
            PromptMode::Stored => "stored",
            PromptMode::Source(_) => "inverted",
        }
    }
}

impl std::fmt::Debug for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub attribution: AttributionConfig,
    pub prompt_mode: PromptMode,
    /// Concurrent items; 0 means one per logical core.
    pub workers: usize,
    /// Drop failed items from N instead of counting them as misses.
    pub skip_errors: bool,
    /// Applied to every test image before attribution. Candidates stay clean.
    pub attack: Option<AttackConfig>,
}

impl ExperimentConfig {
    pub fn new(attribution: AttributionConfig) -> Self {
        ExperimentConfig {
            attribution,
            prompt_mode: PromptMode::Stored,
            workers: 0,
            skip_errors: false,
            attack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub models: Vec<ModelId>,
    pub gamma: usize,
    pub scheme: String,
    pub method: String,
    pub seed: u64,
    pub prompt_mode: String,
    pub attack: Option<String>,
    pub skip_errors: bool,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub index: usize,
    pub path: PathBuf,
    pub truth: ModelId,
    pub pred: Option<ModelId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wall-clock measurements. The only non-deterministic part of a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    /// Per-stage mean over successfully attributed items.
    pub mean_ms: StageTiming,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub errors: usize,
    pub items: Vec<ItemOutcome>,
    pub timing: TimingSummary,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeChoice {
    pub scheme: RankScheme,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeAblation {
    pub runs: Vec<(RankScheme, EvalReport)>,
    pub best_scheme_per_model: BTreeMap<ModelId, SchemeChoice>,
}

pub fn csv_header(models: &[ModelId]) -> String {
    let mut h = String::from("run,accuracy");
    for m in models {
        let _ = write!(h, ",{m}_recall,{m}_precision,{m}_f1");
    }
    h
}

/// One CSV row per report: overall accuracy, then recall, precision and F1
/// per model.
pub fn reports_to_csv(rows: &[(String, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut out = csv_header(&first.metrics.models);
    out.push('\n');
    for (label, report) in rows {
        let _ = write!(out, "{},{:.6}", label.replace(',', ";"), report.metrics.accuracy);
        for m in &first.metrics.models {
            match report.metrics.per_model.get(m) {
                Some(c) => {
                    let _ = write!(out, ",{:.6},{:.6},{:.6}", c.recall, c.precision, c.f1);
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Runs experiments against one backend, sharing candidate signatures
/// between runs.
pub struct Evaluator<'a> {
    backend: &'a dyn GenerationBackend,
    cache: Option<&'a PoolCache>,
    memo: Arc<SignatureMemo>,
}

impl<'a> Evaluator<'a> {
    pub fn new(backend: &'a dyn GenerationBackend) -> Self {
        Evaluator {
            backend,
            cache: None,
            memo: Arc::new(SignatureMemo::default()),
        }
    }

    pub fn with_cache(mut self, cache: &'a PoolCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_memo(mut self, memo: Arc<SignatureMemo>) -> Self {
        self.memo = memo;
        self
    }

    fn attributor(&self, config: &AttributionConfig) -> Result<Attributor<'a>, EvalError> {
        let mut a = Attributor::new(self.backend, config.clone())?.with_memo(Arc::clone(&self.memo));
        if let Some(cache) = self.cache {
            a = a.with_cache(cache);
        }
        Ok(a)
    }

    fn run_item(
        &self,
        attributor: &Attributor<'_>,
        item: &DatasetItem,
        config: &ExperimentConfig,
        models: &ModelSet,
    ) -> Result<AttributionResult, EvalError> {
        let mut image = load_image(&item.path)?;
        if let Some(attack) = &config.attack {
            image = attack.apply(&image)?;
        }
        let known;
        let source: &dyn PromptSource = match &config.prompt_mode {
            PromptMode::Stored => {
                known = KnownPrompt::new(item.prompt.clone());
                &known
            }
            PromptMode::Source(s) => s.as_ref(),
        };
        Ok(attributor.attribute(&image, models, source)?)
    }

    /// Attributes every item, in dataset order.
    fn attribute_all(
        &self,
        dataset: &LabeledDataset,
        config: &ExperimentConfig,
    ) -> Result<(Vec<Result<AttributionResult, String>>, f64), EvalError> {
        let attributor = self.attributor(&config.attribution)?;
        let start = std::time::Instant::now();
        let outcomes: Vec<Result<AttributionResult, String>> = thread_pool(config.workers)?.install(|| {
            dataset
                .items
                .par_iter()
                .enumerate()
                .map(|(index, item)| {
                    self.run_item(&attributor, item, config, &dataset.models).map_err(|e| {
                        log::warn!("item {index} ({}) failed: {e}", item.path.display());
                        e.to_string()
                    })
                })
                .collect()
        });
        Ok((outcomes, start.elapsed().as_secs_f64() * 1e3))
    }

    /// Attributes every item and aggregates metrics. Failed items become
    /// error rows; they count as misses unless `skip_errors` is set.
    pub fn run(&self, dataset: &LabeledDataset, config: &ExperimentConfig) -> Result<EvalReport, EvalError> {
        let (outcomes, wall_ms) = self.attribute_all(dataset, config)?;
        build_report(dataset, config, &outcomes, wall_ms)
    }

    /// Ranking ablation: attributes once, then re-ranks the stored score sets
    /// under every scheme. Also reports, per model, the scheme with the best
    /// recall; choosing it needs the labels, so it is a diagnostic only.
    pub fn scheme_ablation(
        &self,
        dataset: &LabeledDataset,
        config: &ExperimentConfig,
    ) -> Result<SchemeAblation, EvalError> {
        let (outcomes, wall_ms) = self.attribute_all(dataset, config)?;
        let mut runs = Vec::new();
        for scheme in RankScheme::ALL {
            let rescored: Vec<Result<AttributionResult, String>> = outcomes
                .iter()
                .map(|o| match o {
                    Ok(r) => r.rescored(scheme).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                })
                .collect();
            let mut cfg = config.clone();
            cfg.attribution.scheme = scheme;
            runs.push((scheme, build_report(dataset, &cfg, &rescored, wall_ms)?));
        }
        let best_scheme_per_model = dataset
            .models
            .ids()
            .iter()
            .map(|m| {
                let (scheme, recall) = runs.iter().map(|(s, r)| (*s, r.metrics.per_model[m].recall)).fold(
                    (RankScheme::Avg, f64::NEG_INFINITY),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
                (m.clone(), SchemeChoice { scheme, recall })
            })
            .collect();
        Ok(SchemeAblation {
            runs,
            best_scheme_per_model,
        })
    }

    /// One run per γ. Candidate signatures are shared, so each larger γ only
    /// computes the additional candidates.
    pub fn gamma_sweep(
        &self,
        dataset: &LabeledDataset,
        config: &ExperimentConfig,
        gammas: &[usize],
    ) -> Result<Vec<(usize, EvalReport)>, EvalError> {
        if gammas.is_empty() {
            return Err(EvalError::InvalidConfig("gamma list is empty".into()));
        }
        if gammas.windows(2).any(|w| w[0] >= w[1]) || gammas[0] == 0 {
            return Err(EvalError::InvalidConfig(format!(
                "gammas must be positive and ascending: {gammas:?}"
            )));
        }
        gammas
            .iter()
            .map(|&g| {
                let mut cfg = config.clone();
                cfg.attribution.gamma = g;
                self.run(dataset, &cfg).map(|r| (g, r))
            })
            .collect()
    }

    /// One run per attack, each applied to the test images only.
    pub fn robustness_sweep(
        &self,
        dataset: &LabeledDataset,
        config: &ExperimentConfig,
        attacks: &[AttackConfig],
    ) -> Result<Vec<(AttackConfig, EvalReport)>, EvalError> {
        attacks
            .iter()
            .map(|&attack| {
                let attack = attack.validated()?;
                let mut cfg = config.clone();
                cfg.attack = Some(attack);
                self.run(dataset, &cfg).map(|r| (attack, r))
            })
            .collect()
    }
}

fn build_report(
    dataset: &LabeledDataset,
    config: &ExperimentConfig,
    outcomes: &[Result<AttributionResult, String>],
    wall_ms: f64,
) -> Result<EvalReport, EvalError> {
    let mut items = Vec::with_capacity(outcomes.len());
    let mut timings = Vec::new();
    for (index, (item, outcome)) in dataset.items.iter().zip(outcomes).enumerate() {
        let (pred, error) = match outcome {
            Ok(r) => {
                timings.push(r.timing_ms.clone());
                (Some(r.best.clone()), None)
            }
            Err(e) => (None, Some(e.clone())),
        };
        items.push(ItemOutcome {
            index,
            path: item.path.clone(),
            truth: item.label.clone(),
            pred,
            error,
        });
    }
    let errors = items.iter().filter(|i| i.error.is_some()).count();
    let counted: Vec<&ItemOutcome> = items
        .iter()
        .filter(|i| !(config.skip_errors && i.error.is_some()))
        .collect();
    let truth: Vec<ModelId> = counted.iter().map(|i| i.truth.clone()).collect();
    let pred: Vec<Option<ModelId>> = counted.iter().map(|i| i.pred.clone()).collect();
    let metrics = compute_metrics_partial(&truth, &pred, &dataset.models)?;

    let a = &config.attribution;
    Ok(EvalReport {
        config: ConfigEcho {
            models: dataset.models.ids().to_vec(),
            gamma: a.gamma,
            scheme: a.scheme.to_string(),
            method: a.method.label(),
            seed: a.seed,
            prompt_mode: config.prompt_mode.label().to_string(),
            attack: config.attack.map(|x| x.to_string()),
            skip_errors: config.skip_errors,
            items: dataset.len(),
        },
        metrics,
        errors,
        items,
        timing: TimingSummary {
            mean_ms: mean_timing(&timings),
            wall_ms,
        },
    })
}

fn mean_timing(ts: &[StageTiming]) -> StageTiming {
    if ts.is_empty() {
        return StageTiming::default();
    }
    let n = ts.len() as f64;
    let mean = |f: fn(&StageTiming) -> f64| ts.iter().map(f).sum::<f64>() / n;
    StageTiming {
        extract_test_ms: mean(|t| t.extract_test_ms),
        invert_prompt_ms: mean(|t| t.invert_prompt_ms),
        candidate_pool_ms: mean(|t| t.candidate_pool_ms),
        scoring_ms: mean(|t| t.scoring_ms),
        total_ms: mean(|t| t.total_ms),
    }
}

pub fn run_experiment(
    dataset: &LabeledDataset,
    config: &ExperimentConfig,
    backend: &dyn GenerationBackend,
) -> Result<EvalReport, EvalError> {
    Evaluator::new(backend).run(dataset, config)
}

pub fn gamma_sweep(
    dataset: &LabeledDataset,
    config: &ExperimentConfig,
    gammas: &[usize],
    backend: &dyn GenerationBackend,
) -> Result<Vec<(usize, EvalReport)>, EvalError> {
    Evaluator::new(backend).gamma_sweep(dataset, config, gammas)
}

pub fn robustness_sweep(
    dataset: &LabeledDataset,
    config: &ExperimentConfig,
    attacks: &[AttackConfig],
    backend: &dyn GenerationBackend,
) -> Result<Vec<(AttackConfig, EvalReport)>, EvalError> {
    Evaluator::new(backend).robustness_sweep(dataset, config, attacks)
}

/// Seed of the `index`-th dataset image of `model`. Uses its own hash domain
/// so dataset images never coincide with pool candidates.
pub fn dataset_seed(seed: u64, model: &ModelId, index: usize) -> u64 {
    HashKey::new("dataset")
        .u64(seed)
        .str(model.as_str())
        .u64(index as u64)
        .finish()
}

/// Generates `per_prompt` images per prompt from every model of `backend`,
/// writes them as `<out>/<model>/<NNNN>.png` with `<out>/manifest.jsonl`, and
/// registers each image's prompt in `registry` when given.
pub fn write_synthetic_dataset(
    backend: &SyntheticBackend,
    prompts: &[String],
    per_prompt: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    registry: Option<&PromptRegistry>,
) -> Result<LabeledDataset, EvalError> {
    let out = out_dir.as_ref();
    if prompts.is_empty() || per_prompt == 0 {
        return Err(EvalError::Empty);
    }
    let models = ModelSet::new(backend.model_ids())?;
    let mut items = Vec::new();
    for spec in backend.family() {
        let dir = out.join(spec.id.as_str());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let jobs: Vec<(usize, &String)> = prompts
            .iter()
            .flat_map(|p| std::iter::repeat_n(p, per_prompt))
            .enumerate()
            .collect();
        let written = jobs
            .par_iter()
            .map(|&(index, text)| {
                let prompt = Prompt::natural(text.clone())?;
                let image = synth_generate(spec, &prompt, dataset_seed(seed, &spec.id, index));
                let path = dir.join(format!("{index:04}.png"));
                save_image(&image, &path)?;
                if let Some(reg) = registry {
                    reg.register(&image, text)?;
                }
                Ok(DatasetItem {
                    path,
                    label: spec.id.clone(),
                    prompt: Some(text.clone()),
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        items.extend(written);
    }
    let dataset = LabeledDataset::new(items, models)?;
    dataset.save_manifest(out.join("manifest.jsonl"))?;
    Ok(dataset)
}

/// For each item, obtains its prompt (stored, or through `prompt_source`)
/// and generates `n_per_image` new images from the item's true model. The
/// result holds the original items followed by the generated ones, and is
/// written to `<out>/manifest.jsonl`.
pub fn augment_pool(
    dataset: &LabeledDataset,
    n_per_image: usize,
    backend: &dyn GenerationBackend,
    prompt_source: Option<&dyn PromptSource>,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<LabeledDataset, EvalError> {
    if n_per_image == 0 {
        return Ok(dataset.clone());
    }
    let out = out_dir.as_ref();
    let aug_dir = out.join("augmented");
    fs::create_dir_all(&aug_dir).map_err(io_err(&aug_dir))?;
    let generated = dataset
        .items
        .par_iter()
        .enumerate()
        .map(|(index, item)| -> Result<Vec<DatasetItem>, EvalError> {
            let prompt = match (&item.prompt, prompt_source) {
                (Some(text), _) => Prompt::natural(text.clone())?,
                (None, Some(src)) => src.invert(&load_image(&item.path)?)?,
                (None, None) => {
                    return Err(AttribError::PromptUnavailable(format!(
                        "item {index} has no prompt and no prompt source is configured"
                    ))
                    .into())
                }
            };
            let seeds: Vec<u64> = (0..n_per_image)
                .map(|j| {
                    HashKey::new("augment")
                        .u64(seed)
                        .u64(index as u64)
                        .u64(j as u64)
                        .finish()
                })
                .collect();
            let images = backend
                .generate(&item.label, &prompt, &seeds)
                .map_err(|e| AttribError::GenerationFailed {
                    model: item.label.to_string(),
                    reason: e.to_string(),
                })?;
            images
                .iter()
                .enumerate()
                .map(|(j, img)| {
                    let path = aug_dir.join(format!("{index:05}_{j:03}.png"));
                    save_image(img, &path)?;
                    Ok(DatasetItem {
                        path,
                        label: item.label.clone(),
                        prompt: Some(prompt.text().to_string()),
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut items = dataset.items.clone();
    items.extend(generated.into_iter().flatten());
    let result = LabeledDataset::new(items, dataset.models.clone())?;
    result.save_manifest(out.join("manifest.jsonl"))?;
    Ok(result)
}

/// Writes `text` to `path`, or to stdout when `path` is `-`.
pub fn write_output(path: &Path, text: &str) -> Result<(), EvalError> {
    if path == Path::new("-") {
        let mut stdout = std::io::stdout().lock();
        stdout
            .write_all(text.as_bytes())
            .and_then(|_| stdout.write_all(b"\n"))
            .map_err(io_err(path))
    } else {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut text = text.to_string();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        fs::write(path, text).map_err(io_err(path))
    }
}
