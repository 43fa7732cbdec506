//! The regeneration-based attribution pipeline.
//!
//! For a test image: extract its feature, recover a prompt, regenerate γ
//! candidates from every candidate model, score the test image against each
//! pool, reduce each score set with a ranking scheme and return the argmax.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::cache::{CacheError, PoolCache};
use crate::imagecore::{Image, ImageError};
use crate::rng::derive_seed;
use crate::similarity::{Signature, SimScoreSet, SimilarityError, SimilarityMethod};

#[derive(Debug, Error)]
pub enum AttribError {
    #[error("prompt unavailable: {0}")]
    PromptUnavailable(String),
    #[error("generation failed for model {model}: {reason}")]
    GenerationFailed { model: String, reason: String },
    #[error("empty score set")]
    EmptyScores,
    #[error("invalid model set: {0}")]
    InvalidModelSet(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("{0}")]
    Failed(String),
}

/// Identifier of a candidate generative model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Result<Self, AttribError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(AttribError::InvalidModelSet("model id must be non-empty".into()));
        }
        Ok(ModelId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = AttribError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ModelId::new(value)
    }
}

impl From<ModelId> for String {
    fn from(value: ModelId) -> Self {
        value.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Non-empty list of unique model ids, in caller order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSet(Vec<ModelId>);

impl ModelSet {
    pub fn new(ids: Vec<ModelId>) -> Result<Self, AttribError> {
        if ids.is_empty() {
            return Err(AttribError::InvalidModelSet("no candidate models".into()));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(AttribError::InvalidModelSet(format!("duplicate model id {id}")));
            }
        }
        Ok(ModelSet(ids))
    }

    /// Parses a comma-separated list such as `m1,m2,m3`.
    pub fn parse(list: &str) -> Result<Self, AttribError> {
        let ids = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(ModelId::new)
            .collect::<Result<Vec<_>, _>>()?;
        ModelSet::new(ids)
    }

    pub fn ids(&self) -> &[ModelId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: &ModelId) -> bool {
        self.0.contains(id)
    }

    pub fn index_of(&self, id: &ModelId) -> Option<usize> {
        self.0.iter().position(|m| m == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSourceKind {
    /// The original prompt.
    Natural,
    /// A caption produced by an external captioning service.
    Generated,
    /// A degraded prompt emitted by the synthetic registry.
    SyntheticRegistry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    text: String,
    source: PromptSourceKind,
}

impl Prompt {
    pub fn new(text: impl Into<String>, source: PromptSourceKind) -> Result<Self, AttribError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(AttribError::PromptUnavailable("prompt text is empty".into()));
        }
        Ok(Prompt { text, source })
    }

    pub fn natural(text: impl Into<String>) -> Result<Self, AttribError> {
        Prompt::new(text, PromptSourceKind::Natural)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source(&self) -> PromptSourceKind {
        self.source
    }
}

/// Recovers a prompt for an image.
pub trait PromptSource: Send + Sync {
    fn invert(&self, image: &Image) -> Result<Prompt, AttribError>;
}

/// The natural-prompt condition: the generating prompt is known.
#[derive(Debug, Clone, Default)]
pub struct KnownPrompt {
    text: Option<String>,
}

impl KnownPrompt {
    pub fn new(text: Option<String>) -> Self {
        KnownPrompt { text }
    }
}

impl PromptSource for KnownPrompt {
    fn invert(&self, _image: &Image) -> Result<Prompt, AttribError> {
        match &self.text {
            Some(t) => Prompt::natural(t.clone()),
            None => Err(AttribError::PromptUnavailable("no stored prompt for this image".into())),
        }
    }
}

pub fn invert_prompt(image: &Image, source: &dyn PromptSource) -> Result<Prompt, AttribError> {
    source.invert(image)
}

/// Produces candidate images for a model, one per seed.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, model: &ModelId, prompt: &Prompt, seeds: &[u64]) -> Result<Vec<Image>, BackendError>;
}

/// γ regenerated images per candidate model.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub prompt: Prompt,
    pub gamma: usize,
    pub seed: u64,
    pub entries: BTreeMap<ModelId, Vec<Image>>,
}

/// One line of a pool manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolManifestEntry {
    pub model_id: String,
    pub index: usize,
    pub seed: u64,
    pub content_hash: String,
}

impl CandidatePool {
    pub fn total_images(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn manifest(&self) -> Vec<PoolManifestEntry> {
        self.entries
            .iter()
            .flat_map(|(model, images)| {
                images.iter().enumerate().map(move |(i, img)| PoolManifestEntry {
                    model_id: model.to_string(),
                    index: i,
                    seed: derive_seed(self.seed, model.as_str(), i),
                    content_hash: img.content_hash(),
                })
            })
            .collect()
    }
}

fn generation_failed(model: &ModelId, reason: impl fmt::Display) -> AttribError {
    AttribError::GenerationFailed {
        model: model.to_string(),
        reason: reason.to_string(),
    }
}

/// Candidate images `range` of `model`'s pool. Goes through the on-disk pool
/// cache when one is given.
fn pool_images(
    backend: &dyn GenerationBackend,
    cache: Option<&PoolCache>,
    prompt: &Prompt,
    model: &ModelId,
    seed: u64,
    range: std::ops::Range<usize>,
) -> Result<Vec<Image>, AttribError> {
    let seeds: Vec<u64> = range.clone().map(|i| derive_seed(seed, model.as_str(), i)).collect();
    let produce = |seeds: &[u64]| -> Result<Vec<Image>, AttribError> {
        let images = backend
            .generate(model, prompt, seeds)
            .map_err(|e| generation_failed(model, e))?;
        if images.len() != seeds.len() {
            return Err(generation_failed(
                model,
                format!("backend returned {} images, expected {}", images.len(), seeds.len()),
            ));
        }
        Ok(images)
    };
    match cache {
        None => produce(&seeds),
        Some(cache) => {
            let all = cache.get_or_generate(prompt.text(), model.as_str(), range.end, seed, |gamma| {
                let seeds: Vec<u64> = (0..gamma).map(|i| derive_seed(seed, model.as_str(), i)).collect();
                produce(&seeds)
            })?;
            Ok(all.into_iter().skip(range.start).collect())
        }
    }
}

/// Generates γ images per model. Per-image seeds are
/// `derive_seed(seed, model_id, index)`, so a pool of γ is a prefix of any
/// larger pool under the same seed. Any model failure aborts the whole pool.
pub fn generate_pool(
    prompt: &Prompt,
    models: &ModelSet,
    gamma: usize,
    seed: u64,
    backend: &dyn GenerationBackend,
    cache: Option<&PoolCache>,
) -> Result<CandidatePool, AttribError> {
    if gamma == 0 {
        return Err(AttribError::InvalidConfig("gamma must be at least 1".into()));
    }
    let entries = models
        .ids()
        .par_iter()
        .map(|m| pool_images(backend, cache, prompt, m, seed, 0..gamma).map(|imgs| (m.clone(), imgs)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CandidatePool {
        prompt: prompt.clone(),
        gamma,
        seed,
        entries: entries.into_iter().collect(),
    })
}

/// Reduction of a score set to a single per-model score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum RankScheme {
    #[serde(rename = "avg")]
    Avg,
    #[default]
    #[serde(rename = "best")]
    Best,
    #[serde(rename = "avg_best")]
    AvgBest,
}

impl RankScheme {
    pub const ALL: [RankScheme; 3] = [RankScheme::Avg, RankScheme::Best, RankScheme::AvgBest];
}

impl fmt::Display for RankScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankScheme::Avg => "avg",
            RankScheme::Best => "best",
            RankScheme::AvgBest => "avg_best",
        })
    }
}

impl FromStr for RankScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['+', '-'], "_").as_str() {
            "avg" => Ok(RankScheme::Avg),
            "best" => Ok(RankScheme::Best),
            "avg_best" => Ok(RankScheme::AvgBest),
            other => Err(format!(
                "unknown ranking scheme {other:?} (expected avg, best or avg_best)"
            )),
        }
    }
}

/// AVG → mean, BEST → max, AVG_BEST → (mean + max) / 2.
pub fn rank_score(scores: &[f64], scheme: RankScheme) -> Result<f64, AttribError> {
    if scores.is_empty() {
        return Err(AttribError::EmptyScores);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    // Rounding can push a float mean just outside [min, max].
    let mean = (scores.iter().sum::<f64>() / scores.len() as f64).clamp(min, max);
    Ok(match scheme {
        RankScheme::Avg => mean,
        RankScheme::Best => max,
        RankScheme::AvgBest => (mean + max) / 2.0,
    })
}

/// Argmax over final scores; ties go to the lexicographically smallest id.
pub fn select_best(final_scores: &BTreeMap<ModelId, f64>) -> Option<ModelId> {
    let mut best: Option<(&ModelId, f64)> = None;
    for (id, &score) in final_scores {
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((id, score)),
        }
    }
    best.map(|(id, _)| id.clone())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub extract_test_ms: f64,
    pub invert_prompt_ms: f64,
    pub candidate_pool_ms: f64,
    pub scoring_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub best: ModelId,
    pub final_scores: BTreeMap<ModelId, f64>,
    pub score_sets: BTreeMap<ModelId, SimScoreSet>,
    pub scheme: RankScheme,
    pub prompt: Prompt,
    pub timing_ms: StageTiming,
}

impl AttributionResult {
    /// Re-ranks the stored score sets under another scheme without
    /// regenerating anything.
    pub fn rescored(&self, scheme: RankScheme) -> Result<AttributionResult, AttribError> {
        let final_scores = self
            .score_sets
            .iter()
            .map(|(m, s)| rank_score(&s.scores, scheme).map(|v| (m.clone(), v)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        let best = select_best(&final_scores).ok_or(AttribError::EmptyScores)?;
        Ok(AttributionResult {
            best,
            final_scores,
            scheme,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttributionConfig {
    pub gamma: usize,
    pub scheme: RankScheme,
    pub method: SimilarityMethod,
    pub seed: u64,
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<(), AttribError> {
        if self.gamma == 0 {
            return Err(AttribError::InvalidConfig("gamma must be at least 1".into()));
        }
        Ok(())
    }
}

type MemoKey = (u64, String, String, ModelId);

fn signature_bytes(sig: &Signature) -> usize {
    sig.feature.as_ref().map_or(0, |f| f.dim() * 8) + sig.luma.as_ref().map_or(0, |l| l.data().len())
}

/// Stored signatures and the bytes they use.
type MemoTable = (HashMap<MemoKey, Arc<Vec<Signature>>>, usize);

/// Candidate signatures keyed by `(seed, method, prompt, model)`. Entries
/// grow by suffix, so a request for γ after a larger γ' is served from the
/// stored prefix, and a larger request only computes the missing tail.
/// Once `budget_bytes` is used up, new entries are no longer stored.
pub struct SignatureMemo {
    entries: Mutex<MemoTable>,
    budget_bytes: usize,
}

impl Default for SignatureMemo {
    fn default() -> Self {
        SignatureMemo::new(DEFAULT_MEMO_BUDGET)
    }
}

pub const DEFAULT_MEMO_BUDGET: usize = 1 << 30;

impl SignatureMemo {
    pub fn new(budget_bytes: usize) -> Self {
        SignatureMemo {
            entries: Mutex::default(),
            budget_bytes,
        }
    }

    fn get(&self, key: &MemoKey) -> Option<Arc<Vec<Signature>>> {
        self.entries.lock().expect("memo lock").0.get(key).cloned()
    }

    fn put(&self, key: MemoKey, value: Arc<Vec<Signature>>) {
        let mut guard = self.entries.lock().expect("memo lock");
        let (map, used) = &mut *guard;
        let old = map.get(&key).map_or(0, |o| o.iter().map(signature_bytes).sum());
        let new: usize = value.iter().map(signature_bytes).sum();
        if new > old && *used - old + new <= self.budget_bytes {
            *used = *used - old + new;
            map.insert(key, value);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("memo lock").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes_used(&self) -> usize {
        self.entries.lock().expect("memo lock").1
    }
}

/// Runs the attribution pipeline against a fixed backend and configuration.
pub struct Attributor<'a> {
    backend: &'a dyn GenerationBackend,
    config: AttributionConfig,
    cache: Option<&'a PoolCache>,
    memo: Option<Arc<SignatureMemo>>,
}

impl<'a> Attributor<'a> {
    pub fn new(backend: &'a dyn GenerationBackend, config: AttributionConfig) -> Result<Self, AttribError> {
        config.validate()?;
        Ok(Attributor {
            backend,
            config,
            cache: None,
            memo: None,
        })
    }

    pub fn with_cache(mut self, cache: &'a PoolCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_memo(mut self, memo: Arc<SignatureMemo>) -> Self {
        self.memo = Some(memo);
        self
    }

    pub fn config(&self) -> &AttributionConfig {
        &self.config
    }

    fn pool_signatures(&self, prompt: &Prompt, model: &ModelId) -> Result<Arc<Vec<Signature>>, AttribError> {
        let gamma = self.config.gamma;
        let key: MemoKey = (
            self.config.seed,
            self.config.method.label(),
            prompt.text().to_string(),
            model.clone(),
        );
        let cached = self.memo.as_ref().and_then(|m| m.get(&key));
        let have = cached.as_ref().map_or(0, |c| c.len());
        if have >= gamma {
            let c = cached.expect("have > 0");
            return Ok(if have == gamma {
                c
            } else {
                Arc::new(c[..gamma].to_vec())
            });
        }
        let images = pool_images(self.backend, self.cache, prompt, model, self.config.seed, have..gamma)?;
        let fresh = images
            .iter()
            .map(|img| self.config.method.signature(img))
            .collect::<Result<Vec<_>, _>>()?;
        let mut all = cached.map(|c| c.as_ref().clone()).unwrap_or_default();
        all.extend(fresh);
        let all = Arc::new(all);
        if let Some(memo) = &self.memo {
            memo.put(key, Arc::clone(&all));
        }
        Ok(all)
    }

    /// Attributes `image` to one of `models`.
    pub fn attribute(
        &self,
        image: &Image,
        models: &ModelSet,
        prompt_source: &dyn PromptSource,
    ) -> Result<AttributionResult, AttribError> {
        let start = Instant::now();
        let mut timing = StageTiming::default();
        let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let test_sig = self.config.method.signature(image)?;
        timing.extract_test_ms = ms(t);

        let t = Instant::now();
        let prompt = invert_prompt(image, prompt_source)?;
        timing.invert_prompt_ms = ms(t);

        let t = Instant::now();
        let pools = models
            .ids()
            .par_iter()
            .map(|m| self.pool_signatures(&prompt, m))
            .collect::<Result<Vec<_>, _>>()?;
        timing.candidate_pool_ms = ms(t);

        let t = Instant::now();
        let mut score_sets = BTreeMap::new();
        let mut final_scores = BTreeMap::new();
        for (model, pool) in models.ids().iter().zip(&pools) {
            let set = self.config.method.score_set(&test_sig, pool, model.as_str())?;
            final_scores.insert(model.clone(), rank_score(&set.scores, self.config.scheme)?);
            score_sets.insert(model.clone(), set);
        }
        let best = select_best(&final_scores).ok_or(AttribError::EmptyScores)?;
        timing.scoring_ms = ms(t);
        timing.total_ms = ms(start);

        Ok(AttributionResult {
            best,
            final_scores,
            score_sets,
            scheme: self.config.scheme,
            prompt,
            timing_ms: timing,
        })
    }
}

/// One-shot attribution without caching.
pub fn attribute(
    image: &Image,
    models: &ModelSet,
    config: AttributionConfig,
    prompt_source: &dyn PromptSource,
    backend: &dyn GenerationBackend,
) -> Result<AttributionResult, AttribError> {
    Attributor::new(backend, config)?.attribute(image, models, prompt_source)
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard overlap of lowercased alphanumeric tokens.
pub fn prompt_overlap(a: &Prompt, b: &Prompt) -> f64 {
    let (ta, tb) = (tokens(a.text()), tokens(b.text()));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_family, PromptRegistry, SyntheticBackend};
    use proptest::prelude::*;

    fn ids(list: &str) -> ModelSet {
        ModelSet::parse(list).unwrap()
    }

    #[test]
    fn model_set_validation() {
        assert!(ModelSet::parse("").is_err());
        assert!(ModelSet::parse("a,b,a").is_err());
        assert_eq!(ids("m1, m2").len(), 2);
        assert!(ModelId::new(" ").is_err());
    }

    #[test]
    fn known_prompt() {
        let img = Image::filled(1, 1, 3, 0).unwrap();
        let p = invert_prompt(&img, &KnownPrompt::new(Some("a city street".into()))).unwrap();
        assert_eq!(p.text(), "a city street");
        assert_eq!(p.source(), PromptSourceKind::Natural);
        assert!(matches!(
            invert_prompt(&img, &KnownPrompt::new(None)),
            Err(AttribError::PromptUnavailable(_))
        ));
    }

    #[test]
    fn rank_examples() {
        let s = [0.2, 0.4, 0.6];
        assert!((rank_score(&s, RankScheme::Avg).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(rank_score(&s, RankScheme::Best).unwrap(), 0.6);
        assert!((rank_score(&s, RankScheme::AvgBest).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            rank_score(&[], RankScheme::Avg),
            Err(AttribError::EmptyScores)
        ));
        assert_eq!("AVG+BEST".parse::<RankScheme>().unwrap(), RankScheme::AvgBest);
        assert_eq!(serde_json::to_string(&RankScheme::AvgBest).unwrap(), "\"avg_best\"");
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let mut scores = BTreeMap::new();
        scores.insert(ModelId::new("m3").unwrap(), 0.5);
        scores.insert(ModelId::new("m2").unwrap(), 0.5);
        scores.insert(ModelId::new("m4").unwrap(), 0.1);
        assert_eq!(select_best(&scores).unwrap().as_str(), "m2");
        assert!(select_best(&BTreeMap::new()).is_none());
    }

    #[test]
    fn overlap_examples() {
        let p = |s| Prompt::natural(s).unwrap();
        assert_eq!(prompt_overlap(&p("a big city"), &p("a big city")), 1.0);
        assert_eq!(prompt_overlap(&p("red cat"), &p("blue dog")), 0.0);
        assert_eq!(prompt_overlap(&p("a big city"), &p("big city lights")), 0.5);
        assert_eq!(prompt_overlap(&p("The City."), &p("city, the")), 1.0);
    }

    #[test]
    fn pool_sizes_and_determinism() {
        let backend = SyntheticBackend::from_seed(4, 2023).unwrap();
        let models = ModelSet::new(backend.model_ids()).unwrap();
        let prompt = Prompt::natural("a boat at dawn").unwrap();
        let pool = generate_pool(&prompt, &models, 3, 2023, &backend, None).unwrap();
        assert_eq!(pool.total_images(), 12);
        assert!(pool.entries.values().all(|v| v.len() == 3));
        let again = generate_pool(&prompt, &models, 3, 2023, &backend, None).unwrap();
        assert_eq!(pool.manifest(), again.manifest());

        let bigger = generate_pool(&prompt, &models, 5, 2023, &backend, None).unwrap();
        for (m, imgs) in &pool.entries {
            assert_eq!(&bigger.entries[m][..3], &imgs[..]);
        }

        let single = generate_pool(&prompt, &ids("m1"), 1, 9, &backend, None).unwrap();
        let single2 = generate_pool(&prompt, &ids("m1"), 1, 9, &backend, None).unwrap();
        assert_eq!(single.entries, single2.entries);
        assert!(generate_pool(&prompt, &models, 0, 9, &backend, None).is_err());
    }

    #[test]
    fn unknown_model_aborts_pool() {
        let backend = SyntheticBackend::from_seed(2, 1).unwrap();
        let prompt = Prompt::natural("x").unwrap();
        let err = generate_pool(&prompt, &ids("m1,zz"), 2, 1, &backend, None).unwrap_err();
        assert!(matches!(err, AttribError::GenerationFailed { ref model, .. } if model == "zz"));
    }

    fn config(gamma: usize) -> AttributionConfig {
        AttributionConfig {
            gamma,
            scheme: RankScheme::Best,
            method: SimilarityMethod::spectral(),
            seed: 2023,
        }
    }

    #[test]
    fn single_model_always_wins() {
        let backend = SyntheticBackend::from_seed(3, 5).unwrap();
        let img = Image::filled(64, 64, 3, 10).unwrap();
        let res = attribute(
            &img,
            &ids("m3"),
            config(2),
            &KnownPrompt::new(Some("p".into())),
            &backend,
        )
        .unwrap();
        assert_eq!(res.best.as_str(), "m3");
    }

    #[test]
    fn attributes_synthetic_image_and_is_deterministic() {
        let family = make_family(4, 2023).unwrap();
        let backend = SyntheticBackend::new(family.clone());
        let models = ModelSet::new(backend.model_ids()).unwrap();
        let prompt = Prompt::natural("a lighthouse on a cliff").unwrap();
        let test = crate::synth::synth_generate(&family[1], &prompt, 123_456);
        let source = KnownPrompt::new(Some(prompt.text().to_string()));
        let a = attribute(&test, &models, config(8), &source, &backend).unwrap();
        assert_eq!(a.best.as_str(), "m2");
        assert!(a.score_sets.values().all(|s| s.scores.len() == 8));
        let b = attribute(&test, &models, config(8), &source, &backend).unwrap();
        assert_eq!(a.final_scores, b.final_scores);
        assert_eq!(a.score_sets, b.score_sets);
    }

    #[test]
    fn memo_prefix_matches_fresh_run() {
        let family = make_family(2, 2023).unwrap();
        let backend = SyntheticBackend::new(family.clone());
        let models = ModelSet::new(backend.model_ids()).unwrap();
        let prompt = Prompt::natural("fields of wheat").unwrap();
        let test = crate::synth::synth_generate(&family[0], &prompt, 77);
        let source = KnownPrompt::new(Some(prompt.text().to_string()));
        let memo = Arc::new(SignatureMemo::default());

        let big = Attributor::new(&backend, config(6)).unwrap().with_memo(memo.clone());
        let big_res = big.attribute(&test, &models, &source).unwrap();
        let small = Attributor::new(&backend, config(3)).unwrap().with_memo(memo.clone());
        let small_res = small.attribute(&test, &models, &source).unwrap();
        let fresh = attribute(&test, &models, config(3), &source, &backend).unwrap();
        assert_eq!(small_res.score_sets, fresh.score_sets);
        for (m, s) in &small_res.score_sets {
            assert_eq!(&big_res.score_sets[m].scores[..3], &s.scores[..]);
        }
    }

    #[test]
    fn registry_prompt_source_drives_pipeline() {
        let family = make_family(2, 3).unwrap();
        let backend = SyntheticBackend::new(family.clone());
        let prompt = Prompt::natural("the streets of a big city").unwrap();
        let test = crate::synth::synth_generate(&family[0], &prompt, 1);
        let reg = PromptRegistry::new(true);
        reg.register(&test, prompt.text()).unwrap();
        let res = attribute(
            &test,
            &ModelSet::new(backend.model_ids()).unwrap(),
            config(2),
            &reg,
            &backend,
        )
        .unwrap();
        assert_eq!(res.prompt.text(), "the streets a big");
        assert_eq!(res.prompt.source(), PromptSourceKind::SyntheticRegistry);
    }

    #[test]
    fn rescoring_changes_only_reduction() {
        let family = make_family(3, 11).unwrap();
        let backend = SyntheticBackend::new(family.clone());
        let models = ModelSet::new(backend.model_ids()).unwrap();
        let prompt = Prompt::natural("a snowy owl").unwrap();
        let test = crate::synth::synth_generate(&family[2], &prompt, 5);
        let src = KnownPrompt::new(Some(prompt.text().into()));
        let best = attribute(&test, &models, config(4), &src, &backend).unwrap();
        let mut avg_cfg = config(4);
        avg_cfg.scheme = RankScheme::Avg;
        let avg = attribute(&test, &models, avg_cfg, &src, &backend).unwrap();
        let re = best.rescored(RankScheme::Avg).unwrap();
        assert_eq!(re.final_scores, avg.final_scores);
        assert_eq!(re.best, avg.best);
    }

    proptest! {
        #[test]
        fn scheme_ordering(
            scores in prop_oneof![
                prop::collection::vec(-1.0f64..1.0, 1..30),
                (-1.0f64..1.0, 1usize..30).prop_map(|(v, n)| vec![v; n]),
            ]
        ) {
            let avg = rank_score(&scores, RankScheme::Avg).unwrap();
            let mid = rank_score(&scores, RankScheme::AvgBest).unwrap();
            let best = rank_score(&scores, RankScheme::Best).unwrap();
            prop_assert!(avg <= mid + 1e-15 && mid <= best + 1e-15);
            let all_equal = scores.iter().all(|&s| s == scores[0]);
            prop_assert_eq!(all_equal, avg == best);
        }

        #[test]
        fn argmax_scale_invariant(vals in prop::collection::vec(-5.0f64..5.0, 1..8), c in 0.001f64..1000.0) {
            let scores: BTreeMap<ModelId, f64> = vals.iter().enumerate()
                .map(|(i, &v)| (ModelId::new(format!("m{i}")).unwrap(), v)).collect();
            let scaled: BTreeMap<ModelId, f64> = scores.iter().map(|(k, v)| (k.clone(), v * c)).collect();
            prop_assert_eq!(select_best(&scores), select_best(&scaled));
        }
    }
}
