//! A deterministic family of parametric text-to-image "models".
//!
//! Each model renders the same prompt-seeded base texture (so prompts drive
//! content identically across the family) and then applies its own
//! fingerprint: a band of oriented sinusoids at a characteristic spatial
//! frequency, an optional periodic grid, optional palette quantization and
//! white noise. The generator is fully specified in `docs/CONTRACT.md`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{BackendError, GenerationBackend, ModelId, Prompt, PromptSource, PromptSourceKind};
use crate::imagecore::Image;
use crate::rng::{HashKey, Xoshiro256};

pub const DEFAULT_OUTPUT_SIZE: u32 = 256;

/// Oriented sinusoids summed into the band-pass fingerprint.
pub const BAND_COMPONENTS: usize = 24;
/// Relative spread of component frequencies around `band_center`.
pub const BAND_SPREAD: f64 = 0.05;
/// Additive intensity of grid lines.
pub const GRID_AMPLITUDE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("family size {0} exceeds the {max} distinct fingerprints", max = FINGERPRINT_PALETTE.len())]
    TooMany(usize),
    #[error("family size must be at least 1")]
    Empty,
    #[error("no prompt registered for image {0}")]
    RegistryMiss(String),
    #[error("image {hash} already registered with a different prompt")]
    RegistryConflict { hash: String },
    #[error("registry i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Model-specific spectral and tonal signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// Normalized spatial frequency (cycles per pixel), in (0, 0.5).
    pub band_center: f64,
    /// RMS intensity of the band-pass component.
    pub band_gain: f64,
    pub grid_period: Option<u32>,
    pub palette_levels: Option<u32>,
}

/// Family-wide parameters of the prompt-driven base texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePattern {
    /// Mixed into the prompt hash so different families render different
    /// content for the same prompt.
    pub salt: u64,
    pub components: usize,
    /// Largest integer frequency (cycles per image) of a base component.
    pub max_cycles: u32,
    pub amplitude: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModelSpec {
    pub id: ModelId,
    pub base_pattern: BasePattern,
    pub fingerprint: Fingerprint,
    pub noise_sigma: f64,
    pub output_size: u32,
}

struct Preset {
    band_center: f64,
    band_gain: f64,
    grid_period: Option<u32>,
    palette_levels: Option<u32>,
    noise_sigma: f64,
}

// The first two presets are deliberately adjacent in frequency so that every
// family of two or more models contains a hard-to-separate pair. All band
// centers stay below 0.25 cycles/pixel so the band survives a 2x downscale.
const FINGERPRINT_PALETTE: [Preset; 8] = [
    Preset {
        band_center: 0.100,
        band_gain: 14.0,
        grid_period: None,
        palette_levels: None,
        noise_sigma: 3.0,
    },
    Preset {
        band_center: 0.130,
        band_gain: 14.0,
        grid_period: None,
        palette_levels: None,
        noise_sigma: 3.0,
    },
    Preset {
        band_center: 0.190,
        band_gain: 16.0,
        grid_period: Some(8),
        palette_levels: None,
        noise_sigma: 3.0,
    },
    Preset {
        band_center: 0.230,
        band_gain: 12.0,
        grid_period: None,
        palette_levels: Some(24),
        noise_sigma: 4.0,
    },
    Preset {
        band_center: 0.160,
        band_gain: 18.0,
        grid_period: Some(16),
        palette_levels: None,
        noise_sigma: 2.0,
    },
    Preset {
        band_center: 0.070,
        band_gain: 16.0,
        grid_period: None,
        palette_levels: Some(32),
        noise_sigma: 3.0,
    },
    Preset {
        band_center: 0.210,
        band_gain: 10.0,
        grid_period: Some(4),
        palette_levels: None,
        noise_sigma: 5.0,
    },
    Preset {
        band_center: 0.045,
        band_gain: 20.0,
        grid_period: None,
        palette_levels: None,
        noise_sigma: 6.0,
    },
];

pub fn max_family_size() -> usize {
    FINGERPRINT_PALETTE.len()
}

/// `k` models `m1..mk` with pairwise-distinct fingerprints. Band centers get
/// a small deterministic jitter from `(master_seed, index)`, so a family of
/// `k` is a prefix of the family of `k + 1` under the same seed.
pub fn make_family(k: usize, master_seed: u64) -> Result<Vec<SynthModelSpec>, SynthError> {
    if k == 0 {
        return Err(SynthError::Empty);
    }
    if k > FINGERPRINT_PALETTE.len() {
        return Err(SynthError::TooMany(k));
    }
    let base_pattern = BasePattern {
        salt: HashKey::new("family").u64(master_seed).finish(),
        components: 8,
        max_cycles: 4,
        amplitude: (6.0, 22.0),
    };
    Ok(FINGERPRINT_PALETTE[..k]
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = Xoshiro256::seed_from_u64(HashKey::new("model").u64(master_seed).u64(i as u64).finish());
            SynthModelSpec {
                id: ModelId::new(format!("m{}", i + 1)).expect("non-empty id"),
                base_pattern: base_pattern.clone(),
                fingerprint: Fingerprint {
                    band_center: p.band_center + rng.uniform(-0.003, 0.003),
                    band_gain: p.band_gain,
                    grid_period: p.grid_period,
                    palette_levels: p.palette_levels,
                },
                noise_sigma: p.noise_sigma,
                output_size: DEFAULT_OUTPUT_SIZE,
            }
        })
        .collect())
}

/// Which stages of the generator to run. Disabling everything but the base
/// texture exposes the shared, prompt-driven content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Operators {
    pub band: bool,
    pub grid: bool,
    pub palette: bool,
    pub noise: bool,
}

impl Operators {
    pub const ALL: Operators = Operators {
        band: true,
        grid: true,
        palette: true,
        noise: true,
    };
    pub const BASE_ONLY: Operators = Operators {
        band: false,
        grid: false,
        palette: false,
        noise: false,
    };
}

/// Adds `amp · cos(ax·x + ay·y + phase)` to a single-channel plane via the
/// separable identity `cos(u + v) = cos u cos v − sin u sin v`.
fn add_plane_wave(plane: &mut [f64], size: usize, ax: f64, ay: f64, phase: f64, amp: f64) {
    let cu: Vec<f64> = (0..size).map(|x| (ax * x as f64 + phase).cos()).collect();
    let su: Vec<f64> = (0..size).map(|x| (ax * x as f64 + phase).sin()).collect();
    for y in 0..size {
        let (sv, cv) = (ay * y as f64).sin_cos();
        let row = &mut plane[y * size..(y + 1) * size];
        for x in 0..size {
            row[x] += amp * (cu[x] * cv - su[x] * sv);
        }
    }
}

/// The prompt-driven base texture, channel-planar (`3 · size²` values).
pub fn base_texture(base: &BasePattern, prompt: &str, size: u32) -> Vec<f64> {
    let n = size as usize;
    let mut rng = Xoshiro256::seed_from_u64(HashKey::new("prompt").u64(base.salt).str(prompt).finish());
    let means: Vec<f64> = (0..3).map(|_| rng.uniform(70.0, 185.0)).collect();
    let mut planes = vec![0.0; 3 * n * n];
    for (c, m) in means.iter().enumerate() {
        planes[c * n * n..(c + 1) * n * n].fill(*m);
    }
    let span = u64::from(2 * base.max_cycles + 1);
    let mut pattern = vec![0.0; n * n];
    for _ in 0..base.components {
        let mut kx = rng.below(span) as i64 - i64::from(base.max_cycles);
        let ky = rng.below(span) as i64 - i64::from(base.max_cycles);
        if kx == 0 && ky == 0 {
            kx = 1;
        }
        let amp = rng.uniform(base.amplitude.0, base.amplitude.1);
        let phase = rng.uniform(0.0, TAU);
        let weights = [rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)];
        pattern.fill(0.0);
        let scale = TAU / f64::from(size);
        add_plane_wave(&mut pattern, n, scale * kx as f64, scale * ky as f64, phase, amp);
        for (c, w) in weights.iter().enumerate() {
            let plane = &mut planes[c * n * n..(c + 1) * n * n];
            plane.iter_mut().zip(&pattern).for_each(|(p, v)| *p += w * v);
        }
    }
    planes
}

/// Renders one image with a selectable subset of operators.
pub fn synth_render(spec: &SynthModelSpec, prompt: &str, seed: u64, ops: Operators) -> Image {
    let size = spec.output_size;
    let n = size as usize;
    let mut planes = base_texture(&spec.base_pattern, prompt, size);
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let fp = &spec.fingerprint;

    let mut shared = vec![0.0; n * n];
    if ops.band {
        let amp = fp.band_gain * (2.0 / BAND_COMPONENTS as f64).sqrt();
        for _ in 0..BAND_COMPONENTS {
            let theta = rng.uniform(0.0, PI);
            let f = fp.band_center * (1.0 + BAND_SPREAD * rng.uniform(-1.0, 1.0));
            let phase = rng.uniform(0.0, TAU);
            add_plane_wave(&mut shared, n, TAU * f * theta.cos(), TAU * f * theta.sin(), phase, amp);
        }
    }
    if ops.grid {
        if let Some(p) = fp.grid_period {
            let p = p as usize;
            for y in 0..n {
                for x in 0..n {
                    if x % p == 0 || y % p == 0 {
                        shared[y * n + x] += GRID_AMPLITUDE;
                    }
                }
            }
        }
    }

    let levels = if ops.palette { fp.palette_levels } else { None };
    let mut data = Vec::with_capacity(3 * n * n);
    for i in 0..n * n {
        for c in 0..3 {
            let mut v = planes[c * n * n + i] + shared[i];
            if ops.noise {
                v += spec.noise_sigma * rng.normal();
            }
            v = v.clamp(0.0, 255.0);
            if let Some(l) = levels {
                let steps = f64::from(l - 1);
                v = (v / 255.0 * steps).round() * 255.0 / steps;
            }
            data.push(v.round() as u8);
        }
    }
    planes.clear();
    Image::new(size, size, 3, data).expect("square RGB buffer")
}

/// Renders `prompt` with model `spec` under `seed`. Deterministic.
pub fn synth_generate(spec: &SynthModelSpec, prompt: &Prompt, seed: u64) -> Image {
    synth_render(spec, prompt.text(), seed, Operators::ALL)
}

/// Generation backend over an in-process synthetic family.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    family: Vec<SynthModelSpec>,
}

impl SyntheticBackend {
    pub fn new(family: Vec<SynthModelSpec>) -> Self {
        SyntheticBackend { family }
    }

    pub fn from_seed(k: usize, master_seed: u64) -> Result<Self, SynthError> {
        Ok(SyntheticBackend::new(make_family(k, master_seed)?))
    }

    pub fn family(&self) -> &[SynthModelSpec] {
        &self.family
    }

    pub fn spec(&self, id: &ModelId) -> Option<&SynthModelSpec> {
        self.family.iter().find(|s| &s.id == id)
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        self.family.iter().map(|s| s.id.clone()).collect()
    }
}

impl GenerationBackend for SyntheticBackend {
    fn generate(&self, model: &ModelId, prompt: &Prompt, seeds: &[u64]) -> Result<Vec<Image>, BackendError> {
        let spec = self
            .spec(model)
            .ok_or_else(|| BackendError::UnknownModel(model.to_string()))?;
        Ok(seeds.iter().map(|&s| synth_generate(spec, prompt, s)).collect())
    }
}

/// Drops every third whitespace token (positions 3, 6, ...), keeping at
/// least one token.
pub fn lossy_paraphrase(text: &str) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let kept: Vec<&str> = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| (i + 1) % 3 != 0)
        .map(|(_, t)| *t)
        .collect();
    if kept.is_empty() {
        tokens.first().copied().unwrap_or_default().to_string()
    } else {
        kept.join(" ")
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    lossy_mode: bool,
    entries: BTreeMap<String, String>,
}

/// Image content hash → generating prompt. Entries are insert-once.
#[derive(Debug, Default)]
pub struct PromptRegistry {
    entries: RwLock<HashMap<String, String>>,
    lossy_mode: bool,
}

impl PromptRegistry {
    pub fn new(lossy_mode: bool) -> Self {
        PromptRegistry {
            entries: RwLock::default(),
            lossy_mode,
        }
    }

    pub fn lossy_mode(&self) -> bool {
        self.lossy_mode
    }

    pub fn with_lossy_mode(self, lossy_mode: bool) -> Self {
        PromptRegistry { lossy_mode, ..self }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `image` as generated from `prompt`. Re-registering the same
    /// pair is a no-op; a different prompt for a known hash is rejected.
    pub fn register(&self, image: &Image, prompt: &str) -> Result<(), SynthError> {
        self.insert(image.content_hash(), prompt)
    }

    pub fn insert(&self, hash: String, prompt: &str) -> Result<(), SynthError> {
        let mut entries = self.entries.write().expect("registry lock");
        match entries.get(&hash) {
            Some(existing) if existing == prompt => Ok(()),
            Some(_) => Err(SynthError::RegistryConflict { hash }),
            None => {
                entries.insert(hash, prompt.to_string());
                Ok(())
            }
        }
    }

    /// The stored prompt verbatim (natural condition), or its lossy
    /// paraphrase when `lossy_mode` is set.
    pub fn registry_caption(&self, image: &Image) -> Result<Prompt, SynthError> {
        let hash = image.content_hash();
        let entries = self.entries.read().expect("registry lock");
        let text = entries.get(&hash).ok_or(SynthError::RegistryMiss(hash.clone()))?;
        Ok(if self.lossy_mode {
            Prompt::new(lossy_paraphrase(text), PromptSourceKind::SyntheticRegistry)
        } else {
            Prompt::new(text.clone(), PromptSourceKind::Natural)
        }
        .expect("registered prompts are non-empty"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let entries = self.entries.read().expect("registry lock");
        let file = RegistryFile {
            lossy_mode: self.lossy_mode,
            entries: entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let file: RegistryFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(PromptRegistry {
            entries: RwLock::new(file.entries.into_iter().collect()),
            lossy_mode: file.lossy_mode,
        })
    }
}

impl PromptSource for PromptRegistry {
    fn invert(&self, image: &Image) -> Result<Prompt, crate::attribution::AttribError> {
        self.registry_caption(image)
            .map_err(|e| crate::attribution::AttribError::PromptUnavailable(e.to_string()))
    }
}

const PROMPT_SUBJECTS: &[&str] = &[
    "lighthouse",
    "fox",
    "sailboat",
    "castle",
    "teapot",
    "forest",
    "robot",
    "violin",
    "bridge",
    "owl",
    "market",
    "glacier",
    "bicycle",
    "temple",
    "whale",
    "garden",
    "train",
    "mountain",
    "lantern",
    "city",
];
const PROMPT_STYLES: &[&str] = &[
    "a watercolor of",
    "a photo of",
    "an oil painting of",
    "a sketch of",
    "a render of",
    "a poster of",
];
const PROMPT_MODIFIERS: &[&str] = &[
    "at dawn",
    "in the rain",
    "under a starry sky",
    "in winter",
    "at golden hour",
    "in thick fog",
    "on a quiet street",
    "by the sea",
];
const PROMPT_ADJECTIVES: &[&str] = &[
    "old", "tiny", "bright", "misty", "golden", "lonely", "ancient", "colorful",
];

/// `n` distinct prompts drawn deterministically from a small phrase grammar.
pub fn synthetic_prompts(n: usize, seed: u64) -> Vec<String> {
    let mut rng = Xoshiro256::seed_from_u64(HashKey::new("prompts").u64(seed).finish());
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let pick = |rng: &mut Xoshiro256, list: &[&'static str]| list[rng.below(list.len() as u64) as usize];
    while out.len() < n {
        let mut p = format!(
            "{} a {} {} {}",
            pick(&mut rng, PROMPT_STYLES),
            pick(&mut rng, PROMPT_ADJECTIVES),
            pick(&mut rng, PROMPT_SUBJECTS),
            pick(&mut rng, PROMPT_MODIFIERS)
        );
        if !seen.insert(p.clone()) {
            p = format!("{p} #{}", out.len());
            seen.insert(p.clone());
        }
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{magnitude_spectrum, raps};

    fn prompt(s: &str) -> Prompt {
        Prompt::new(s, PromptSourceKind::Natural).unwrap()
    }

    #[test]
    fn family_sizes() {
        let fam = make_family(4, 2023).unwrap();
        assert_eq!(fam.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(fam[i].fingerprint.band_center, fam[j].fingerprint.band_center);
                assert_ne!(fam[i].fingerprint, fam[j].fingerprint);
            }
        }
        assert!(fam
            .iter()
            .all(|s| s.fingerprint.band_center > 0.0 && s.fingerprint.band_center < 0.5));
        assert_eq!(make_family(1, 2023).unwrap().len(), 1);
        assert!(matches!(make_family(9, 2023), Err(SynthError::TooMany(9))));
        assert!(matches!(make_family(0, 2023), Err(SynthError::Empty)));
        let ids: Vec<String> = fam.iter().map(|s| s.id.to_string()).collect();
        assert_eq!(ids, ["m1", "m2", "m3", "m4"]);
    }

    #[test]
    fn family_is_prefix_stable() {
        let small = make_family(3, 7).unwrap();
        let large = make_family(8, 7).unwrap();
        assert_eq!(&large[..3], &small[..]);
        assert_ne!(make_family(3, 8).unwrap(), small);
    }

    #[test]
    fn generation_is_deterministic() {
        let fam = make_family(2, 2023).unwrap();
        let p = prompt("a red barn in the snow");
        let a = synth_generate(&fam[0], &p, 99);
        assert_eq!(a, synth_generate(&fam[0], &p, 99));
        assert_ne!(a, synth_generate(&fam[0], &p, 100));
        assert_eq!((a.width(), a.height(), a.channels()), (256, 256, 3));
    }

    #[test]
    fn base_texture_is_shared_across_models() {
        let fam = make_family(8, 2023).unwrap();
        let first = synth_render(&fam[0], "a quiet harbor", 5, Operators::BASE_ONLY);
        for spec in &fam[1..] {
            assert_eq!(synth_render(spec, "a quiet harbor", 5, Operators::BASE_ONLY), first);
        }
        assert_ne!(synth_render(&fam[0], "a busy harbor", 5, Operators::BASE_ONLY), first);
    }

    fn log_raps(img: &Image) -> Vec<f64> {
        raps(&magnitude_spectrum(img))
            .unwrap()
            .bins
            .iter()
            .map(|v| v.ln_1p())
            .collect()
    }

    fn l1(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn raps_separates_models_more_than_seeds() {
        // For a fixed prompt, the log-RAPS distance between two images of the
        // same model must be smaller than between images of different models,
        // averaged over 50 seeds.
        let fam = make_family(4, 2023).unwrap();
        let p = "a city street at night";
        for i in 0..fam.len() {
            for j in i + 1..fam.len() {
                let (mut within, mut cross) = (0.0, 0.0);
                for s in 0..50u64 {
                    let a = log_raps(&synth_render(&fam[i], p, 2 * s, Operators::ALL));
                    let a2 = log_raps(&synth_render(&fam[i], p, 2 * s + 1, Operators::ALL));
                    let b = log_raps(&synth_render(&fam[j], p, 2 * s + 1, Operators::ALL));
                    within += l1(&a, &a2);
                    cross += l1(&a, &b);
                }
                assert!(
                    within < cross,
                    "m{} vs m{}: within {within} cross {cross}",
                    i + 1,
                    j + 1
                );
            }
        }
    }

    #[test]
    fn band_peak_persists_across_prompts() {
        let fam = make_family(4, 2023).unwrap();
        for spec in &fam {
            let expected = (spec.fingerprint.band_center * 256.0).round() as i64;
            for (k, p) in ["a cat", "two boats on a lake", "the streets of a big city"]
                .iter()
                .enumerate()
            {
                let img = synth_generate(spec, &prompt(p), 40 + k as u64);
                let bins = log_raps(&img);
                // Peak search above the base texture's frequencies.
                let peak = (12..bins.len()).max_by(|&a, &b| bins[a].total_cmp(&bins[b])).unwrap() as i64;
                assert!(
                    (peak - expected).abs() <= 2,
                    "{}: peak {peak} expected {expected}",
                    spec.id
                );
            }
        }
    }

    #[test]
    fn paraphrase_rule() {
        assert_eq!(lossy_paraphrase("the streets of a big city"), "the streets a big");
        assert_eq!(lossy_paraphrase("cat"), "cat");
        assert_eq!(lossy_paraphrase("a cat"), "a cat");
        assert_eq!(lossy_paraphrase("a  black   cat"), "a black");
    }

    #[test]
    fn registry_modes_and_miss() {
        let fam = make_family(1, 1).unwrap();
        let img = synth_generate(&fam[0], &prompt("the streets of a big city"), 3);
        let reg = PromptRegistry::new(false);
        reg.register(&img, "the streets of a big city").unwrap();
        reg.register(&img, "the streets of a big city").unwrap();
        assert!(matches!(
            reg.register(&img, "other"),
            Err(SynthError::RegistryConflict { .. })
        ));

        let exact = reg.registry_caption(&img).unwrap();
        assert_eq!(exact.text(), "the streets of a big city");
        assert_eq!(exact.source(), PromptSourceKind::Natural);

        let lossy = reg.with_lossy_mode(true);
        let p = lossy.registry_caption(&img).unwrap();
        assert_eq!(p.text(), "the streets a big");
        assert_eq!(p.source(), PromptSourceKind::SyntheticRegistry);

        let other = synth_generate(&fam[0], &prompt("x"), 4);
        assert!(matches!(
            lossy.registry_caption(&other),
            Err(SynthError::RegistryMiss(_))
        ));
    }

    #[test]
    fn registry_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        let reg = PromptRegistry::new(true);
        reg.insert("abc".into(), "a prompt here now").unwrap();
        reg.save(&path).unwrap();
        let back = PromptRegistry::load(&path).unwrap();
        assert!(back.lossy_mode());
        assert_eq!(back.len(), 1);
    }

    #[test]
    fn backend_rejects_unknown_model() {
        let backend = SyntheticBackend::from_seed(2, 1).unwrap();
        let err = backend
            .generate(&ModelId::new("m9").unwrap(), &prompt("a"), &[1])
            .unwrap_err();
        assert!(matches!(err, BackendError::UnknownModel(_)));
        assert_eq!(
            backend
                .generate(&ModelId::new("m2").unwrap(), &prompt("a"), &[1, 2])
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn prompt_corpus_is_deterministic_and_distinct() {
        let a = synthetic_prompts(300, 1);
        assert_eq!(a, synthetic_prompts(300, 1));
        assert_ne!(a, synthetic_prompts(300, 2));
        let unique: std::collections::HashSet<_> = a.iter().collect();
        assert_eq!(unique.len(), 300);
    }
}
