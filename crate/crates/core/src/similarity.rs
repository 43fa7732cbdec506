//! Feature vectors, the extractor interface and the similarity calculators
//! (cosine on features, SSIM, and their weighted combination).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{gaussian_kernel, resize_to, to_grayscale, Image, ImageError};
use crate::spectral::{spectral_features, SpectralError, ANALYSIS_SIZE};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm feature vector")]
    ZeroVector,
    #[error("image too small for SSIM: {0}x{1}, need at least {SSIM_WINDOW} per side")]
    TooSmall(u32, u32),
    #[error("empty candidate pool")]
    EmptyPool,
    #[error("feature vector has non-finite entries")]
    NonFinite,
    #[error("empty feature vector")]
    Empty,
    #[error("feature extraction failed: {0}")]
    Extraction(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Fixed-dimension real feature vector tagged with its producing extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    extractor_id: String,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(extractor_id: impl Into<String>, values: Vec<f64>) -> Result<Self, SimilarityError> {
        if values.is_empty() {
            return Err(SimilarityError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite);
        }
        Ok(FeatureVector {
            extractor_id: extractor_id.into(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }
}

/// Similarity scores of one test image against a model's candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScoreSet {
    pub model_id: String,
    pub scores: Vec<f64>,
}

/// Deterministic image → feature mapping of fixed dimension.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    fn extract(&self, image: &Image) -> Result<FeatureVector, SimilarityError>;
}

/// The native spectral extractor.
#[derive(Debug, Default, Clone, Copy)]
pub struct SpectralExtractor;

impl FeatureExtractor for SpectralExtractor {
    fn id(&self) -> &str {
        crate::spectral::SPECTRAL_EXTRACTOR_ID
    }

    fn extract(&self, image: &Image) -> Result<FeatureVector, SimilarityError> {
        Ok(spectral_features(image)?)
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64, SimilarityError> {
    cosine_slices(a.values(), b.values())
}

fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Valid-mode separable filter of a `w`×`h` plane with `taps`.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * horiz[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5) of the luma
/// planes, with `C1 = (0.01·255)²` and `C2 = (0.03·255)²`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, SimilarityError> {
    let (ga, gb) = (to_grayscale(a), to_grayscale(b));
    if (ga.width(), ga.height()) != (gb.width(), gb.height()) {
        return Err(SimilarityError::DimensionMismatch(
            ga.width() as usize * ga.height() as usize,
            gb.width() as usize * gb.height() as usize,
        ));
    }
    let (w, h) = (ga.width() as usize, ga.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(SimilarityError::TooSmall(ga.width(), ga.height()));
    }
    let x: Vec<f64> = ga.data().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = gb.data().iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let taps = gaussian_window_taps();
    let (mu_x, ow, oh) = filter_valid(&x, w, h, &taps);
    let (mu_y, ..) = filter_valid(&y, w, h, &taps);
    let (e_xx, ..) = filter_valid(&xx, w, h, &taps);
    let (e_yy, ..) = filter_valid(&yy, w, h, &taps);
    let (e_xy, ..) = filter_valid(&xy, w, h, &taps);

    let total: f64 = (0..ow * oh)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / (ow * oh) as f64)
}

/// The 11 normalized 1-D taps of the SSIM window (σ = 1.5).
pub fn gaussian_window_taps() -> Vec<f64> {
    // gaussian_kernel uses radius ceil(3σ) = 5, i.e. exactly 11 taps.
    let taps = gaussian_kernel(SSIM_SIGMA);
    debug_assert_eq!(taps.len(), SSIM_WINDOW);
    taps
}

fn analysis_resize(image: &Image) -> Result<Image, ImageError> {
    resize_to(image, ANALYSIS_SIZE, ANALYSIS_SIZE)
}

/// `weight · cos(extract(test), extract(candidate)) + (1 − weight) · ssim`,
/// both images resampled to the analysis size first.
pub fn combined_score(
    test: &Image,
    candidate: &Image,
    extractor: &dyn FeatureExtractor,
    weight: f64,
) -> Result<f64, SimilarityError> {
    let (t, c) = (analysis_resize(test)?, analysis_resize(candidate)?);
    let cos = cosine_similarity(&extractor.extract(&t)?, &extractor.extract(&c)?)?;
    Ok(combine(cos, ssim(&t, &c)?, weight))
}

pub fn combine(cosine: f64, ssim: f64, weight: f64) -> f64 {
    weight * cosine + (1.0 - weight) * ssim
}

/// Cosine of the test feature against each pool feature, in pool order.
pub fn score_pool(
    test_feature: &FeatureVector,
    pool_features: &[FeatureVector],
    model_id: &str,
) -> Result<SimScoreSet, SimilarityError> {
    if pool_features.is_empty() {
        return Err(SimilarityError::EmptyPool);
    }
    let scores = pool_features
        .iter()
        .map(|f| cosine_similarity(test_feature, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimScoreSet {
        model_id: model_id.to_string(),
        scores,
    })
}

/// CLI/config selector for the similarity calculator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Spectral,
    Embed,
    Ssim,
    Combined,
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractorKind::Spectral => "spectral",
            ExtractorKind::Embed => "embed",
            ExtractorKind::Ssim => "ssim",
            ExtractorKind::Combined => "combined",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spectral" => Ok(ExtractorKind::Spectral),
            "embed" => Ok(ExtractorKind::Embed),
            "ssim" => Ok(ExtractorKind::Ssim),
            "combined" => Ok(ExtractorKind::Combined),
            other => Err(format!(
                "unknown extractor {other:?} (expected spectral, embed, ssim or combined)"
            )),
        }
    }
}

/// Precomputed per-image data a [`SimilarityMethod`] needs to score pairs.
/// Computing this once per candidate lets pools be scored against many test
/// images without re-extracting.
#[derive(Debug, Clone)]
pub struct Signature {
    pub feature: Option<FeatureVector>,
    pub luma: Option<Arc<Image>>,
}

/// How a test image is compared with a candidate.
#[derive(Clone)]
pub enum SimilarityMethod {
    /// Cosine similarity of extracted features.
    Cosine(Arc<dyn FeatureExtractor>),
    /// SSIM of the luma planes at the analysis size.
    Ssim,
    /// Weighted mean of the two (`weight` applies to the cosine term).
    Combined {
        extractor: Arc<dyn FeatureExtractor>,
        weight: f64,
    },
}

impl fmt::Debug for SimilarityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl SimilarityMethod {
    pub fn spectral() -> Self {
        SimilarityMethod::Cosine(Arc::new(SpectralExtractor))
    }

    /// Stable label, also used as part of signature cache keys.
    pub fn label(&self) -> String {
        match self {
            SimilarityMethod::Cosine(e) => format!("cosine:{}", e.id()),
            SimilarityMethod::Ssim => "ssim".to_string(),
            SimilarityMethod::Combined { extractor, weight } => {
                format!("combined:{}:{weight}", extractor.id())
            }
        }
    }

    pub fn signature(&self, image: &Image) -> Result<Signature, SimilarityError> {
        let resized = analysis_resize(image)?;
        let luma = || Some(Arc::new(to_grayscale(&resized)));
        Ok(match self {
            SimilarityMethod::Cosine(e) => Signature {
                feature: Some(e.extract(&resized)?),
                luma: None,
            },
            SimilarityMethod::Ssim => Signature {
                feature: None,
                luma: luma(),
            },
            SimilarityMethod::Combined { extractor, .. } => Signature {
                feature: Some(extractor.extract(&resized)?),
                luma: luma(),
            },
        })
    }

    pub fn score(&self, test: &Signature, candidate: &Signature) -> Result<f64, SimilarityError> {
        fn feature(s: &Signature) -> Result<&FeatureVector, SimilarityError> {
            s.feature
                .as_ref()
                .ok_or_else(|| SimilarityError::Extraction("signature has no feature".into()))
        }
        fn luma(s: &Signature) -> Result<&Image, SimilarityError> {
            s.luma
                .as_deref()
                .ok_or_else(|| SimilarityError::Extraction("signature has no luma plane".into()))
        }
        match self {
            SimilarityMethod::Cosine(_) => cosine_similarity(feature(test)?, feature(candidate)?),
            SimilarityMethod::Ssim => ssim(luma(test)?, luma(candidate)?),
            SimilarityMethod::Combined { weight, .. } => {
                let cos = cosine_similarity(feature(test)?, feature(candidate)?)?;
                Ok(combine(cos, ssim(luma(test)?, luma(candidate)?)?, *weight))
            }
        }
    }

    /// Scores a test signature against a pool, preserving order.
    pub fn score_set(
        &self,
        test: &Signature,
        pool: &[Signature],
        model_id: &str,
    ) -> Result<SimScoreSet, SimilarityError> {
        if pool.is_empty() {
            return Err(SimilarityError::EmptyPool);
        }
        let scores = pool
            .iter()
            .map(|c| self.score(test, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimScoreSet {
            model_id: model_id.to_string(),
            scores,
        })
    }
}
