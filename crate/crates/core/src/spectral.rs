//! Frequency-domain fingerprints: centered 2-D magnitude spectra, corpus
//! averages, radially averaged power spectra (RAPS) and the spectral feature
//! vector used as the native similarity extractor.
//!
//! Layout convention: spectra are quadrant-shifted so the DC bin sits at
//! `(w/2, h/2)` (integer division) and frequency grows outward.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{resize_to, to_grayscale, Image, ImageError};
use crate::similarity::FeatureVector;

/// Side length every image is resampled to before corpus averaging and
/// feature extraction.
pub const ANALYSIS_SIZE: u32 = 256;

/// Bins per color channel in the histogram part of [`spectral_features`].
pub const HISTOGRAM_BINS: usize = 16;

pub const SPECTRAL_EXTRACTOR_ID: &str = "spectral";

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("no images to average")]
    EmptyInput,
    #[error("spectrum is not centered")]
    NotCentered,
    #[error("spectrum shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum2D {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub centered: bool,
}

impl Spectrum2D {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    /// Log-scaled, min-max normalized 8-bit heatmap for plotting.
    pub fn heatmap(&self) -> Image {
        let logs: Vec<f64> = self.values.iter().map(|v| v.ln_1p()).collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let data = logs.iter().map(|v| ((v - lo) / span * 255.0).round() as u8).collect();
        Image::new(self.width as u32, self.height as u32, 1, data).expect("spectrum dimensions are positive")
    }
}

/// Mean power per integer radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapsProfile {
    pub bins: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RapsProfile {
    /// Largest radius kept, `floor(min(w, h) / 2)`.
    pub fn max_radius(&self) -> usize {
        self.bins.len() - 1
    }

    /// `radius,mean_power,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("radius,mean_power,count\n");
        for (r, (b, c)) in self.bins.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{r},{b:e},{c}\n"));
        }
        out
    }
}

/// Unnormalized forward 2-D DFT of a real row-major plane.
pub fn fft2(plane: &[f64], width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(width);
    let col_fft = planner.plan_fft_forward(height);

    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
    buf
}

/// Moves the DC bin from `(0, 0)` to `(w/2, h/2)`.
fn quadrant_shift(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let (sx, sy) = (width / 2, height / 2);
    for y in 0..height {
        let ty = (y + sy) % height;
        for x in 0..width {
            let tx = (x + sx) % width;
            out[ty * width + tx] = values[y * width + x];
        }
    }
    out
}

/// Centered DFT magnitude of the image's luma plane (no windowing).
pub fn magnitude_spectrum(image: &Image) -> Spectrum2D {
    let gray = to_grayscale(image);
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let plane: Vec<f64> = gray.data().iter().map(|&v| f64::from(v)).collect();
    let mags: Vec<f64> = fft2(&plane, w, h).iter().map(|c| c.norm()).collect();
    Spectrum2D {
        width: w,
        height: h,
        values: quadrant_shift(&mags, w, h),
        centered: true,
    }
}

fn to_analysis_size(image: &Image) -> Result<Image, ImageError> {
    resize_to(image, ANALYSIS_SIZE, ANALYSIS_SIZE)
}

/// Element-wise mean of magnitude spectra at the common analysis size.
/// Per-image transforms run in parallel; the reduction is in input order.
pub fn average_spectrum(images: &[Image]) -> Result<Spectrum2D, SpectralError> {
    if images.is_empty() {
        return Err(SpectralError::EmptyInput);
    }
    let spectra = images
        .par_iter()
        .map(|img| to_analysis_size(img).map(|i| magnitude_spectrum(&i)))
        .collect::<Result<Vec<_>, _>>()?;
    average_of(&spectra)
}

/// Element-wise mean of already computed spectra of equal shape.
pub fn average_of(spectra: &[Spectrum2D]) -> Result<Spectrum2D, SpectralError> {
    let first = spectra.first().ok_or(SpectralError::EmptyInput)?;
    let mut sum = vec![0.0; first.values.len()];
    for s in spectra {
        if (s.width, s.height) != (first.width, first.height) {
            return Err(SpectralError::ShapeMismatch(
                first.width,
                first.height,
                s.width,
                s.height,
            ));
        }
        sum.iter_mut().zip(&s.values).for_each(|(a, v)| *a += v);
    }
    let n = spectra.len() as f64;
    Ok(Spectrum2D {
        width: first.width,
        height: first.height,
        values: sum.into_iter().map(|v| v / n).collect(),
        centered: first.centered && spectra.iter().all(|s| s.centered),
    })
}

/// Radially averaged power spectrum. Each bin is assigned to the annulus of
/// its rounded Euclidean distance from the center; bins beyond
/// `floor(min(w, h) / 2)` are discarded.
pub fn raps(spectrum: &Spectrum2D) -> Result<RapsProfile, SpectralError> {
    if !spectrum.centered {
        return Err(SpectralError::NotCentered);
    }
    let max_r = spectrum.width.min(spectrum.height) / 2;
    let (cx, cy) = spectrum.center();
    let mut sums = vec![0.0; max_r + 1];
    let mut counts = vec![0usize; max_r + 1];
    for y in 0..spectrum.height {
        let dy = y as f64 - cy as f64;
        for x in 0..spectrum.width {
            let dx = x as f64 - cx as f64;
            let r = (dx * dx + dy * dy).sqrt().round() as usize;
            if r <= max_r {
                let v = spectrum.at(x, y);
                sums[r] += v * v;
                counts[r] += 1;
            }
        }
    }
    let bins = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok(RapsProfile { bins, counts })
}

/// Normalized per-channel histograms, `HISTOGRAM_BINS` per channel, RGB order.
pub fn color_histograms(image: &Image) -> Vec<f64> {
    let rgb = image.to_rgb();
    let mut hist = vec![0.0; 3 * HISTOGRAM_BINS];
    for px in rgb.data().chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            hist[c * HISTOGRAM_BINS + v as usize * HISTOGRAM_BINS / 256] += 1.0;
        }
    }
    let n = f64::from(rgb.width()) * f64::from(rgb.height());
    hist.iter_mut().for_each(|v| *v /= n);
    hist
}

/// `log1p(RAPS)` at the analysis size followed by the color histograms, L2
/// normalized. Dimension is `ANALYSIS_SIZE / 2 + 1 + 3 * HISTOGRAM_BINS`.
pub fn spectral_features(image: &Image) -> Result<FeatureVector, SpectralError> {
    let img = to_analysis_size(image)?;
    let profile = raps(&magnitude_spectrum(&img))?;
    let mut values: Vec<f64> = profile.bins.iter().map(|v| v.ln_1p()).collect();
    values.extend(color_histograms(&img));
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(FeatureVector::new(SPECTRAL_EXTRACTOR_ID, values).expect("spectral features are finite and non-empty"))
}

/// Dimension of [`spectral_features`] output.
pub const fn spectral_feature_dim() -> usize {
    ANALYSIS_SIZE as usize / 2 + 1 + 3 * HISTOGRAM_BINS
}
