//! Pixel buffers, PNG/JPEG codecs, color conversion and the attack transforms
//! used by the robustness sweep.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
}

/// Owned row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidBuffer(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidBuffer(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(ImageError::InvalidBuffer(format!(
                "expected {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// An image with every sample set to `value`.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImageError> {
        let len = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; len])
    }

    /// Builds an image from a closure returning the samples of pixel `(x, y)`.
    pub fn from_fn<const C: usize>(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; C],
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width as usize * height as usize * C);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image::new(width, height, C as u8, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Expands a gray image to three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Hex SHA-256 over dimensions, channel count and samples.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels]);
        h.update(&self.data);
        hex::encode(h.finalize())
    }

    fn color_type(&self) -> ExtendedColorType {
        if self.channels == 3 {
            ExtendedColorType::Rgb8
        } else {
            ExtendedColorType::L8
        }
    }

    /// Lossless PNG encoding.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut buf = Vec::new();
        PngEncoder::new(&mut buf)
            .write_image(&self.data, self.width, self.height, self.color_type())
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(buf)
    }

    /// Decodes PNG or JPEG bytes to RGB8.
    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        let dynamic = image::ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| ImageError::Decode(e.to_string()))?;
        match dynamic.format() {
            Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
            other => {
                return Err(ImageError::Decode(format!(
                    "unsupported format {other:?}, expected PNG or JPEG"
                )))
            }
        }
        let rgb = dynamic
            .decode()
            .map_err(|e| ImageError::Decode(e.to_string()))?
            .to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w, h, 3, rgb.into_raw())
    }
}

/// Loads a PNG or JPEG file as RGB8; gray sources are expanded to 3 channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Image::decode(&bytes)
}

/// Writes `image` as a lossless PNG.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = image.encode_png()?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// BT.601 luma, rounded half away from zero. Gray input is returned unchanged.
pub fn to_grayscale(image: &Image) -> Image {
    if image.channels == 1 {
        return image.clone();
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image {
        width: image.width,
        height: image.height,
        channels: 1,
        data,
    }
}

/// Normalized 1-D Gaussian taps for radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= z);
    taps
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image, ImageError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(ImageError::InvalidParam(format!("sigma must be > 0, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h, c) = (image.width as i64, image.height as i64, image.channels as usize);
    let sample = |x: i64, y: i64, ch: usize, buf: &[f64]| -> f64 {
        let x = x.clamp(0, w - 1);
        let y = y.clamp(0, h - 1);
        buf[(y * w + x) as usize * c + ch]
    };

    let src: Vec<f64> = image.data.iter().map(|&v| f64::from(v)).collect();
    let mut horiz = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                horiz[(y * w + x) as usize * c + ch] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * sample(x + k as i64 - radius, y, ch, &src))
                    .sum();
            }
        }
    }
    let mut data = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * sample(x, y + k as i64 - radius, ch, &horiz))
                    .sum();
                data[(y * w + x) as usize * c + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::new(image.width, image.height, image.channels, data)
}

/// Encodes to baseline JPEG at `quality` and decodes back. Channel count is
/// preserved.
pub fn jpeg_roundtrip(image: &Image, quality: u8) -> Result<Image, ImageError> {
    if !(1..=100).contains(&quality) {
        return Err(ImageError::InvalidParam(format!(
            "JPEG quality must be in [1, 100], got {quality}"
        )));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&image.data, image.width, image.height, image.color_type())
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    let decoded =
        image::load_from_memory_with_format(&buf, ImageFormat::Jpeg).map_err(|e| ImageError::Decode(e.to_string()))?;
    let (data, channels) = if image.channels == 3 {
        (decoded.to_rgb8().into_raw(), 3)
    } else {
        (decoded.to_luma8().into_raw(), 1)
    };
    Image::new(image.width, image.height, channels, data)
}

/// Bilinear resampling to an explicit size. Sample centers are aligned
/// (`src = (dst + 0.5) * in/out - 0.5`), so an equal-size resize is exact.
pub fn resize_to(image: &Image, width: u32, height: u32) -> Result<Image, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::InvalidParam(format!(
            "target size must be positive, got {width}x{height}"
        )));
    }
    if width == image.width && height == image.height {
        return Ok(image.clone());
    }
    let c = image.channels as usize;
    let (iw, ih) = (image.width as usize, image.height as usize);
    let sx = iw as f64 / f64::from(width);
    let sy = ih as f64 / f64::from(height);
    let axis = |dst: u32, scale: f64, len: usize| -> (usize, usize, f64) {
        let s = ((f64::from(dst) + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut data = Vec::with_capacity(width as usize * height as usize * c);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, ih);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, sx, iw);
            for ch in 0..c {
                let at = |xx: usize, yy: usize| f64::from(image.data[(yy * iw + xx) * c + ch]);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(width, height, image.channels, data)
}

/// Bilinear downscale to `(round(w·scale), round(h·scale))`, `scale ∈ (0, 1]`.
pub fn resize(image: &Image, scale: f64) -> Result<Image, ImageError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(ImageError::InvalidParam(format!(
            "resize scale must be in (0, 1], got {scale}"
        )));
    }
    let w = (f64::from(image.width) * scale).round();
    let h = (f64::from(image.height) * scale).round();
    if w < 1.0 || h < 1.0 {
        return Err(ImageError::InvalidParam(format!(
            "scale {scale} collapses {}x{} to zero size",
            image.width, image.height
        )));
    }
    resize_to(image, w as u32, h as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    GaussianBlur,
    JpegCompression,
    Resize,
}

/// One robustness transform with its parameter (σ, JPEG quality, or scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub param: f64,
}

impl AttackConfig {
    pub fn blur(sigma: f64) -> Result<Self, ImageError> {
        AttackConfig {
            kind: AttackKind::GaussianBlur,
            param: sigma,
        }
        .validated()
    }

    pub fn jpeg(quality: u8) -> Result<Self, ImageError> {
        AttackConfig {
            kind: AttackKind::JpegCompression,
            param: f64::from(quality),
        }
        .validated()
    }

    pub fn resize(scale: f64) -> Result<Self, ImageError> {
        AttackConfig {
            kind: AttackKind::Resize,
            param: scale,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, ImageError> {
        let p = self.param;
        let ok = match self.kind {
            AttackKind::GaussianBlur => p > 0.0 && p.is_finite(),
            AttackKind::JpegCompression => p.fract() == 0.0 && (1.0..=100.0).contains(&p),
            AttackKind::Resize => p > 0.0 && p <= 1.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(ImageError::InvalidParam(format!("invalid parameter {p} for {}", self)))
        }
    }

    pub fn apply(&self, image: &Image) -> Result<Image, ImageError> {
        match self.kind {
            AttackKind::GaussianBlur => gaussian_blur(image, self.param),
            AttackKind::JpegCompression => {
                self.validated()?;
                jpeg_roundtrip(image, self.param as u8)
            }
            AttackKind::Resize => resize(image, self.param),
        }
    }
}

impl fmt::Display for AttackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            AttackKind::GaussianBlur => "blur",
            AttackKind::JpegCompression => "jpeg",
            AttackKind::Resize => "resize",
        };
        write!(f, "{op}:{}", self.param)
    }
}

/// Parses `blur:1.0`, `jpeg:95` or `resize:0.5`.
impl FromStr for AttackConfig {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (op, param) = s
            .split_once(':')
            .ok_or_else(|| ImageError::InvalidParam(format!("expected OP:PARAM, got {s:?}")))?;
        let param: f64 = param
            .trim()
            .parse()
            .map_err(|_| ImageError::InvalidParam(format!("bad attack parameter in {s:?}")))?;
        let kind = match op.trim() {
            "blur" => AttackKind::GaussianBlur,
            "jpeg" => AttackKind::JpegCompression,
            "resize" => AttackKind::Resize,
            other => return Err(ImageError::InvalidParam(format!("unknown attack {other:?}"))),
        };
        AttackConfig { kind, param }.validated()
    }
}
