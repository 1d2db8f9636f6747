use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendError;

/// Model input edge length.
pub const INPUT_SIZE: usize = 224;
pub const INPUT_LEN: usize = 3 * INPUT_SIZE * INPUT_SIZE;

/// Raw image as it arrives from a device, a file or an upload.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    /// Interleaved 8-bit RGB, row-major, `width * height * 3` bytes.
    Pixels { width: usize, height: usize, rgb: Vec<u8> },
    /// PNG or JPEG bytes.
    Encoded(Vec<u8>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pub source: ImageSource,
    pub source_id: String,
}

impl ImageInput {
    pub fn from_pixels(source_id: impl Into<String>, width: usize, height: usize, rgb: Vec<u8>) -> Self {
        ImageInput {
            source: ImageSource::Pixels { width, height, rgb },
            source_id: source_id.into(),
        }
    }

    pub fn from_encoded(source_id: impl Into<String>, bytes: Vec<u8>) -> Self {
        ImageInput {
            source: ImageSource::Encoded(bytes),
            source_id: source_id.into(),
        }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        ImageInput {
            source_id: path.display().to_string(),
            source: ImageSource::File(path),
        }
    }

    /// Decode into `(width, height, interleaved rgb)`.
    pub fn decode(&self) -> Result<(usize, usize, Vec<u8>), BackendError> {
        let decoded = match &self.source {
            ImageSource::Pixels { width, height, rgb } => {
                if *width == 0 || *height == 0 {
                    return Err(BackendError::ZeroDimension);
                }
                if rgb.len() != width * height * 3 {
                    return Err(BackendError::DecodeFailure(format!(
                        "{}x{} image needs {} bytes, got {}",
                        width,
                        height,
                        width * height * 3,
                        rgb.len()
                    )));
                }
                return Ok((*width, *height, rgb.clone()));
            }
            ImageSource::Encoded(bytes) => image::load_from_memory(bytes),
            ImageSource::File(path) => image::ImageReader::open(path)
                .map_err(|e| BackendError::DecodeFailure(format!("{}: {e}", path.display())))?
                .with_guessed_format()
                .map_err(|e| BackendError::DecodeFailure(format!("{}: {e}", path.display())))?
                .decode(),
        }
        .map_err(|e| BackendError::DecodeFailure(format!("{}: {e}", self.source_id)))?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if w == 0 || h == 0 {
            return Err(BackendError::ZeroDimension);
        }
        Ok((w, h, rgb.into_raw()))
    }
}

/// Per-channel normalization constants applied after scaling to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// Natural-image statistics most pretrained backbones expect.
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) || self.std.iter().any(|s| *s <= 0.0) {
            return Err(BackendError::Config(
                "normalization constants must be finite with positive std".into(),
            ));
        }
        Ok(())
    }
}

/// Planar 3×224×224 model input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedTensor {
    /// Channel-major (CHW) values.
    pub data: Vec<f32>,
    pub normalization: Normalization,
    pub source_id: String,
}

/// Digest identifying tensor content; stub backends key their output on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentKey(pub [u8; 32]);

impl ContentKey {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ContentKey(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl PreprocessedTensor {
    pub fn shape(&self) -> [usize; 3] {
        [3, INPUT_SIZE, INPUT_SIZE]
    }

    pub fn at(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * INPUT_SIZE + y) * INPUT_SIZE + x]
    }

    pub fn content_key(&self) -> ContentKey {
        let mut hasher = Sha256::new();
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        ContentKey(hasher.finalize().into())
    }
}

/// Source coordinate for a destination index under half-pixel alignment,
/// as `(lower index, upper index, fraction)`.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize to 224×224, scale to [0, 1], then `(x − mean) / std` per
/// channel. Deterministic; no antialiasing.
pub fn preprocess(image: &ImageInput, normalization: &Normalization) -> Result<PreprocessedTensor, BackendError> {
    normalization.validate()?;
    let (width, height, rgb) = image.decode()?;
    let px = |x: usize, y: usize, c: usize| f64::from(rgb[(y * width + x) * 3 + c]);

    let cols: Vec<_> = (0..INPUT_SIZE).map(|x| sample_axis(x, width, INPUT_SIZE)).collect();
    let rows: Vec<_> = (0..INPUT_SIZE).map(|y| sample_axis(y, height, INPUT_SIZE)).collect();

    let mut data = vec![0f32; INPUT_LEN];
    for c in 0..3 {
        let (mean, std) = (normalization.mean[c], normalization.std[c]);
        for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                let top = lerp(px(x0, y0, c), px(x1, y0, c), fx);
                let bottom = lerp(px(x0, y1, c), px(x1, y1, c), fx);
                let value = lerp(top, bottom, fy) / 255.0;
                data[(c * INPUT_SIZE + y) * INPUT_SIZE + x] = ((value - mean) / std) as f32;
            }
        }
    }
    Ok(PreprocessedTensor {
        data,
        normalization: *normalization,
        source_id: image.source_id.clone(),
    })
}
