//! Dataset ingestion: IDX binary parsing, binary-class filtering, and the
//! 16×16 preprocessing that feeds amplitude encoding.

pub mod synthetic;

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const IMAGE_SIDE: usize = 28;
pub const CROP_START: usize = 6;
pub const CROP_SIDE: usize = 16;
pub const FEATURE_LEN: usize = CROP_SIDE * CROP_SIDE;

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// A raw grayscale image with its digit label (after filtering, the label
/// is the remapped class index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    /// Row-major intensities in [0, 255]; 28×28 for this task.
    pub pixels: Vec<u8>,
    pub label: u8,
}

/// Images decoded from one IDX tensor file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<u8>>,
}

/// Either payload an IDX file can carry here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images(ImageSet),
    Labels(Vec<u8>),
}

/// A preprocessed sample ready for encoding and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    /// 256 features in [0, 1] (L2 normalization happens at encoding).
    pub features: Vec<f64>,
    /// Ground-truth class in {0, 1}.
    pub true_label: u8,
    /// Label used for training; differs from `true_label` only when poisoned.
    pub train_label: u8,
    pub is_poisoned: bool,
    /// Index into the raw set this sample came from.
    pub source_index: usize,
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Length(format!(
            "need {end} header bytes, file has {}",
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse an IDX buffer: magic 0x00000803 yields an image tensor, magic
/// 0x00000801 a label vector. Counts must match the header exactly.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_be_u32(bytes, 0)?;
    match magic {
        MAGIC_IMAGES => {
            let count = read_be_u32(bytes, 4)? as usize;
            let rows = read_be_u32(bytes, 8)? as usize;
            let cols = read_be_u32(bytes, 12)? as usize;
            let expected = 16 + count * rows * cols;
            if bytes.len() != expected {
                return Err(Error::Length(format!(
                    "image payload is {} bytes, header promises {expected}",
                    bytes.len()
                )));
            }
            let stride = rows * cols;
            let images = (0..count)
                .map(|i| bytes[16 + i * stride..16 + (i + 1) * stride].to_vec())
                .collect();
            Ok(IdxData::Images(ImageSet { rows, cols, images }))
        }
        MAGIC_LABELS => {
            let count = read_be_u32(bytes, 4)? as usize;
            let expected = 8 + count;
            if bytes.len() != expected {
                return Err(Error::Length(format!(
                    "label payload is {} bytes, header promises {expected}",
                    bytes.len()
                )));
            }
            Ok(IdxData::Labels(bytes[8..].to_vec()))
        }
        other => Err(Error::Format(format!("unknown IDX magic 0x{other:08x}"))),
    }
}

/// Serialize an image set back to IDX bytes (inverse of `parse_idx`).
pub fn write_idx_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.images.len() * set.rows * set.cols);
    out.extend_from_slice(&MAGIC_IMAGES.to_be_bytes());
    out.extend_from_slice(&(set.images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(set.rows as u32).to_be_bytes());
    out.extend_from_slice(&(set.cols as u32).to_be_bytes());
    for image in &set.images {
        out.extend_from_slice(image);
    }
    out
}

/// Serialize labels to IDX bytes.
pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Read an IDX file from disk, transparently unwrapping gzip.
pub fn load_idx_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoder = flate2::read::GzDecoder::new(&raw[..]);
        let mut out = Vec::new();
        decoder
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip decode of {}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Keep only digits `keep.0` and `keep.1`, remapping them to classes 0 and 1.
/// Order is preserved; an empty result is a domain error.
pub fn filter_binary(images: &ImageSet, labels: &[u8], keep: (u8, u8)) -> Result<Vec<RawImage>> {
    if images.images.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images vs {} labels",
            images.images.len(),
            labels.len()
        )));
    }
    let filtered: Vec<RawImage> = images
        .images
        .iter()
        .zip(labels)
        .filter_map(|(pixels, &digit)| {
            let class = if digit == keep.0 {
                0
            } else if digit == keep.1 {
                1
            } else {
                return None;
            };
            Some(RawImage {
                pixels: pixels.clone(),
                label: class,
            })
        })
        .collect();
    if filtered.is_empty() {
        return Err(Error::Domain(format!(
            "no samples with digits {} or {}",
            keep.0, keep.1
        )));
    }
    Ok(filtered)
}

/// How a 28×28 image becomes 256 features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropPolicy {
    /// Center crop rows/cols [6, 22).
    #[default]
    CenterCrop,
    /// Bilinear downscale 28 -> 16.
    Downscale,
}

/// Crop (or downscale) to 16×16, scale to [0, 1], flatten row-major.
/// An all-zero result is replaced by a uniform 1e-6 vector so it stays
/// encodable and dataset cardinalities are preserved.
pub fn preprocess_with(pixels: &[u8], policy: CropPolicy) -> Result<Vec<f64>> {
    if pixels.len() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::Shape(format!(
            "expected {} pixels, got {}",
            IMAGE_SIDE * IMAGE_SIDE,
            pixels.len()
        )));
    }
    let mut features = Vec::with_capacity(FEATURE_LEN);
    match policy {
        CropPolicy::CenterCrop => {
            for r in CROP_START..CROP_START + CROP_SIDE {
                for c in CROP_START..CROP_START + CROP_SIDE {
                    features.push(pixels[r * IMAGE_SIDE + c] as f64 / 255.0);
                }
            }
        }
        CropPolicy::Downscale => {
            let scale = IMAGE_SIDE as f64 / CROP_SIDE as f64;
            for r in 0..CROP_SIDE {
                for c in 0..CROP_SIDE {
                    let y = ((r as f64 + 0.5) * scale - 0.5).clamp(0.0, (IMAGE_SIDE - 1) as f64);
                    let x = ((c as f64 + 0.5) * scale - 0.5).clamp(0.0, (IMAGE_SIDE - 1) as f64);
                    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(IMAGE_SIDE - 1), (x0 + 1).min(IMAGE_SIDE - 1));
                    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                    let sample = |rr: usize, cc: usize| pixels[rr * IMAGE_SIDE + cc] as f64 / 255.0;
                    let value = sample(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + sample(y0, x1) * (1.0 - fy) * fx
                        + sample(y1, x0) * fy * (1.0 - fx)
                        + sample(y1, x1) * fy * fx;
                    features.push(value);
                }
            }
        }
    }
    if features.iter().all(|&v| v == 0.0) {
        features = vec![1e-6; FEATURE_LEN];
    }
    Ok(features)
}

/// Preprocess with the default center-crop policy.
pub fn preprocess(pixels: &[u8]) -> Result<Vec<f64>> {
    preprocess_with(pixels, CropPolicy::CenterCrop)
}

/// Turn filtered images into labeled samples.
pub fn to_samples(images: &[RawImage], policy: CropPolicy) -> Result<Vec<LabeledSample>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            Ok(LabeledSample {
                features: preprocess_with(&img.pixels, policy)?,
                true_label: img.label,
                train_label: img.label,
                is_poisoned: false,
                source_index: i,
            })
        })
        .collect()
}

/// Deterministic seeded shuffle-split into disjoint, exhaustive train/test.
pub fn split<T: Clone>(
    samples: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng_from_seed(seed);
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    let n_train = (train_fraction * samples.len() as f64).round() as usize;
    let train = indices[..n_train]
        .iter()
        .map(|&i| samples[i].clone())
        .collect();
    let test = indices[n_train..]
        .iter()
        .map(|&i| samples[i].clone())
        .collect();
    Ok((train, test))
}
