//! Datasets: synthetic separable generators, MNIST IDX parsing, even/odd subsets,
//! and a versioned binary cache.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

const CACHE_MAGIC: &[u8; 8] = b"MFDSET\0\0";
const CACHE_VERSION: u32 = 1;
const MAX_MARGIN_FLOOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: wrong magic number {found} at byte 0 (expected {expected})")]
    WrongMagic { file: String, found: u32, expected: u32 },
    #[error("{file}: truncated at byte offset {offset} (need {needed} bytes, file has {len})")]
    Truncated { file: String, offset: usize, needed: usize, len: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{file}: label {label} at byte offset {offset} is not a digit")]
    BadLabel { file: String, label: u8, offset: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("margin floor {0} is too large; rejection sampling would not terminate in practice")]
    MarginFloorTooLarge(f64),
    #[error("requested {requested} examples but only {available} are available")]
    NotEnoughExamples { requested: usize, available: usize },
    #[error("cache file {path}: {reason}")]
    Cache { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Binary classification data `{(x_i, y_i)} ⊂ ℝ^d × {±1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    pub provenance: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize, provenance: impl Into<String>, seed: u64) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::Invalid("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(DataError::Invalid(format!(
                "{} labels with dim {dim} need {} features, got {}",
                labels.len(),
                labels.len() * dim,
                features.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(DataError::Invalid(format!("label {y} is not ±1")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("features must be finite".into()));
        }
        Ok(Self { features, labels, dim, provenance: provenance.into(), seed })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Linearly separable Gaussian data labelled by a random unit teacher.
///
/// Points whose teacher margin is below `margin_floor` are redrawn.
pub fn synth_separable(m: usize, d: usize, margin_floor: f64, seed: u64) -> Result<Dataset, DataError> {
    if m < 2 || d < 2 {
        return Err(DataError::Invalid(format!("need m >= 2 and d >= 2, got m={m}, d={d}")));
    }
    if !(margin_floor > 0.0) {
        return Err(DataError::Invalid(format!("margin floor must be positive, got {margin_floor}")));
    }
    if margin_floor >= MAX_MARGIN_FLOOR {
        return Err(DataError::MarginFloorTooLarge(margin_floor));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut teacher: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = teacher.iter().map(|v| v * v).sum::<f64>().sqrt();
    teacher.iter_mut().for_each(|v| *v /= norm);

    let mut features = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    while labels.len() < m {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s: f64 = x.iter().zip(&teacher).map(|(a, b)| a * b).sum();
        if s.abs() < margin_floor {
            continue;
        }
        labels.push(s.signum());
        features.extend(x);
    }
    Dataset::new(
        features,
        labels,
        d,
        format!("synth_separable(m={m},d={d},margin_floor={margin_floor})"),
        seed,
    )
}

/// Digits as parsed from an IDX pair; pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDigits {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
    pub digits: Vec<u8>,
}

impl RawDigits {
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated { file: file.to_string(), offset, needed: 4, len: bytes.len() })
}

/// Decodes an IDX3 image file: returns `(count, rows, cols, pixel bytes)`.
pub fn decode_idx_images<'a>(bytes: &'a [u8], file: &str) -> Result<(usize, usize, usize, &'a [u8]), DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::WrongMagic { file: file.to_string(), found: magic, expected: IDX_IMAGES_MAGIC });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let needed = count * rows * cols;
    let body = bytes.get(16..16 + needed).ok_or_else(|| DataError::Truncated {
        file: file.to_string(),
        offset: 16,
        needed,
        len: bytes.len(),
    })?;
    Ok((count, rows, cols, body))
}

/// Decodes an IDX1 label file.
pub fn decode_idx_labels<'a>(bytes: &'a [u8], file: &str) -> Result<&'a [u8], DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::WrongMagic { file: file.to_string(), found: magic, expected: IDX_LABELS_MAGIC });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let body = bytes.get(8..8 + count).ok_or_else(|| DataError::Truncated {
        file: file.to_string(),
        offset: 8,
        needed: count,
        len: bytes.len(),
    })?;
    if let Some(pos) = body.iter().position(|&l| l > 9) {
        return Err(DataError::BadLabel { file: file.to_string(), label: body[pos], offset: 8 + pos });
    }
    Ok(body)
}

pub fn parse_idx(images_path: &Path, labels_path: &Path) -> Result<RawDigits, DataError> {
    let images = fs::read(images_path).map_err(io_err(images_path))?;
    let labels = fs::read(labels_path).map_err(io_err(labels_path))?;
    parse_idx_bytes(&images, &labels, &images_path.display().to_string(), &labels_path.display().to_string())
}

pub fn parse_idx_bytes(images: &[u8], labels: &[u8], images_name: &str, labels_name: &str) -> Result<RawDigits, DataError> {
    let (count, rows, cols, body) = decode_idx_images(images, images_name)?;
    let digits = decode_idx_labels(labels, labels_name)?;
    if digits.len() != count {
        return Err(DataError::CountMismatch { images: count, labels: digits.len() });
    }
    Ok(RawDigits {
        rows,
        cols,
        pixels: body.iter().map(|&b| f64::from(b) / 255.0).collect(),
        digits: digits.to_vec(),
    })
}

/// Encodes images and labels as an IDX pair (big-endian headers).
pub fn encode_idx(rows: usize, cols: usize, pixels: &[u8], digits: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + pixels.len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(digits.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    images.extend_from_slice(pixels);
    let mut labels = Vec::with_capacity(8 + digits.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(digits.len() as u32).to_be_bytes());
    labels.extend_from_slice(digits);
    (images, labels)
}

pub fn parity_label(digit: u8) -> f64 {
    if digit % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Class-balanced even (+1) / odd (−1) subset of `m` digits, sampled without replacement.
pub fn even_odd_subset(raw: &RawDigits, m: usize, seed: u64) -> Result<Dataset, DataError> {
    if m > raw.len() {
        return Err(DataError::NotEnoughExamples { requested: m, available: raw.len() });
    }
    if m == 0 {
        return Err(DataError::Invalid("subset size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut even, mut odd): (Vec<usize>, Vec<usize>) = (0..raw.len()).partition(|&i| raw.digits[i] % 2 == 0);
    even.shuffle(&mut rng);
    odd.shuffle(&mut rng);
    let n_even = m.div_ceil(2).min(even.len());
    let n_odd = m - n_even;
    if n_odd > odd.len() || n_even.abs_diff(n_odd) > 1 {
        return Err(DataError::NotEnoughExamples { requested: m, available: 2 * even.len().min(odd.len()) + 1 });
    }
    let mut chosen: Vec<usize> = even[..n_even].iter().chain(&odd[..n_odd]).copied().collect();
    chosen.shuffle(&mut rng);

    let dim = raw.rows * raw.cols;
    let mut features = Vec::with_capacity(m * dim);
    let mut labels = Vec::with_capacity(m);
    for &i in &chosen {
        features.extend_from_slice(raw.image(i));
        labels.push(parity_label(raw.digits[i]));
    }
    Dataset::new(features, labels, dim, format!("mnist_even_odd(m={m})"), seed)
}

/// Writes a dataset in the versioned little-endian cache format.
pub fn save_cache(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(64 + ds.features.len() * 8 + ds.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.dim as u64).to_le_bytes());
    buf.extend_from_slice(&ds.seed.to_le_bytes());
    let prov = ds.provenance.as_bytes();
    buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    buf.extend_from_slice(prov);
    buf.extend(ds.labels.iter().map(|&y| if y > 0.0 { 1u8 } else { 0u8 }));
    for v in &ds.features {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn load_cache(path: &Path) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |reason: &str| DataError::Cache { path: path.to_path_buf(), reason: reason.to_string() };
    let mut cur = 0usize;
    let mut take = |n: usize| -> Result<&[u8], DataError> {
        let s = bytes.get(cur..cur + n).ok_or_else(|| bad(&format!("truncated at byte {cur}")))?;
        cur += n;
        Ok(s)
    };
    if take(8)? != CACHE_MAGIC {
        return Err(bad("not a dataset cache file"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported cache version {version}")));
    }
    let m = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let plen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let provenance = String::from_utf8(take(plen)?.to_vec()).map_err(|_| bad("provenance is not utf-8"))?;
    let labels: Vec<f64> = take(m)?.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect();
    let raw = take(m * dim * 8)?;
    let features = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Dataset::new(features, labels, dim, provenance, seed)
}

/// Cache file name for an even/odd subset.
pub fn cache_path(dir: &Path, m: usize, seed: u64) -> PathBuf {
    dir.join(format!("mnist_even_odd_m{m}_seed{seed}.mfds"))
}

/// Loads the `(seed, m)` subset from `cache_dir` when present, otherwise parses and caches it.
pub fn cached_even_odd_subset(
    images: &Path,
    labels: &Path,
    m: usize,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<Dataset, DataError> {
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, m, seed);
        if path.exists() {
            return load_cache(&path);
        }
        let ds = even_odd_subset(&parse_idx(images, labels)?, m, seed)?;
        save_cache(&ds, &path)?;
        return Ok(ds);
    }
    even_odd_subset(&parse_idx(images, labels)?, m, seed)
}
