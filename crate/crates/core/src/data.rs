//! Datasets, augmentation, checkpoints and CSV export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::nn::{LayerKind, LayerRecord, NetworkState, Tensor};

/// Bytes per CIFAR-10 record: one label byte plus a 3x32x32 image.
pub const CIFAR_RECORD_LEN: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;
/// Per-channel normalization applied to CIFAR-10 images before training.
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SIMN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("file size {len} is not a multiple of {CIFAR_RECORD_LEN}")]
    BadMagnitude { len: usize },
    #[error("record {record} has label {label}, expected 0..=9")]
    BadLabel { record: usize, label: u8 },
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    BadVersion { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// One labeled example stored as a `channels x height x width` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub shape: [usize; 3],
    pub pixels: Vec<f64>,
}

impl Sample {
    /// Spatial samples (both height and width above one) get augmented.
    pub fn is_image(&self) -> bool {
        self.shape[1] > 1 && self.shape[2] > 1
    }
}

/// Parses CIFAR-10 binary records. Pixels are scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<Sample>, DataError> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(DataError::BadMagnitude { len: bytes.len() });
    }
    bytes
        .chunks(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(record, r)| {
            let label = r[0];
            if label as usize >= CIFAR_CLASSES {
                return Err(DataError::BadLabel { record, label });
            }
            Ok(Sample {
                label: label as usize,
                shape: [3, 32, 32],
                pixels: r[1..].iter().map(|&p| p as f64 / 255.0).collect(),
            })
        })
        .collect()
}

/// Loads one CIFAR-10 `.bin` file, or every `data_batch_*.bin` (sorted by
/// name) when `path` is a directory.
pub fn load_cifar10(path: &Path) -> Result<Vec<Sample>, DataError> {
    if path.is_dir() {
        let files = cifar_train_files(path)?;
        let mut all = Vec::new();
        for f in files {
            all.extend(load_cifar10(&f)?);
        }
        return Ok(all);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_cifar10(&bytes)
}

fn cifar_train_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::InvalidArgs(format!("no data_batch_*.bin files in {}", dir.display())));
    }
    Ok(files)
}

/// Train and test splits from a CIFAR-10 binary directory.
pub fn load_cifar10_splits(dir: &Path) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    let train = load_cifar10(dir)?;
    let test = load_cifar10(&dir.join("test_batch.bin"))?;
    Ok((train, test))
}

/// Per-channel standardization with [`CIFAR_MEAN`] / [`CIFAR_STD`].
pub fn normalize_cifar(sample: &mut Sample) {
    let hw = sample.shape[1] * sample.shape[2];
    for (c, chunk) in sample.pixels.chunks_mut(hw).enumerate().take(3) {
        for v in chunk {
            *v = (*v - CIFAR_MEAN[c]) / CIFAR_STD[c];
        }
    }
}

/// Gaussian blobs with unit variance around `classes` random centers.
///
/// Centers are random directions scaled to norm `separation / sqrt(2)`, so
/// pairwise center distances concentrate near `separation` (in units of the
/// noise standard deviation) as `dim` grows. Samples come out grouped by
/// class. When `dim = 3 s^2` the samples are shaped as `3 x s x s` images,
/// otherwise as `dim x 1 x 1`.
pub fn synth_blobs(classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64) -> Result<Vec<Sample>, DataError> {
    if classes < 2 {
        return Err(DataError::InvalidArgs("need at least two classes".into()));
    }
    if dim == 0 {
        return Err(DataError::InvalidArgs("dimension must be positive".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(DataError::InvalidArgs(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let r = separation / std::f64::consts::SQRT_2;
            v.into_iter().map(|x| x * r / norm).collect()
        })
        .collect();
    let shape = blob_shape(dim);
    let mut out = Vec::with_capacity(classes * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let pixels = center.iter().map(|&c| c + rng.sample::<f64, _>(StandardNormal)).collect();
            out.push(Sample { label, shape, pixels });
        }
    }
    Ok(out)
}

fn blob_shape(dim: usize) -> [usize; 3] {
    if dim % 3 == 0 {
        let s = ((dim / 3) as f64).sqrt().round() as usize;
        if s > 1 && 3 * s * s == dim {
            return [3, s, s];
        }
    }
    [dim, 1, 1]
}

/// Random crop offset in the 4-padded image and flip decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self { dy: 4, dx: 4, flip: false };

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self { dy: rng.random_range(0..=8), dx: rng.random_range(0..=8), flip: rng.random_bool(0.5) }
    }
}

/// Zero-pads by 4, crops back to the original size at `(dy, dx)` and
/// optionally mirrors horizontally. Non-image samples pass through.
pub fn apply_augment(sample: &Sample, draw: AugmentDraw) -> Sample {
    if !sample.is_image() {
        return sample.clone();
    }
    let [c, h, w] = sample.shape;
    let mut pixels = vec![0.0; sample.pixels.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + draw.dy) as isize - 4;
            if sy < 0 || sy as usize >= h {
                continue;
            }
            for x in 0..w {
                let tx = if draw.flip { w - 1 - x } else { x };
                let sx = (tx + draw.dx) as isize - 4;
                if sx >= 0 && (sx as usize) < w {
                    pixels[(ch * h + y) * w + x] = sample.pixels[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Sample { label: sample.label, shape: sample.shape, pixels }
}

/// Draws the next augmentation from `rng` and applies it.
pub fn augment(sample: &Sample, rng: &mut impl Rng) -> Sample {
    if !sample.is_image() {
        return sample.clone();
    }
    apply_augment(sample, AugmentDraw::sample(rng))
}

// Checkpoint layout (all integers little-endian):
//   "SIMN" | version u32 | payload | crc32(payload) u32
// payload:
//   header_len u32 | header JSON (arch, binarizer, meta)
//   layer_count u32, then per layer:
//     name_len u32 | name | kind u8 | stride u32 | padding u32 | binarize u8
//     tensor_count u32, then per tensor: ndim u32 | dims u64.. | f64 data

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    arch: crate::nn::ArchSpec,
    binarizer: crate::nn::WeightBinarizer,
    meta: String,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Serializes `state` into checkpoint bytes.
pub fn checkpoint_bytes(state: &NetworkState) -> Vec<u8> {
    let mut payload = Vec::new();
    let header = CheckpointHeader { arch: state.arch.clone(), binarizer: state.binarizer, meta: state.meta.clone() };
    let header = serde_json::to_vec(&header).expect("header serializes");
    put_u32(&mut payload, header.len() as u32);
    payload.extend_from_slice(&header);
    put_u32(&mut payload, state.layers.len() as u32);
    for layer in &state.layers {
        put_u32(&mut payload, layer.name.len() as u32);
        payload.extend_from_slice(layer.name.as_bytes());
        let (kind, stride, padding) = match layer.kind {
            LayerKind::Conv { stride, padding } => (0u8, stride, padding),
            LayerKind::BatchNorm => (1, 0, 0),
            LayerKind::Linear => (2, 0, 0),
        };
        payload.push(kind);
        put_u32(&mut payload, stride as u32);
        put_u32(&mut payload, padding as u32);
        payload.push(layer.binarize as u8);
        put_u32(&mut payload, layer.params.len() as u32);
        for t in &layer.params {
            put_u32(&mut payload, t.shape().len() as u32);
            for &d in t.shape() {
                payload.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&payload);
    put_u32(&mut out, crc32fast::hash(&payload));
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| DataError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes produced by [`checkpoint_bytes`].
pub fn parse_checkpoint(bytes: &[u8]) -> Result<NetworkState, DataError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(DataError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(DataError::Corrupt("file too short".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(DataError::BadVersion { found: version });
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(DataError::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { buf: payload, pos: 0 };
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| DataError::Corrupt(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| DataError::Corrupt("layer name".into()))?;
        let kind = r.u8()?;
        let stride = r.u32()? as usize;
        let padding = r.u32()? as usize;
        let kind = match kind {
            0 => LayerKind::Conv { stride, padding },
            1 => LayerKind::BatchNorm,
            2 => LayerKind::Linear,
            k => return Err(DataError::Corrupt(format!("unknown layer kind {k}"))),
        };
        let binarize = r.u8()? != 0;
        let tensors = r.u32()? as usize;
        let mut params = Vec::with_capacity(tensors.min(16));
        for _ in 0..tensors {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| DataError::Corrupt("tensor size overflow".into()))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| DataError::Corrupt("tensor size overflow".into()))?)?;
            let data = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push(Tensor::new(shape, data).map_err(|e| DataError::Corrupt(e.to_string()))?);
        }
        layers.push(LayerRecord { name, kind, binarize, params, betas: vec![] });
    }
    if r.pos != payload.len() {
        return Err(DataError::Corrupt(format!("{} trailing bytes", payload.len() - r.pos)));
    }
    let mut state = NetworkState { arch: header.arch, binarizer: header.binarizer, layers, meta: header.meta };
    state.refresh_betas().map_err(|e| DataError::Corrupt(e.to_string()))?;
    Ok(state)
}

pub fn save_checkpoint(state: &NetworkState, path: &Path) -> Result<(), DataError> {
    fs::write(path, checkpoint_bytes(state)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkState, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_checkpoint(&bytes)
}

/// Minimal CSV writer: header row first, `\n` line endings, UTF-8.
pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> std::io::Result<Self> {
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out, columns: header.len() })
    }

    pub fn row(&mut self, fields: &[String]) -> std::io::Result<()> {
        assert_eq!(fields.len(), self.columns, "CSV row width must match the header");
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
