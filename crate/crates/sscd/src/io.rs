//! On-disk formats: feature tensors, checkpoints, and dataset records.
//!
//! Binary layouts are little-endian and fully length-checked: a reader either
//! reconstructs the exact bytes that were written or fails with a precise
//! error (bad magic, unknown version, truncation, trailing bytes). All writes
//! go through a temp-file-plus-rename so a crash never leaves a torn file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use serde::{Deserialize, Serialize};

use crate::disruptor::DisruptorParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::surrogate::{Role, SurrogateParams, TokenSequence, Vocab};
use crate::tensor::{Matrix, Tensor3};
use crate::train::{AdamState, TrainItem};

/// First four bytes of a feature file.
pub const FEATURE_MAGIC: &[u8; 4] = b"SSCD";
/// First four bytes of a checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCP";
/// Current feature-file format version.
pub const FEATURE_VERSION: u32 = 1;
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header size of a feature file in bytes: magic + version + three dims.
pub const FEATURE_HEADER_LEN: u64 = 20;

/// Total size in bytes of a feature file with the given dimensions.
pub fn feature_file_len(t: usize, n: usize, d: usize) -> u64 {
    FEATURE_HEADER_LEN + 4 * (t as u64) * (n as u64) * (d as u64)
}

/// Writes bytes to `path` atomically: temp file in the same directory, then
/// rename. Parent directories are created as needed.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp.{}", name.to_string_lossy(), process::id()));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn read_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn read_u64(bytes: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
}

fn read_f64(bytes: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
}

fn dim_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| Error::Parameter(format!("{what} = {value} does not fit the header field")))
}

/// Serializes a feature tensor. The payload is binary32, so values are
/// rounded to that grid on the way out; tensors produced by the synthetic
/// generator are already on it and survive byte-exactly.
pub fn write_features<T: Scalar>(path: &Path, h: &Tensor3<T>) -> Result<()> {
    let (t, n, d) = h.dims();
    if t == 0 || n == 0 || d == 0 {
        return Err(Error::Parameter(format!("refusing to write empty tensor {t}x{n}x{d}")));
    }
    let mut buf = Vec::with_capacity(feature_file_len(t, n, d) as usize);
    buf.extend_from_slice(FEATURE_MAGIC);
    push_u32(&mut buf, FEATURE_VERSION);
    push_u32(&mut buf, dim_u32(t, "frame count")?);
    push_u32(&mut buf, dim_u32(n, "tokens per frame")?);
    push_u32(&mut buf, dim_u32(d, "feature dim")?);
    for &v in h.data() {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    atomic_write(path, &buf)
}

/// Parses a feature file, validating the header before touching the payload.
pub fn read_features<T: Scalar>(path: &Path) -> Result<Tensor3<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if (bytes.len() as u64) < FEATURE_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: FEATURE_HEADER_LEN,
            found: bytes.len() as u64,
        });
    }
    let version = read_u32(&bytes, 4);
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let t = read_u32(&bytes, 8) as usize;
    let n = read_u32(&bytes, 12) as usize;
    let d = read_u32(&bytes, 16) as usize;
    if t == 0 || n == 0 || d == 0 {
        return Err(Error::Malformed(format!(
            "feature file {} declares zero dimension {t}x{n}x{d}",
            path.display()
        )));
    }
    let count = (t as u64) * (n as u64) * (d as u64);
    if count > (1 << 32) {
        return Err(Error::Malformed(format!(
            "feature file {} declares implausible size {t}x{n}x{d}",
            path.display()
        )));
    }
    let expected = feature_file_len(t, n, d);
    match (bytes.len() as u64).cmp(&expected) {
        std::cmp::Ordering::Less => {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len() as u64,
            })
        }
        std::cmp::Ordering::Greater => {
            return Err(Error::TrailingBytes { path: path.to_path_buf() })
        }
        std::cmp::Ordering::Equal => {}
    }
    let mut data = Vec::with_capacity(count as usize);
    let mut off = FEATURE_HEADER_LEN as usize;
    for _ in 0..count {
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        data.push(T::from_f64_lossy(v as f64));
        off += 4;
    }
    Tensor3::from_vec(t, n, d, data)
}

/// A training snapshot: everything needed to resume or decode, with enough
/// config echo to catch mismatched reloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// Training seed the run was launched with.
    pub seed: u64,
    /// Walk softmax temperature the disruptor was trained against.
    pub temperature: T,
    /// Semantic-term weight the disruptor was trained against.
    pub lambda: T,
    pub disruptor: DisruptorParams<T>,
    pub surrogate: SurrogateParams<T>,
    /// Optimizer moments, present when the run intends to be resumable.
    pub optimizer: Option<AdamState<T>>,
}

/// Serializes a checkpoint. Parameters are stored as binary64, so `f64`
/// checkpoints round-trip bit-exactly.
pub fn write_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let d = ck.disruptor.d();
    let d_h = ck.disruptor.d_h();
    if ck.surrogate.d() != d {
        return Err(Error::shape(
            "write_checkpoint",
            format!("disruptor width {d} vs projector width {}", ck.surrogate.d()),
        ));
    }
    ck.surrogate.validate()?;
    let flat = ck.disruptor.flatten();
    if let Some(opt) = &ck.optimizer {
        if opt.m.len() != flat.len() || opt.v.len() != flat.len() {
            return Err(Error::Parameter(format!(
                "optimizer state length {}/{} does not match {} parameters",
                opt.m.len(),
                opt.v.len(),
                flat.len()
            )));
        }
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION);
    push_u64(&mut buf, ck.seed);
    push_u64(&mut buf, ck.surrogate.seed);
    push_u32(&mut buf, dim_u32(d, "feature dim")?);
    push_u32(&mut buf, dim_u32(d_h, "hidden dim")?);
    push_u32(&mut buf, dim_u32(ck.surrogate.d_lm(), "model dim")?);
    push_u32(&mut buf, dim_u32(ck.surrogate.vocab_size(), "vocab size")?);
    push_f64(&mut buf, ck.temperature.to_f64_lossy());
    push_f64(&mut buf, ck.lambda.to_f64_lossy());
    for v in &flat {
        push_f64(&mut buf, v.to_f64_lossy());
    }
    for m in [&ck.surrogate.embed, &ck.surrogate.proj, &ck.surrogate.mix, &ck.surrogate.out] {
        for &v in m.data() {
            push_f64(&mut buf, v.to_f64_lossy());
        }
    }
    match &ck.optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            push_u64(&mut buf, opt.step);
            for v in &opt.m {
                push_f64(&mut buf, v.to_f64_lossy());
            }
            for v in &opt.v {
                push_f64(&mut buf, v.to_f64_lossy());
            }
        }
    }
    atomic_write(path, &buf)
}

/// Parses a checkpoint, validating header, lengths and parameter finiteness.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    // magic + version + two seeds + four dims + two f64 knobs
    let prelude = 4 + 4 + 8 + 8 + 16 + 16;
    if bytes.len() < prelude {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: prelude as u64,
            found: bytes.len() as u64,
        });
    }
    let version = read_u32(&bytes, 4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let seed = read_u64(&bytes, 8);
    let surrogate_seed = read_u64(&bytes, 16);
    let d = read_u32(&bytes, 24) as usize;
    let d_h = read_u32(&bytes, 28) as usize;
    let d_lm = read_u32(&bytes, 32) as usize;
    let v_sz = read_u32(&bytes, 36) as usize;
    if d == 0 || d_h == 0 || d_lm == 0 || v_sz == 0 {
        return Err(Error::Malformed(format!(
            "checkpoint {} declares zero dimension",
            path.display()
        )));
    }
    let temperature = T::from_f64_lossy(read_f64(&bytes, 40));
    let lambda = T::from_f64_lossy(read_f64(&bytes, 48));

    let dp_count = DisruptorParams::<T>::param_count_for(d, d_h);
    let sp_count = v_sz * d_lm + d * d_lm + d_lm * d_lm + d_lm * v_sz;
    let body = prelude as u64 + 8 * (dp_count as u64 + sp_count as u64) + 1;
    if (bytes.len() as u64) < body {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: body,
            found: bytes.len() as u64,
        });
    }

    let mut off = prelude;
    let take_vec = |count: usize, off: &mut usize| -> Vec<T> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(T::from_f64_lossy(read_f64(&bytes, *off)));
            *off += 8;
        }
        out
    };
    let flat = take_vec(dp_count, &mut off);
    let embed = Matrix::from_vec(v_sz, d_lm, take_vec(v_sz * d_lm, &mut off))?;
    let proj = Matrix::from_vec(d, d_lm, take_vec(d * d_lm, &mut off))?;
    let mix = Matrix::from_vec(d_lm, d_lm, take_vec(d_lm * d_lm, &mut off))?;
    let out = Matrix::from_vec(d_lm, v_sz, take_vec(d_lm * v_sz, &mut off))?;

    let has_opt = bytes[off];
    off += 1;
    let optimizer = match has_opt {
        0 => None,
        1 => {
            let expected = body + 8 + 16 * dp_count as u64;
            if (bytes.len() as u64) < expected {
                return Err(Error::Truncated {
                    path: path.to_path_buf(),
                    expected,
                    found: bytes.len() as u64,
                });
            }
            let step = read_u64(&bytes, off);
            off += 8;
            let m = take_vec(dp_count, &mut off);
            let v = take_vec(dp_count, &mut off);
            Some(AdamState { m, v, step })
        }
        other => {
            return Err(Error::Malformed(format!(
                "checkpoint {}: optimizer flag must be 0 or 1, got {other}",
                path.display()
            )))
        }
    };
    if off != bytes.len() {
        return Err(Error::TrailingBytes { path: path.to_path_buf() });
    }

    let disruptor = DisruptorParams::from_flat(d, d_h, &flat)?;
    let surrogate = SurrogateParams { embed, proj, mix, out, seed: surrogate_seed };
    surrogate.validate()?;
    if !disruptor.is_finite() {
        return Err(Error::Numerical(format!(
            "checkpoint {} holds non-finite parameters",
            path.display()
        )));
    }
    Ok(Checkpoint { seed, temperature, lambda, disruptor, surrogate, optimizer })
}

/// One training example as stored in a dataset file (one JSON object per
/// line). `feature_path` is resolved relative to the dataset file itself
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub feature_path: String,
    pub prompt: Vec<usize>,
    pub answer: Vec<usize>,
}

/// Writes records as line-delimited JSON, atomically.
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Malformed(format!("dataset record {}: {e}", rec.id)))?;
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Parses a dataset file; blank lines are ignored, anything else must parse.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| {
            Error::Malformed(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Resolves a record's feature path against the dataset file's directory.
pub fn resolve_feature_path(dataset_path: &Path, record: &DatasetRecord) -> PathBuf {
    let p = Path::new(&record.feature_path);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match dataset_path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

/// Loads a dataset into memory: reads every referenced feature file and
/// validates all token ids against the vocabulary.
pub fn load_items<T: Scalar>(dataset_path: &Path, vocab: &Vocab) -> Result<Vec<TrainItem<T>>> {
    let records = read_dataset(dataset_path)?;
    let mut items = Vec::with_capacity(records.len());
    for rec in &records {
        let features = read_features(&resolve_feature_path(dataset_path, rec))?;
        let prompt = TokenSequence::new(rec.prompt.clone(), Role::Prompt, vocab)
            .map_err(|e| Error::Vocab(format!("record {}: {e}", rec.id)))?;
        let answer = TokenSequence::new(rec.answer.clone(), Role::Answer, vocab)
            .map_err(|e| Error::Vocab(format!("record {}: {e}", rec.id)))?;
        items.push(TrainItem { features, prompt, answer });
    }
    Ok(items)
}
