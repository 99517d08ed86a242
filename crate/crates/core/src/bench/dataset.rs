use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IngestIssue, Result};
use crate::pipeline::{permutation, InputRecord, Mode, QualityInput};
use crate::rng::{mix_seed, CounterRng, GaussianStream};
use crate::tensor::Tensor;

/// Image shape of the synthetic testbed.
pub const SYNTH_SHAPE: [usize; 3] = [3, 8, 8];
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const MOS_JITTER: f64 = 0.02;
/// Standard deviation of additive noise at severity 1.
pub const MAX_NOISE_STD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded split with `round(train_fraction · n)` training indices, each
    /// side sorted ascending.
    pub fn seeded(n: usize, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside [0, 1]")));
        }
        let order = permutation(n, mix_seed(seed, 0x5e1));
        let n_train = (n as f64 * train_fraction).round() as usize;
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok(Self { train, test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    Noise,
    Blur,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityDataset {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub records: Vec<InputRecord>,
    pub split: Split,
    /// Per-record distortion severity, known for synthetic data only.
    pub severities: Option<Vec<f64>>,
}

impl QualityDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<InputRecord> {
        idx.iter().map(|&i| self.records[i].clone()).collect()
    }

    pub fn train_records(&self) -> Vec<InputRecord> {
        self.subset(&self.split.train)
    }

    pub fn test_records(&self) -> Vec<InputRecord> {
        self.subset(&self.split.test)
    }

    /// SHA-256 over mode, tensors and MOS values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.mode.to_string().as_bytes());
        for r in &self.records {
            let images: Vec<&Tensor> = match &r.input {
                QualityInput::Single(x) => vec![x],
                QualityInput::Pair { reference, distorted } => vec![reference, distorted],
            };
            for t in images {
                for &d in t.shape() {
                    h.update((d as u64).to_le_bytes());
                }
                for v in t.data() {
                    h.update(v.to_le_bytes());
                }
            }
            h.update(r.mos.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn uniform(s: &mut GaussianStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * s.next_uniform()
}

/// Period of the checkerboard component, in pixels.
pub const CHECKER_PERIOD: usize = 4;
pub const CHECKER_AMPLITUDE: f64 = 0.25;

/// Seeded low-frequency sinusoid over a fixed-contrast checkerboard. The
/// fixed checkerboard keeps blur severity observable without a reference.
fn base_texture(s: &mut GaussianStream) -> Tensor {
    let [c, h, w] = SYNTH_SHAPE;
    let fx = uniform(s, 0.2, 0.8);
    let fy = uniform(s, 0.2, 0.8);
    let phase = uniform(s, 0.0, std::f64::consts::TAU);
    let amp = uniform(s, 0.05, 0.15);
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let mean = uniform(s, 0.45, 0.55);
        for y in 0..h {
            for x in 0..w {
                let wave = (fx * x as f64 + fy * y as f64 + phase).sin();
                let check = if (x / CHECKER_PERIOD + y / CHECKER_PERIOD).is_multiple_of(2) { 1.0 } else { -1.0 };
                data.push(mean + amp * wave + CHECKER_AMPLITUDE * check);
            }
        }
    }
    Tensor::from_parts(SYNTH_SHAPE.to_vec(), data)
}

/// 3×3 mean filter per channel with edge replication.
pub fn box_blur(img: &Tensor) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        acc += src[(ch * h + yy) * w + xx];
                    }
                }
                out[(ch * h + y) * w + x] = acc / 9.0;
            }
        }
    }
    Tensor::from_parts(img.shape().to_vec(), out)
}

/// Applies `kind` at `severity ∈ [0, 1]`. Blur interpolates towards a
/// twice-blurred copy; noise adds `N(0, (0.25·s)²)` per pixel.
pub fn distort(img: &Tensor, kind: Distortion, severity: f64, s: &mut GaussianStream) -> Tensor {
    match kind {
        Distortion::Noise => {
            let data = img.data().iter().map(|v| v + MAX_NOISE_STD * severity * s.next_normal()).collect();
            Tensor::from_parts(img.shape().to_vec(), data)
        }
        Distortion::Blur => {
            let blurred = box_blur(&box_blur(img));
            let data = img.data().iter().zip(blurred.data()).map(|(a, b)| (1.0 - severity) * a + severity * b).collect();
            Tensor::from_parts(img.shape().to_vec(), data)
        }
    }
}

/// Procedural textures with graded noise or blur; `MOS = 1 − s` plus
/// uniform jitter of ±0.02, clamped to [0, 1].
pub fn synth_dataset(seed: u64, n_items: usize, mode: Mode) -> Result<QualityDataset> {
    if n_items < 10 {
        return Err(Error::InvalidArgument(format!("synthetic dataset needs at least 10 items, got {n_items}")));
    }
    let rng = CounterRng::new(mix_seed(seed, 0x5947));
    let mut records = Vec::with_capacity(n_items);
    let mut severities = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let mut s = rng.stream(i as u64);
        let base = base_texture(&mut s);
        let kind = if i % 2 == 0 { Distortion::Noise } else { Distortion::Blur };
        let severity = s.next_uniform();
        let distorted = distort(&base, kind, severity, &mut s);
        let mos = (1.0 - severity + uniform(&mut s, -MOS_JITTER, MOS_JITTER)).clamp(0.0, 1.0);
        let input = match mode {
            Mode::Nr => QualityInput::Single(distorted),
            Mode::Fr => QualityInput::Pair { reference: base, distorted },
        };
        records.push(InputRecord { input, mos });
        severities.push(severity);
    }
    Ok(QualityDataset {
        name: format!("synthetic-{}", mode.to_string().to_ascii_lowercase()),
        seed,
        mode,
        split: Split::seeded(n_items, DEFAULT_TRAIN_FRACTION, seed)?,
        records,
        severities: Some(severities),
    })
}

// ---- tensor files ----

const MAGIC: &[u8; 4] = b"QTNS";
const HEADER_LEN: usize = 16;
const MAX_RANK: usize = 4;

/// 16-byte header (`"QTNS"`, rank as u32, four u16 extents, all little
/// endian) followed by the data as little-endian f64.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if t.shape().len() > MAX_RANK || t.shape().iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::InvalidArgument(format!("shape {:?} does not fit the tensor file header", t.shape())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for i in 0..MAX_RANK {
        let d = t.shape().get(i).copied().unwrap_or(0) as u16;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: String| Error::InvalidTensor(m);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing QTNS header".into()));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(bad(format!("unsupported rank {rank}")));
    }
    let shape: Vec<usize> =
        (0..rank).map(|i| u16::from_le_bytes([bytes[8 + 2 * i], bytes[9 + 2 * i]]) as usize).collect();
    let len: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * len {
        return Err(bad(format!("shape {shape:?} needs {} data bytes, found {}", 8 * len, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

// ---- CSV ingestion ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Raw MOS range mapped linearly onto [0, 1]. `None` keeps values
    /// already inside [0, 1] and otherwise uses the observed min and max.
    pub mos_range: Option<(f64, f64)>,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { mos_range: None, split_seed: 0, train_fraction: DEFAULT_TRAIN_FRACTION }
    }
}

pub fn load_dataset(path: &Path) -> Result<QualityDataset> {
    load_dataset_with(path, &LoadOptions::default())
}

/// Reads `path,mos` (NR) or `ref_path,dist_path,mos` (FR); image paths are
/// relative to the CSV's directory. Every problem is collected before
/// failing.
pub fn load_dataset_with(path: &Path, opts: &LoadOptions) -> Result<QualityDataset> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let mode = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["path", "mos"] => Mode::Nr,
        ["ref_path", "dist_path", "mos"] => Mode::Fr,
        other => {
            return Err(Error::Ingest(vec![IngestIssue {
                line: 1,
                message: format!("expected header `path,mos` or `ref_path,dist_path,mos`, found `{}`", other.join(",")),
            }]))
        }
    };
    let mut issues = Vec::new();
    let mut rows: Vec<(QualityInput, f64)> = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issues.push(IngestIssue { line, message: e.to_string() });
                continue;
            }
        };
        if row.len() != header.len() {
            issues.push(IngestIssue { line, message: format!("expected {} fields, found {}", header.len(), row.len()) });
            continue;
        }
        let mos = match row[header.len() - 1].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                issues.push(IngestIssue { line, message: format!("invalid MOS `{}`", &row[header.len() - 1]) });
                continue;
            }
        };
        let mut images = Vec::new();
        for field in row.iter().take(header.len() - 1) {
            match read_tensor(&root.join(field)) {
                Ok(t) => images.push(t),
                Err(e) => issues.push(IngestIssue { line, message: format!("{field}: {e}") }),
            }
        }
        if images.len() != header.len() - 1 {
            continue;
        }
        let s = shape.get_or_insert_with(|| images[0].shape().to_vec());
        if images.iter().any(|t| t.shape() != s.as_slice()) {
            issues.push(IngestIssue { line, message: format!("image shape differs from the first record's {s:?}") });
            continue;
        }
        let input = match mode {
            Mode::Nr => QualityInput::Single(images.pop().unwrap()),
            Mode::Fr => {
                let distorted = images.pop().unwrap();
                QualityInput::Pair { reference: images.pop().unwrap(), distorted }
            }
        };
        rows.push((input, mos));
    }
    if rows.is_empty() && issues.is_empty() {
        issues.push(IngestIssue { line: 0, message: "no records".into() });
    }
    if !issues.is_empty() {
        return Err(Error::Ingest(issues));
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let scaled = rescale_mos(&raw, opts.mos_range)?;
    let n = rows.len();
    let records = rows.into_iter().zip(scaled).map(|((input, _), mos)| InputRecord { input, mos }).collect();
    Ok(QualityDataset {
        name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        seed: opts.split_seed,
        mode,
        records,
        split: Split::seeded(n, opts.train_fraction, opts.split_seed)?,
        severities: None,
    })
}

/// Linear map of `range` (or the observed range) onto [0, 1].
pub fn rescale_mos(raw: &[f64], range: Option<(f64, f64)>) -> Result<Vec<f64>> {
    let (lo, hi) = match range {
        Some(r) => r,
        None if raw.iter().all(|v| (0.0..=1.0).contains(v)) => return Ok(raw.to_vec()),
        None => {
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("degenerate MOS range [{lo}, {hi}]")));
    }
    Ok(raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Ingest(vec![IngestIssue { line: 0, message: format!("{}: {e}", path.display()) }])
}

/// Writes `dataset.csv` and one tensor file per image under `dir`.
pub fn write_dataset(dataset: &QualityDataset, dir: &Path) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let csv_path = dir.join("dataset.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    let header: &[&str] = match dataset.mode {
        Mode::Nr => &["path", "mos"],
        Mode::Fr => &["ref_path", "dist_path", "mos"],
    };
    w.write_record(header).map_err(|e| csv_error(&csv_path, e))?;
    for (i, r) in dataset.records.iter().enumerate() {
        let mut fields = Vec::new();
        let images: Vec<(&str, &Tensor)> = match &r.input {
            QualityInput::Single(x) => vec![("img", x)],
            QualityInput::Pair { reference, distorted } => vec![("ref", reference), ("dist", distorted)],
        };
        for (tag, t) in images {
            let rel = format!("images/{i:05}_{tag}.qtns");
            write_tensor(t, &dir.join(&rel))?;
            fields.push(rel);
        }
        fields.push(format!("{}", r.mos));
        w.write_record(&fields).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}
