//! Frozen language and vision feature providers, plus the Gram-matrix
//! distillation losses built on them.
//!
//! Real encoder features enter through the feature-bank file format; when no
//! export is supplied, deterministic seeded stand-ins keep the pipeline
//! runnable end to end. Either way the providers are frozen: their outputs
//! never sit on a tape as parameters, so no gradient can reach them.

use std::collections::BTreeMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{val, DiffError, NodeId, Tape, Tensor};

pub const FEATURE_BANK_VERSION: u32 = 1;
const FEATURE_BANK_MAGIC: &[u8; 4] = b"EVFB";

/// Default prompt wording; `{}` is replaced by the class name.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "a photo of a {}";

#[derive(Debug, thiserror::Error)]
pub enum ClipError {
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("corrupt feature bank: {0}")]
    CorruptFile(String),
    #[error("feature bank has {found} rows, expected {expected}")]
    DimensionMismatch { found: usize, expected: usize },
    #[error("no precomputed feature for sample {0}")]
    MissingSample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// One unit-norm feature row per class prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureBank {
    features: Tensor,
    class_names: Vec<String>,
    prompt_template: String,
}

impl TextFeatureBank {
    /// Wraps raw rows, renormalizing each to unit length.
    pub fn from_rows(
        features: Tensor,
        class_names: Vec<String>,
        prompt_template: String,
    ) -> Result<Self, ClipError> {
        if features.rows() != class_names.len() {
            return Err(ClipError::InvalidConfig(format!(
                "{} feature rows for {} class names",
                features.rows(),
                class_names.len()
            )));
        }
        let features = val::l2_normalize_rows(&features);
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(ClipError::InvalidConfig("non-finite feature entries".into()));
        }
        Ok(TextFeatureBank { features, class_names, prompt_template })
    }

    pub fn k(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// K x D matrix of unit rows.
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn prompt(&self, class: usize) -> String {
        self.prompt_template.replace("{}", &self.class_names[class])
    }

    pub fn require_k(&self, k: usize) -> Result<(), ClipError> {
        if self.k() != k {
            return Err(ClipError::DimensionMismatch { found: self.k(), expected: k });
        }
        Ok(())
    }
}

/// Deterministic stand-in text features: seeded Gaussian rows made exactly
/// orthonormal by Gram-Schmidt. Distinct classes therefore start maximally
/// separated, which is all the distillation losses need from a bank.
pub fn stub_text_features(
    class_names: &[String],
    d: usize,
    seed: u64,
) -> Result<TextFeatureBank, ClipError> {
    let k = class_names.len();
    if k < 2 {
        return Err(ClipError::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    if d < k {
        return Err(ClipError::InvalidConfig(format!(
            "feature dim {d} cannot hold {k} orthonormal rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> =
            (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for u in &rows {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-10 {
            // A Gaussian draw landed (numerically) in the span of the
            // previous rows; draw again.
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        rows.push(v);
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    TextFeatureBank::from_rows(
        Tensor::from_vec(&[k, d], flat),
        class_names.to_vec(),
        DEFAULT_PROMPT_TEMPLATE.to_string(),
    )
}

/// Frozen visual feature provider. Either a seeded random projection applied
/// to flattened frames, or a table of externally computed vectors keyed by
/// sample id. Both run in value mode only, so adaptation can never update
/// them.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualEmbedder {
    Projection { matrix: Tensor },
    Precomputed { dim: usize, table: BTreeMap<String, Vec<f64>> },
}

impl VisualEmbedder {
    pub fn projection(input_dim: usize, d: usize, seed: u64) -> Result<Self, ClipError> {
        if input_dim == 0 || d == 0 {
            return Err(ClipError::InvalidConfig("projection dims must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let data: Vec<f64> = (0..input_dim * d)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        Ok(VisualEmbedder::Projection { matrix: Tensor::from_vec(&[input_dim, d], data) })
    }

    pub fn dim(&self) -> usize {
        match self {
            VisualEmbedder::Projection { matrix } => matrix.cols(),
            VisualEmbedder::Precomputed { dim, .. } => *dim,
        }
    }

    /// Unit-norm feature rows for a batch. Projection uses the frame rows;
    /// the precomputed table is keyed by the parallel sample ids.
    pub fn embed(&self, sample_ids: &[String], frames: &Tensor) -> Result<Tensor, ClipError> {
        match self {
            VisualEmbedder::Projection { matrix } => {
                if frames.cols() != matrix.rows() {
                    return Err(ClipError::InvalidConfig(format!(
                        "frame dim {} vs projection input {}",
                        frames.cols(),
                        matrix.rows()
                    )));
                }
                Ok(val::l2_normalize_rows(&val::matmul(frames, matrix)))
            }
            VisualEmbedder::Precomputed { dim, table } => {
                let mut flat = Vec::with_capacity(sample_ids.len() * dim);
                for id in sample_ids {
                    let row = table.get(id).ok_or_else(|| ClipError::MissingSample(id.clone()))?;
                    flat.extend_from_slice(row);
                }
                Ok(val::l2_normalize_rows(&Tensor::from_vec(&[sample_ids.len(), *dim], flat)))
            }
        }
    }
}

/// Row-softmax of the scaled self-similarity matrix `(F F^T) / tau`.
pub fn gram_softmax(f: &Tensor, tau: f64) -> Result<Tensor, ClipError> {
    if tau <= 0.0 {
        return Err(ClipError::InvalidTemperature(tau));
    }
    let mut gram = val::matmul_nt(f, f);
    gram.scale_assign(1.0 / tau);
    Ok(val::softmax_rows(&gram))
}

/// Tape version of [`gram_softmax`]; gradients flow through `f`.
pub fn gram_softmax_on_tape(tape: &mut Tape, f: NodeId, tau: f64) -> Result<NodeId, ClipError> {
    if tau <= 0.0 {
        return Err(ClipError::InvalidTemperature(tau));
    }
    let gram = tape.matmul_nt(f, f)?;
    let scaled = tape.scale(gram, 1.0 / tau);
    Ok(tape.softmax_rows(scaled)?)
}

/// Log of the teacher similarity distribution for fixed features, kept in
/// log space for the KL op.
fn teacher_log_gram(f: &Tensor, tau: f64) -> Result<Tensor, ClipError> {
    if tau <= 0.0 {
        return Err(ClipError::InvalidTemperature(tau));
    }
    let mut gram = val::matmul_nt(f, f);
    gram.scale_assign(1.0 / tau);
    Ok(val::log_softmax_rows(&gram))
}

/// Feature-level distillation: the student's sample-similarity distribution
/// (from source features) is pulled toward the frozen visual embedder's.
/// `f_vis` enters as a constant, so gradients reach only whatever produced
/// `f_s` on the tape.
pub fn loss_vkd(
    tape: &mut Tape,
    f_s: NodeId,
    f_vis: &Tensor,
    tau: f64,
) -> Result<NodeId, ClipError> {
    if tape.value(f_s).rows() != f_vis.rows() {
        return Err(DiffError::ShapeMismatch(format!(
            "{} student rows vs {} teacher rows",
            tape.value(f_s).rows(),
            f_vis.rows()
        ))
        .into());
    }
    let student_f = tape.l2_normalize_rows(f_s)?;
    let student = gram_softmax_on_tape(tape, student_f, tau)?;
    let teacher = tape.constant(teacher_log_gram(f_vis, tau)?);
    Ok(tape.kl_rows(student, teacher)?)
}

/// Prediction-level distillation. The student similarity comes from the
/// normalized prediction rows; the teacher re-embeds each sample as its
/// prediction-weighted mix of text features (predictions gradient-stopped),
/// so the two sides are comparable n x n matrices for any batch size.
pub fn loss_pkd(
    tape: &mut Tape,
    p: NodeId,
    bank: &TextFeatureBank,
    tau: f64,
) -> Result<NodeId, ClipError> {
    let pv = tape.value(p);
    val::check_distribution_rows(pv)
        .map_err(|(row, sum, min)| DiffError::NotADistribution { row, sum, min })?;
    if pv.cols() != bank.k() {
        return Err(DiffError::ShapeMismatch(format!(
            "{} prediction columns vs {} classes in the bank",
            pv.cols(),
            bank.k()
        ))
        .into());
    }
    let z = val::l2_normalize_rows(&val::matmul(pv, bank.features()));
    let student_f = tape.l2_normalize_rows(p)?;
    let student = gram_softmax_on_tape(tape, student_f, tau)?;
    let teacher = tape.constant(teacher_log_gram(&z, tau)?);
    Ok(tape.kl_rows(student, teacher)?)
}

/// Cumulative distillation loss: prediction-level plus feature-level.
pub fn loss_kd(
    tape: &mut Tape,
    f_s: NodeId,
    p: NodeId,
    f_vis: &Tensor,
    bank: &TextFeatureBank,
    tau: f64,
) -> Result<NodeId, ClipError> {
    let pkd = loss_pkd(tape, p, bank, tau)?;
    let vkd = loss_vkd(tape, f_s, f_vis, tau)?;
    Ok(tape.add(pkd, vkd)?)
}

/// What a feature bank file holds.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedBank {
    Text(TextFeatureBank),
    Visual(VisualEmbedder),
}

const KIND_TEXT: u8 = 0;
const KIND_VISUAL: u8 = 1;

/// Serializes a text bank: header, class-name table, prompt template, rows
/// as 32-bit reals, trailing CRC32. Little-endian throughout.
pub fn text_bank_to_bytes(bank: &TextFeatureBank) -> Vec<u8> {
    let mut out = header(KIND_TEXT, bank.k(), bank.dim());
    for name in bank.class_names() {
        push_str(&mut out, name);
    }
    push_str(&mut out, &bank.prompt_template);
    push_payload(&mut out, bank.features());
    finish(out)
}

/// Serializes precomputed visual features keyed by sample id.
pub fn visual_bank_to_bytes(dim: usize, table: &BTreeMap<String, Vec<f64>>) -> Vec<u8> {
    let mut out = header(KIND_VISUAL, table.len(), dim);
    for id in table.keys() {
        push_str(&mut out, id);
    }
    for row in table.values() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    finish(out)
}

fn header(kind: u8, rows: usize, dim: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_BANK_MAGIC);
    out.extend_from_slice(&FEATURE_BANK_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn push_payload(out: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn finish(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn load_feature_bank_bytes(bytes: &[u8]) -> Result<LoadedBank, ClipError> {
    if bytes.len() < 4 {
        return Err(ClipError::CorruptFile("too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(ClipError::CorruptFile("checksum mismatch".into()));
    }
    let mut cur = BankCursor { bytes: body, pos: 0 };
    if cur.take(4)? != FEATURE_BANK_MAGIC {
        return Err(ClipError::CorruptFile("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FEATURE_BANK_VERSION {
        return Err(ClipError::CorruptFile(format!("unsupported version {version}")));
    }
    let kind = cur.take(1)?[0];
    let rows = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let mut names = Vec::with_capacity(rows);
    for _ in 0..rows {
        names.push(cur.string()?);
    }
    match kind {
        KIND_TEXT => {
            let template = cur.string()?;
            let features = cur.payload(rows, dim)?;
            cur.expect_end()?;
            Ok(LoadedBank::Text(TextFeatureBank::from_rows(features, names, template)?))
        }
        KIND_VISUAL => {
            let features = cur.payload(rows, dim)?;
            cur.expect_end()?;
            let table = names
                .into_iter()
                .enumerate()
                .map(|(i, name)| (name, features.row(i).to_vec()))
                .collect();
            Ok(LoadedBank::Visual(VisualEmbedder::Precomputed { dim, table }))
        }
        other => Err(ClipError::CorruptFile(format!("unknown bank kind {other}"))),
    }
}

pub fn save_feature_bank(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), ClipError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn load_feature_bank(path: impl AsRef<Path>) -> Result<LoadedBank, ClipError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_feature_bank_bytes(&bytes)
}

struct BankCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BankCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClipError> {
        if self.pos + n > self.bytes.len() {
            return Err(ClipError::CorruptFile("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ClipError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ClipError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| ClipError::CorruptFile("name table is not UTF-8".into()))
    }

    fn payload(&mut self, rows: usize, dim: usize) -> Result<Tensor, ClipError> {
        let raw = self.take(rows * dim * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Tensor::from_vec(&[rows, dim], data))
    }

    fn expect_end(&self) -> Result<(), ClipError> {
        if self.pos != self.bytes.len() {
            return Err(ClipError::CorruptFile("trailing bytes".into()));
        }
        Ok(())
    }
}
