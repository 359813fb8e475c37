//! Toy federated learning over a linear model with squared-error loss.
//!
//! All reductions run over rows in ascending index order so that replicas
//! holding identical bytes produce bit-identical parameters.
//!
//! The transport mask is a non-cryptographic stand-in for model encryption:
//! it hides parameter values from casual inspection and keeps the data flow
//! of the protocol intact, nothing more.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::canonical_json;
use crate::dataplane::Row;
use crate::digest::{prf_u64, prf_unit, Digest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("chunk has no rows")]
    EmptyChunk,
    #[error("no models to average")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("aggregation weights must be positive and finite")]
    BadWeight,
    #[error("parameters must be finite")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("model was masked with key {expected}, not {got}")]
    WrongKey { expected: String, got: String },
    #[error("weight {0} exceeds the mask's exact range")]
    OutOfRange(usize),
    #[error("masked model is malformed")]
    Malformed,
}

/// One training example; `y` is the label regressed as a real.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl From<&Row> for Sample {
    fn from(r: &Row) -> Self {
        Sample {
            x: r.features.clone(),
            y: f64::from(r.label),
        }
    }
}

/// Linear-model weights, bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(features: usize) -> Self {
        ModelParams {
            weights: vec![0.0; features + 1],
        }
    }

    pub fn features(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let (w, bias) = self.weights.split_at(self.weights.len() - 1);
        let mut acc = 0.0;
        for (wi, xi) in w.iter().zip(x) {
            acc += wi * xi;
        }
        acc + bias[0]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub learning_rate: f64,
    pub local_epochs: u32,
}

fn check_dims(p: &ModelParams, samples: &[Sample]) -> Result<(), TrainError> {
    if p.weights.is_empty() {
        return Err(TrainError::DimensionMismatch { expected: 1, got: 0 });
    }
    let expected = p.features();
    match samples.iter().find(|s| s.x.len() != expected) {
        Some(s) => Err(TrainError::DimensionMismatch {
            expected,
            got: s.x.len(),
        }),
        None => Ok(()),
    }
}

/// Gradient of the mean squared error `(1/N) Σ (w·x + b − y)²`:
/// `(2/N) Σ r·[x, 1]` with residual `r = w·x + b − y`.
pub fn gradient(p: &ModelParams, samples: &[Sample]) -> Result<Vec<f64>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyChunk);
    }
    check_dims(p, samples)?;
    let d = p.features();
    let mut grad = vec![0.0; d + 1];
    for s in samples {
        let r = p.predict(&s.x) - s.y;
        for (g, x) in grad.iter_mut().zip(&s.x) {
            *g += r * x;
        }
        grad[d] += r;
    }
    let scale = 2.0 / samples.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// `local_epochs` full-batch gradient-descent steps.
pub fn local_train(p: &ModelParams, samples: &[Sample], spec: &TrainingSpec) -> Result<ModelParams, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyChunk);
    }
    check_dims(p, samples)?;
    let mut cur = p.clone();
    for _ in 0..spec.local_epochs {
        let grad = gradient(&cur, samples)?;
        for (w, g) in cur.weights.iter_mut().zip(&grad) {
            *w -= spec.learning_rate * g;
        }
    }
    if !cur.is_finite() {
        return Err(TrainError::NonFinite);
    }
    Ok(cur)
}

/// Coordinate-wise weighted mean, accumulated in input order.
pub fn fed_average(models: &[(ModelParams, f64)]) -> Result<ModelParams, TrainError> {
    let (first, _) = models.first().ok_or(TrainError::Empty)?;
    let len = first.weights.len();
    let mut acc = vec![0.0; len];
    let mut total = 0.0;
    for (m, w) in models {
        if m.weights.len() != len {
            return Err(TrainError::DimensionMismatch {
                expected: len,
                got: m.weights.len(),
            });
        }
        if !(*w > 0.0 && w.is_finite()) {
            return Err(TrainError::BadWeight);
        }
        for (a, x) in acc.iter_mut().zip(&m.weights) {
            *a += w * x;
        }
        total += w;
    }
    Ok(ModelParams {
        weights: acc.into_iter().map(|a| a / total).collect(),
    })
}

/// Mean squared error over `samples`.
pub fn evaluate(p: &ModelParams, samples: &[Sample]) -> Result<f64, TrainError> {
    check_dims(p, samples)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut sse = 0.0;
    for s in samples {
        let r = p.predict(&s.x) - s.y;
        sse += r * r;
    }
    Ok(sse / samples.len() as f64)
}

/// Masking key held by a model owner and shared with its cloud owners.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskKey {
    pub id: String,
    seed: [u8; 32],
}

/// Largest weight magnitude the mask inverts exactly.
pub const MASK_RANGE: f64 = 256.0;

impl MaskKey {
    pub fn derive(id: impl Into<String>, material: &[u8]) -> Self {
        MaskKey {
            id: id.into(),
            seed: *Digest::of_parts(&[b"mask-key|", material]).as_bytes(),
        }
    }

    /// Offset for coordinate `i`: magnitude in `[256, 512)`, random sign.
    fn offset(&self, i: usize) -> f64 {
        let magnitude = MASK_RANGE * (1.0 + prf_unit(&self.seed, 2 * i as u64));
        if prf_u64(&self.seed, 2 * i as u64 + 1) & 1 == 1 {
            -magnitude
        } else {
            magnitude
        }
    }

    fn stream(&self, len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        let mut block = 0u64;
        while out.len() < len {
            let d = Digest::of_parts(&[&self.seed, b"|locator|", &block.to_be_bytes()]);
            out.extend_from_slice(d.as_bytes());
            block += 1;
        }
        out.truncate(len);
        out
    }

    /// Encrypts an object-store locator for the key holder (XOR stream, hex).
    pub fn seal_locator(&self, locator: &str) -> String {
        let ks = self.stream(locator.len());
        hex::encode(locator.bytes().zip(ks).map(|(b, k)| b ^ k).collect::<Vec<_>>())
    }

    pub fn open_locator(&self, sealed: &str) -> Option<String> {
        let bytes = hex::decode(sealed).ok()?;
        let ks = self.stream(bytes.len());
        String::from_utf8(bytes.into_iter().zip(ks).map(|(b, k)| b ^ k).collect()).ok()
    }
}

/// Parameters offset by a key-derived vector.
///
/// `masked_weights[i] = fl(p[i] + o[i])` and `residuals[i]` is the rounding
/// error of that sum, so `p[i]` is recovered exactly: with `|o[i]| >= |p[i]|`
/// both `fl(masked - o)` and the residual are exact (Fast2Sum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskedModel {
    pub mask_id: String,
    pub masked_weights: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl MaskedModel {
    /// Canonical model-file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MaskedModel, MaskError> {
        let mm: MaskedModel = serde_json::from_slice(bytes).map_err(|_| MaskError::Malformed)?;
        if mm.masked_weights.len() != mm.residuals.len() {
            return Err(MaskError::Malformed);
        }
        Ok(mm)
    }
}

pub fn mask(p: &ModelParams, key: &MaskKey) -> Result<MaskedModel, MaskError> {
    let mut masked_weights = Vec::with_capacity(p.weights.len());
    let mut residuals = Vec::with_capacity(p.weights.len());
    for (i, &w) in p.weights.iter().enumerate() {
        if !(w.abs() <= MASK_RANGE) {
            return Err(MaskError::OutOfRange(i));
        }
        let o = key.offset(i);
        let s = o + w;
        let z = s - o;
        masked_weights.push(s);
        residuals.push(w - z);
    }
    Ok(MaskedModel {
        mask_id: key.id.clone(),
        masked_weights,
        residuals,
    })
}

pub fn unmask(mm: &MaskedModel, key: &MaskKey) -> Result<ModelParams, MaskError> {
    if mm.mask_id != key.id {
        return Err(MaskError::WrongKey {
            expected: mm.mask_id.clone(),
            got: key.id.clone(),
        });
    }
    if mm.masked_weights.len() != mm.residuals.len() {
        return Err(MaskError::Malformed);
    }
    let weights = mm
        .masked_weights
        .iter()
        .zip(&mm.residuals)
        .enumerate()
        .map(|(i, (&s, &e))| {
            let z = s - key.offset(i);
            // z == 0 only when the weight was a signed zero; e keeps its sign.
            if z == 0.0 {
                e
            } else {
                z + e
            }
        })
        .collect();
    Ok(ModelParams { weights })
}

/// `SHA-256(model file bytes || nonce)`.
pub fn model_hash(mm: &MaskedModel, nonce: &[u8]) -> String {
    Digest::of_parts(&[&mm.to_bytes(), nonce]).to_hex()
}

/// Hash of the current model published on a model asset (no nonce).
pub fn published_model_hash(mm: &MaskedModel) -> String {
    Digest::of(&mm.to_bytes()).to_hex()
}
