//! Off-chain data handling: skew-constrained splitting into subsets,
//! replication, chunk hashing and nonces.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::digest::{prf_u64, seeded_permutation, Digest};
use crate::fedtrain::Sample;

pub const NONCE_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("split constraints cannot be met: {0}")]
    Infeasible(String),
    #[error("nonce must be {NONCE_LEN} bytes, got {0}")]
    BadNonce(usize),
    #[error("cannot parse chunk: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub features: Vec<f64>,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<Row>,
    pub label_count: u32,
}

impl LabeledDataset {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.len())
    }

    fn check(&self) -> Result<(), DataError> {
        if self.label_count < 2 {
            return Err(DataError::BadShape("need at least two labels".into()));
        }
        if self.rows.is_empty() {
            return Err(DataError::BadShape("dataset is empty".into()));
        }
        let dim = self.dim();
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != dim {
                return Err(DataError::BadShape(format!("row {i} has {} features, expected {dim}", r.features.len())));
            }
            if r.label >= self.label_count {
                return Err(DataError::BadShape(format!("row {i} has label {} >= {}", r.label, self.label_count)));
            }
        }
        Ok(())
    }

    pub fn label_totals(&self) -> Vec<usize> {
        let mut totals = vec![0; self.label_count as usize];
        for r in &self.rows {
            totals[r.label as usize] += 1;
        }
        totals
    }
}

/// One privacy-preserving subset. `row_ids` are indices into the source
/// dataset, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub subset_index: usize,
    pub row_ids: Vec<usize>,
    pub rows: Vec<Row>,
    pub chunk_bytes: Vec<u8>,
}

impl Chunk {
    fn new(subset_index: usize, mut row_ids: Vec<usize>, data: &LabeledDataset) -> Chunk {
        row_ids.sort_unstable();
        let rows: Vec<Row> = row_ids.iter().map(|&i| data.rows[i].clone()).collect();
        let chunk_bytes = chunk_csv(&rows);
        Chunk {
            subset_index,
            row_ids,
            rows,
            chunk_bytes,
        }
    }

    pub fn labels(&self) -> BTreeSet<u32> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn count_label(&self, label: u32) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.rows.iter().map(Sample::from).collect()
    }
}

fn format_real(x: f64) -> String {
    // 17 significant digits round-trips every finite double.
    format!("{x:.16e}")
}

/// CSV serialization: features at 17 significant digits, label last.
pub fn chunk_csv(rows: &[Row]) -> Vec<u8> {
    let mut out = String::new();
    for r in rows {
        for x in &r.features {
            out.push_str(&format_real(*x));
            out.push(',');
        }
        out.push_str(&r.label.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

pub fn parse_chunk_csv(bytes: &[u8]) -> Result<Vec<Row>, DataError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DataError::Parse(e.to_string()))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let mut fields: Vec<&str> = line.split(',').collect();
            let label = fields
                .pop()
                .and_then(|l| l.parse().ok())
                .ok_or_else(|| DataError::Parse(format!("line {i}: bad label")))?;
            let features = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DataError::Parse(format!("line {i}: {e}")))?;
            Ok(Row { features, label })
        })
        .collect()
}

/// Splits `data` into `m` disjoint chunks such that no chunk holds every
/// label and no chunk holds more than half of any label's rows.
///
/// Chunk `i` never receives label `i mod C`. Each label's rows are shuffled
/// with a seeded permutation and dealt round-robin over the chunks that
/// accept the label, starting at a seeded offset.
pub fn split(data: &LabeledDataset, m: usize, seed: &[u8]) -> Result<Vec<Chunk>, DataError> {
    if m < 2 {
        return Err(DataError::BadShape(format!("m must be at least 2, got {m}")));
    }
    data.check()?;
    let c = data.label_count as usize;
    let totals = data.label_totals();
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); m];

    for label in 0..c {
        let rows: Vec<usize> = (0..data.rows.len())
            .filter(|&i| data.rows[i].label as usize == label)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let accepting: Vec<usize> = (0..m).filter(|i| i % c != label).collect();
        // Round-robin puts ceil(N/k) rows in the fullest chunk, the least
        // any deal can manage.
        if accepting.is_empty() || 2 * totals[label].div_ceil(accepting.len()) > totals[label] {
            return Err(DataError::Infeasible(format!(
                "label {label} has {} rows but only {} chunk(s) may hold it",
                totals[label],
                accepting.len()
            )));
        }
        let label_seed = [seed, b"|label|", &(label as u64).to_be_bytes()].concat();
        let order = seeded_permutation(&label_seed, rows.len());
        let start = (prf_u64(&label_seed, u64::MAX) % accepting.len() as u64) as usize;
        for (k, &pos) in order.iter().enumerate() {
            assigned[accepting[(start + k) % accepting.len()]].push(rows[pos]);
        }
    }

    if let Some(empty) = assigned.iter().position(Vec::is_empty) {
        return Err(DataError::Infeasible(format!("chunk {empty} would be empty")));
    }
    let chunks: Vec<Chunk> = assigned
        .into_iter()
        .enumerate()
        .map(|(i, ids)| Chunk::new(i, ids, data))
        .collect();
    check_split(data, &chunks).map_err(DataError::Infeasible)?;
    Ok(chunks)
}

/// Verifies partition and skew constraints by direct counting.
pub fn check_split(data: &LabeledDataset, chunks: &[Chunk]) -> Result<(), String> {
    let mut seen = vec![false; data.rows.len()];
    for chunk in chunks {
        for &i in &chunk.row_ids {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(format!("row {i} missing from dataset or duplicated"));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err("rows are not fully covered".into());
    }
    let totals = data.label_totals();
    for chunk in chunks {
        if chunk.labels().len() >= data.label_count as usize {
            return Err(format!("chunk {} holds every label", chunk.subset_index));
        }
        for (label, &total) in totals.iter().enumerate() {
            if 2 * chunk.count_label(label as u32) > total {
                return Err(format!(
                    "chunk {} holds more than half of label {label}",
                    chunk.subset_index
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaAssignment {
    pub subset_index: usize,
    pub replica: usize,
    pub chunk_bytes: Vec<u8>,
}

/// m×n plan: every subset copied `n` times, ordered by subset then replica.
pub fn replicate(chunks: &[Chunk], n: usize) -> Vec<ReplicaAssignment> {
    chunks
        .iter()
        .flat_map(|chunk| {
            (0..n).map(move |replica| ReplicaAssignment {
                subset_index: chunk.subset_index,
                replica,
                chunk_bytes: chunk.chunk_bytes.clone(),
            })
        })
        .collect()
}

/// Hash commitment to a payload: `SHA-256(payload || nonce)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commitment {
    pub hash: String,
    pub nonce: String,
}

pub fn commit(payload: &[u8], nonce: &[u8]) -> Result<Commitment, DataError> {
    if nonce.len() != NONCE_LEN {
        return Err(DataError::BadNonce(nonce.len()));
    }
    Ok(Commitment {
        hash: Digest::of_parts(&[payload, nonce]).to_hex(),
        nonce: hex::encode(nonce),
    })
}

/// Recomputes the commitment from the payload and the declared nonce.
pub fn verify_commitment(hash: &str, payload: &[u8], nonce_hex: &str) -> bool {
    hex::decode(nonce_hex)
        .ok()
        .and_then(|nonce| commit(payload, &nonce).ok())
        .is_some_and(|c| c.hash == hash)
}

/// `SHA-256(actor_seed || counter as u64 big-endian)[..16]`.
pub fn gen_nonce(actor_seed: &[u8], counter: u64) -> [u8; NONCE_LEN] {
    let d = Digest::of_parts(&[actor_seed, &counter.to_be_bytes()]);
    let mut nonce = [0u8; NONCE_LEN];
    nonce.copy_from_slice(&d.as_bytes()[..NONCE_LEN]);
    nonce
}
