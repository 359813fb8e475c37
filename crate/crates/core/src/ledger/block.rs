use serde::{Deserialize, Serialize};

use super::envelope::TransactionEnvelope;
use super::LedgerError;
use crate::assets::canonical_json;
use crate::digest::Digest;

/// A transaction as recorded in a block, with its validation outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockTx {
    pub envelope: TransactionEnvelope,
    pub valid: bool,
    /// Chaincode error name for invalid transactions.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<BlockTx>,
    pub cut_time: u64,
    pub block_hash: Digest,
}

impl Block {
    pub fn genesis() -> Block {
        Block::seal(0, Digest::ZERO, Vec::new(), 0)
    }

    pub fn seal(height: u64, prev_hash: Digest, txs: Vec<BlockTx>, cut_time: u64) -> Block {
        let block_hash = Block::compute_hash(height, &prev_hash, &txs);
        Block {
            height,
            prev_hash,
            txs,
            cut_time,
            block_hash,
        }
    }

    /// `SHA-256(prev_hash || canonical_json(txs) || height as u64 big-endian)`.
    pub fn compute_hash(height: u64, prev_hash: &Digest, txs: &[BlockTx]) -> Digest {
        let body = canonical_json(&txs);
        Digest::of_parts(&[prev_hash.as_bytes(), &body, &height.to_be_bytes()])
    }

    pub fn to_ndjson_line(&self) -> String {
        String::from_utf8(canonical_json(self)).expect("canonical json is utf-8")
    }
}

/// Block log export: one canonical JSON block per line.
pub fn export_ndjson(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&b.to_ndjson_line());
        out.push('\n');
    }
    out
}

/// Parses an export. Every line must be the exact canonical encoding of the
/// block it decodes to, so byte-level edits that still parse are caught here
/// or by the hash checks in replay.
pub fn import_ndjson(text: &str) -> Result<Vec<Block>, LedgerError> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(line_no, line)| {
            let corrupt = |reason: String| LedgerError::CorruptChain {
                height: line_no as u64,
                reason,
            };
            let block: Block =
                serde_json::from_str(line).map_err(|e| corrupt(format!("unparseable block: {e}")))?;
            if block.to_ndjson_line() != line {
                return Err(corrupt("line is not in canonical form".into()));
            }
            Ok(block)
        })
        .collect()
}
