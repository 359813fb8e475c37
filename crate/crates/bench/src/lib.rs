//! Shared inputs for the benchmarks.

use ppmarket::dataplane::{LabeledDataset, Row};
use ppmarket::fedtrain::Sample;
use ppmarket::ledger::{TransactionEnvelope, TxType};

/// Member-creation envelopes spaced `gap_ms` apart.
pub fn envelopes(count: usize, gap_ms: u64) -> Vec<TransactionEnvelope> {
    (0..count)
        .map(|i| TransactionEnvelope::new(format!("bench-{i}"), TxType::CreateCO, "", vec![], i as u64 * gap_ms))
        .collect()
}

/// Balanced dataset with `labels` classes and a deterministic layout.
pub fn dataset(rows: usize, features: usize, labels: u32) -> LabeledDataset {
    LabeledDataset {
        rows: (0..rows)
            .map(|i| Row {
                features: (0..features).map(|j| ((i * 31 + j * 17) % 97) as f64 / 97.0).collect(),
                label: (i % labels as usize) as u32,
            })
            .collect(),
        label_count: labels,
    }
}

pub fn samples(data: &LabeledDataset) -> Vec<Sample> {
    data.rows.iter().map(Sample::from).collect()
}
