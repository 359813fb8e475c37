use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataplane::{LabeledDataset, Row};
use crate::digest::{prf_unit, Digest};
use crate::fedtrain::TrainingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    DO,
    CO,
    MO,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FraudStrategy {
    #[default]
    None,
    /// Replays a sibling's posted model hash and nonce instead of training.
    CopyHash,
    /// Uploads the incoming model with a small actor-specific offset.
    LazyModel,
    /// Declares a data commitment over altered chunk bytes.
    WrongData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub role: Role,
    /// Off-chain address of the actor. Never written to the ledger.
    pub endpoint: String,
    #[serde(default)]
    pub fraud: FraudStrategy,
    /// DO only: endpoint of a cloud owner that receives altered chunk bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bad_chunk_to: Option<String>,
}

impl RosterEntry {
    pub fn new(role: Role, endpoint: impl Into<String>) -> Self {
        RosterEntry {
            role,
            endpoint: endpoint.into(),
            fraud: FraudStrategy::None,
            bad_chunk_to: None,
        }
    }

    pub fn with_fraud(mut self, fraud: FraudStrategy) -> Self {
        self.fraud = fraud;
        self
    }
}

/// Synthetic labelled data: `labels` balanced classes whose features are
/// shifted by class, regressed on the class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataGen {
    pub rows: usize,
    pub features: usize,
    pub labels: u32,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.1
}

impl DataGen {
    pub fn generate(&self, seed: &[u8]) -> LabeledDataset {
        let seed = Digest::of_parts(&[seed, b"|data"]);
        let seed = seed.as_bytes();
        let mut ctr = 0u64;
        let mut next = || {
            ctr += 1;
            prf_unit(seed, ctr)
        };
        let direction: Vec<f64> = (0..self.features).map(|_| 2.0 * next() - 1.0).collect();
        let rows = (0..self.rows)
            .map(|i| {
                let label = (i % self.labels as usize) as u32;
                let features = direction
                    .iter()
                    .map(|d| 0.5 * f64::from(label) * d + self.noise * (2.0 * next() - 1.0))
                    .collect();
                Row { features, label }
            })
            .collect();
        LabeledDataset {
            rows,
            label_count: self.labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub local_epochs: u32,
}

impl From<TrainingConfig> for TrainingSpec {
    fn from(t: TrainingConfig) -> Self {
        TrainingSpec {
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Distinct cloud instances flagged as fraudulent.
    #[serde(default)]
    pub fraud_flags: usize,
    #[serde(default)]
    pub quorum_failure: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub rounds: u32,
    pub training: TrainingConfig,
    pub data: DataGen,
    /// Agreeing replicas required by the fast data-claim check.
    #[serde(default = "default_quorum")]
    pub quorum: usize,
    pub roster: Vec<RosterEntry>,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_quorum() -> usize {
    2
}

impl ScenarioConfig {
    /// Roster of one DO, `m*n` cloud owners and one MO. `fraud[k]` applies
    /// to the k-th cloud owner, which holds replica `k % n` of subset `k / n`.
    pub fn standard(name: &str, seed: u64, m: usize, n: usize, rounds: u32, fraud: &[FraudStrategy]) -> Self {
        let mut roster = vec![RosterEntry::new(Role::DO, "do://owner")];
        for k in 0..m * n {
            let f = fraud.get(k).copied().unwrap_or_default();
            roster.push(RosterEntry::new(Role::CO, format!("co://cloud-{k}")).with_fraud(f));
        }
        roster.push(RosterEntry::new(Role::MO, "mo://modeller"));
        ScenarioConfig {
            name: name.to_string(),
            seed,
            m,
            n,
            rounds,
            training: TrainingConfig {
                learning_rate: 0.1,
                local_epochs: 1,
            },
            data: DataGen {
                rows: 24 * m,
                features: 3,
                labels: 3,
                noise: 0.1,
            },
            quorum: 2,
            roster,
            expect: Expectations::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn entries(&self, role: Role) -> impl Iterator<Item = &RosterEntry> {
        self.roster.iter().filter(move |e| e.role == role)
    }

    /// Endpoints of cloud owners configured with a fraud strategy.
    pub fn injected(&self) -> BTreeSet<String> {
        self.entries(Role::CO)
            .filter(|e| e.fraud != FraudStrategy::None)
            .map(|e| e.endpoint.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m < 2 || self.n < 1 {
            return Err(format!("need m >= 2 and n >= 1, got m={} n={}", self.m, self.n));
        }
        if self.rounds == 0 {
            return Err("rounds must be positive".into());
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return Err("learning rate must be positive".into());
        }
        if self.quorum == 0 {
            return Err("quorum must be positive".into());
        }
        if self.data.features == 0 || self.data.labels < 2 || self.data.rows < self.m {
            return Err("data needs features, at least two labels and m rows".into());
        }
        if !(self.data.noise >= 0.0 && self.data.noise.is_finite()) {
            return Err("noise must be non-negative".into());
        }
        let mut seen = BTreeSet::new();
        for e in &self.roster {
            if e.endpoint.is_empty() || !seen.insert(e.endpoint.as_str()) {
                return Err(format!("endpoint {:?} is empty or repeated", e.endpoint));
            }
            if e.fraud != FraudStrategy::None && e.role != Role::CO {
                return Err(format!("{}: only cloud owners take a fraud strategy", e.endpoint));
            }
            if e.bad_chunk_to.is_some() && e.role != Role::DO {
                return Err(format!("{}: only the data owner can send a bad chunk", e.endpoint));
            }
        }
        if self.entries(Role::DO).count() != 1 || self.entries(Role::MO).count() != 1 {
            return Err("roster needs exactly one DO and one MO".into());
        }
        let cos = self.entries(Role::CO).count();
        if cos < self.m * self.n {
            return Err(format!("need {} cloud owners, roster has {cos}", self.m * self.n));
        }
        for e in self.entries(Role::DO) {
            if let Some(target) = &e.bad_chunk_to {
                if !self.entries(Role::CO).any(|c| &c.endpoint == target) {
                    return Err(format!("bad_chunk_to {target:?} is not a cloud owner"));
                }
            }
        }
        Ok(())
    }
}
