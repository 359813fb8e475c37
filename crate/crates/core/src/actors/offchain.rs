use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataplane::{gen_nonce, NONCE_LEN};
use crate::digest::{sha256_hex, Digest};
use crate::fedtrain::MaskKey;
use crate::ledger::{Ledger, TransactionEnvelope, TxType};

/// Chunk bytes handed from a data owner to a cloud owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub ci: String,
    pub bytes: Vec<u8>,
}

/// Everything actors exchange outside the ledger.
#[derive(Debug, Default)]
pub struct OffChain {
    /// Model files keyed by locator.
    pub objects: BTreeMap<String, Vec<u8>>,
    /// Pending chunk deliveries per cloud-owner member id.
    pub mailbox: BTreeMap<String, Vec<Delivery>>,
    /// Mask keys shared by model owners with the cloud owners they hire.
    pub keys: BTreeMap<String, MaskKey>,
    pub key_material: BTreeMap<String, Vec<u8>>,
    /// Registered cloud owners as (endpoint, member id), in roster order.
    pub directory: Vec<(String, String)>,
    /// Listed dataset ids.
    pub catalog: Vec<String>,
}

impl OffChain {
    pub fn endpoint_of(&self, member: &str) -> Option<&str> {
        self.directory
            .iter()
            .find(|(_, id)| id == member)
            .map(|(e, _)| e.as_str())
    }
}

/// One actor action, serialized as a line of the actor log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: u64,
    pub actor: String,
    pub role: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActorLog {
    pub entries: Vec<LogEntry>,
}

impl ActorLog {
    pub fn push(&mut self, time: u64, actor: &str, role: &str, action: &str, detail: &[(&str, String)]) {
        self.entries.push(LogEntry {
            time,
            actor: actor.to_string(),
            role: role.to_string(),
            action: action.to_string(),
            detail: detail.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        });
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }
}

/// Ledger-facing identity of one actor: opaque transaction ids, nonces
/// and the outcome of every transaction it sent.
#[derive(Debug)]
pub(crate) struct Identity {
    pub endpoint: String,
    pub role: &'static str,
    pub seed: [u8; 32],
    pub member_id: String,
    tx_counter: u64,
    nonce_counter: u64,
    inflight: Vec<(String, TxType)>,
}

impl Identity {
    pub fn new(endpoint: &str, role: &'static str, scenario_seed: u64) -> Self {
        let seed = *Digest::of_parts(&[&scenario_seed.to_be_bytes(), b"|actor|", endpoint.as_bytes()]).as_bytes();
        Identity {
            endpoint: endpoint.to_string(),
            role,
            seed,
            member_id: String::new(),
            tx_counter: 0,
            nonce_counter: 0,
            inflight: Vec::new(),
        }
    }

    pub fn next_tx_id(&mut self) -> String {
        self.tx_counter += 1;
        sha256_hex(&[&self.seed, b"|tx|", &self.tx_counter.to_be_bytes()])
    }

    pub fn next_nonce(&mut self) -> [u8; NONCE_LEN] {
        self.nonce_counter += 1;
        gen_nonce(&self.seed, self.nonce_counter)
    }

    /// Fresh object-store locator.
    pub fn next_locator(&mut self) -> String {
        format!("obj/{}", &self.next_tx_id()[..32])
    }

    pub fn submit(&mut self, env: &mut Env<'_>, tx_type: TxType, args: Vec<String>) -> String {
        let tx_id = self.next_tx_id();
        let caller = if tx_type.creates_member() { "" } else { self.member_id.as_str() };
        let envelope = TransactionEnvelope::new(&tx_id, tx_type, caller, args, env.now);
        env.ledger
            .submit(envelope)
            .expect("actor envelopes are well formed and unique");
        env.submitted += 1;
        env.log.push(env.now, &self.endpoint, self.role, "submit", &[
            ("tx_type", tx_type.name().to_string()),
            ("tx_id", tx_id.clone()),
        ]);
        self.inflight.push((tx_id.clone(), tx_type));
        tx_id
    }

    /// Logs outcomes of committed transactions.
    pub fn settle(&mut self, env: &mut Env<'_>) {
        let ledger = &*env.ledger;
        let log = &mut *env.log;
        self.inflight.retain(|(tx_id, tx_type)| match ledger.outcome(tx_id) {
            None => true,
            Some(out) => {
                let mut detail = vec![
                    ("tx_type", tx_type.name().to_string()),
                    ("tx_id", tx_id.clone()),
                    ("block", out.block_height.to_string()),
                ];
                if let Some(e) = &out.error {
                    detail.push(("error", e.name().to_string()));
                }
                let action = if out.valid { "committed" } else { "rejected" };
                log.push(env.now, &self.endpoint, self.role, action, &detail);
                false
            }
        });
    }

    pub fn log(&self, env: &mut Env<'_>, action: &str, detail: &[(&str, String)]) {
        env.log.push(env.now, &self.endpoint, self.role, action, detail);
    }
}

pub(crate) struct Env<'a> {
    pub ledger: &'a mut Ledger,
    pub off: &'a mut OffChain,
    pub log: &'a mut ActorLog,
    pub now: u64,
    pub submitted: usize,
}

/// Actor-local material the verification suite needs besides the ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evidence {
    /// Chunk bytes the data owner distributed, per cloud instance.
    #[serde(with = "hex_map")]
    pub sent: BTreeMap<String, Vec<u8>>,
    /// Chunk bytes each cloud owner holds, per cloud instance.
    #[serde(with = "hex_map")]
    pub received: BTreeMap<String, Vec<u8>>,
    #[serde(with = "hex_map")]
    pub objects: BTreeMap<String, Vec<u8>>,
    /// Mask key material per mask id.
    #[serde(with = "hex_map")]
    pub mask_keys: BTreeMap<String, Vec<u8>>,
    pub endpoints: Vec<String>,
    pub quorum: usize,
}

impl Evidence {
    pub fn key(&self, mask_id: &str) -> Option<MaskKey> {
        self.mask_keys
            .get(mask_id)
            .map(|material| MaskKey::derive(mask_id, material))
    }
}

mod hex_map {
    use super::*;

    pub fn serialize<S: Serializer>(map: &BTreeMap<String, Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        let hexed: BTreeMap<&str, String> = map.iter().map(|(k, v)| (k.as_str(), hex::encode(v))).collect();
        hexed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let hexed = BTreeMap::<String, String>::deserialize(d)?;
        hexed
            .into_iter()
            .map(|(k, v)| hex::decode(&v).map(|b| (k, b)).map_err(serde::de::Error::custom))
            .collect()
    }
}
