//! On-chain asset kinds, their canonical serialization and status machines.
//!
//! Every asset is stored in the world state under a key of the form
//! `"<KIND>:<id>"` (for example `"CI:3fa9..."`). The stored bytes are the
//! canonical JSON of the tagged [`Asset`]: object keys sorted, no
//! insignificant whitespace, UTF-8.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssetError {
    #[error("invariant violated for {kind} {id}: {reason}")]
    InvariantViolation {
        kind: AssetKind,
        id: String,
        reason: String,
    },
    #[error("cannot parse asset: {0}")]
    ParseError(String),
    #[error("illegal {kind} transition {from} -> {to}")]
    IllegalTransition {
        kind: AssetKind,
        from: String,
        to: String,
    },
}

/// Canonical JSON encoding: sorted object keys, compact separators.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json's Map is a BTreeMap unless `preserve_order` is enabled, so a
    // round trip through Value sorts every object's keys.
    let v = serde_json::to_value(value).expect("asset types always serialize");
    serde_json::to_vec(&v).expect("Value always serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AssetKind {
    DO,
    CO,
    MO,
    DS,
    DSS,
    CI,
    MOD,
    TC,
    TJ,
    FR,
}

impl AssetKind {
    pub const ALL: [AssetKind; 10] = [
        AssetKind::DO,
        AssetKind::CO,
        AssetKind::MO,
        AssetKind::DS,
        AssetKind::DSS,
        AssetKind::CI,
        AssetKind::MOD,
        AssetKind::TC,
        AssetKind::TJ,
        AssetKind::FR,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            AssetKind::DO => "DO",
            AssetKind::CO => "CO",
            AssetKind::MO => "MO",
            AssetKind::DS => "DS",
            AssetKind::DSS => "DSS",
            AssetKind::CI => "CI",
            AssetKind::MOD => "MOD",
            AssetKind::TC => "TC",
            AssetKind::TJ => "TJ",
            AssetKind::FR => "FR",
        }
    }

    pub fn key(self, id: &str) -> String {
        format!("{}:{}", self.prefix(), id)
    }

    /// Splits a world-state key into its kind and id.
    pub fn parse_key(key: &str) -> Option<(AssetKind, &str)> {
        let (prefix, id) = key.split_once(':')?;
        let kind = prefix.parse().ok()?;
        (!id.is_empty()).then_some((kind, id))
    }
}

impl fmt::Display for AssetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for AssetKind {
    type Err = AssetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AssetKind::ALL
            .into_iter()
            .find(|k| k.prefix() == s)
            .ok_or_else(|| AssetError::ParseError(format!("unknown asset kind {s:?}")))
    }
}

/// Role of a registered marketplace member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemberKind {
    DO,
    CO,
    MO,
}

impl MemberKind {
    pub fn asset_kind(self) -> AssetKind {
        match self {
            MemberKind::DO => AssetKind::DO,
            MemberKind::CO => AssetKind::CO,
            MemberKind::MO => AssetKind::MO,
        }
    }
}

/// A data, cloud or model owner. Only the ledger-assigned pseudo-id is stored;
/// no network identity of the member ever reaches the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Member {
    pub id: String,
    pub kind: MemberKind,
    pub name: Option<String>,
    pub organization: Option<String>,
    pub how_many: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub id: String,
    pub owner: String,
    /// Number of privacy-preserving subsets.
    pub m: u32,
    /// Replicas per subset.
    pub n: u32,
    pub dss_ids: Vec<String>,
    pub sample_meta: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSubset {
    pub id: String,
    pub ds_id: String,
    pub index: u32,
    /// Row count of the subset, used as the aggregation weight.
    pub rows: u64,
    pub ci_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CiStatus {
    Free,
    Joined,
    Verified,
    Fraud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudInstance {
    pub id: String,
    pub co: String,
    pub dss: Option<String>,
    pub status: CiStatus,
    pub nonce: Option<String>,
    pub hash: Option<String>,
    pub rounds: u32,
}

/// How a cloud owner must train the model. `mask_id` references the
/// masking key the model owner hands to its cloud owners off-chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMethod {
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub mask_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelAsset {
    pub id: String,
    pub owner: String,
    pub model_type: String,
    pub model_url: String,
    pub training_method: TrainingMethod,
    pub model_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TcStatus {
    Requested,
    Approved,
    Training,
    RoundDone,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCouple {
    pub id: String,
    pub ds: String,
    #[serde(rename = "mod")]
    pub model: String,
    pub status: TcStatus,
    /// Outstanding job updates in the current round.
    pub rem: u32,
    /// Value `rem` started from when the current round began.
    pub round_total: u32,
    pub paid: bool,
    pub round: u32,
    pub cur_dss_ids: Vec<String>,
    /// Hex seed of the subset permutation, fixed by the first StartRound.
    pub selection_seed: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TjStatus {
    Pending,
    Updated,
    /// Settled without a result because the cloud instance was flagged.
    Voided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub id: String,
    pub tc: String,
    pub ci: String,
    pub round: u32,
    pub model_hash: Option<String>,
    pub nonce: Option<String>,
    pub enc_model_url: Option<String>,
    pub status: TjStatus,
}

/// Evidence attached to a fraud flag. `reporter` is a member pseudo-id, or
/// `"chain"` when the chaincode itself detected the fraud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FraudRecord {
    pub id: String,
    pub subject: String,
    pub ci: String,
    pub reporter: String,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "asset", deny_unknown_fields)]
pub enum Asset {
    Member(Member),
    Dataset(Dataset),
    DataSubset(DataSubset),
    CloudInstance(CloudInstance),
    Model(ModelAsset),
    TrainCouple(TrainCouple),
    TrainJob(TrainJob),
    FraudRecord(FraudRecord),
}

impl Asset {
    pub fn kind(&self) -> AssetKind {
        match self {
            Asset::Member(m) => m.kind.asset_kind(),
            Asset::Dataset(_) => AssetKind::DS,
            Asset::DataSubset(_) => AssetKind::DSS,
            Asset::CloudInstance(_) => AssetKind::CI,
            Asset::Model(_) => AssetKind::MOD,
            Asset::TrainCouple(_) => AssetKind::TC,
            Asset::TrainJob(_) => AssetKind::TJ,
            Asset::FraudRecord(_) => AssetKind::FR,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Asset::Member(a) => &a.id,
            Asset::Dataset(a) => &a.id,
            Asset::DataSubset(a) => &a.id,
            Asset::CloudInstance(a) => &a.id,
            Asset::Model(a) => &a.id,
            Asset::TrainCouple(a) => &a.id,
            Asset::TrainJob(a) => &a.id,
            Asset::FraudRecord(a) => &a.id,
        }
    }

    pub fn key(&self) -> String {
        self.kind().key(self.id())
    }

    pub fn validate(&self) -> Result<(), AssetError> {
        let fail = |reason: &str| {
            Err(AssetError::InvariantViolation {
                kind: self.kind(),
                id: self.id().to_string(),
                reason: reason.to_string(),
            })
        };
        if self.id().is_empty() || self.id().contains(':') {
            return fail("id must be non-empty and must not contain ':'");
        }
        match self {
            Asset::Member(_) | Asset::DataSubset(_) | Asset::Model(_) | Asset::FraudRecord(_) => {}
            Asset::Dataset(ds) => {
                if ds.m == 0 || ds.n == 0 {
                    return fail("m and n must be positive");
                }
                if ds.dss_ids.len() > ds.m as usize {
                    return fail("more subsets than m");
                }
            }
            Asset::CloudInstance(ci) => {
                let committed = matches!(ci.status, CiStatus::Joined | CiStatus::Verified | CiStatus::Fraud);
                if committed != ci.hash.is_some() || committed != ci.nonce.is_some() {
                    return fail("hash and nonce must be set exactly when status is past Free");
                }
            }
            Asset::TrainCouple(tc) => {
                if (tc.status == TcStatus::Training) != (tc.rem > 0) {
                    return fail("status must be Training exactly when rem > 0");
                }
                if tc.rem > tc.round_total {
                    return fail("rem exceeds the round's job count");
                }
            }
            Asset::TrainJob(tj) => {
                let filled = [&tj.model_hash, &tj.nonce, &tj.enc_model_url]
                    .iter()
                    .filter(|f| f.is_some())
                    .count();
                let expected = if tj.status == TjStatus::Updated { 3 } else { 0 };
                if filled != expected {
                    return fail("result fields must be present exactly when Updated");
                }
            }
        }
        Ok(())
    }

    /// Canonical bytes; fails if the asset breaks its invariants.
    pub fn serialize(&self) -> Result<Vec<u8>, AssetError> {
        self.validate()?;
        Ok(canonical_json(self))
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Asset, AssetError> {
        let asset: Asset =
            serde_json::from_slice(bytes).map_err(|e| AssetError::ParseError(e.to_string()))?;
        asset.validate()?;
        Ok(asset)
    }
}

/// Typed access to one variant of [`Asset`].
pub trait AssetRecord: Clone + Serialize + DeserializeOwned {
    const KIND: AssetKind;

    fn id(&self) -> &str;
    fn wrap(self) -> Asset;
    fn unwrap(asset: Asset) -> Option<Self>;

    fn key(&self) -> String {
        Self::KIND.key(self.id())
    }
}

macro_rules! asset_record {
    ($ty:ty, $variant:ident, $kind:expr) => {
        impl AssetRecord for $ty {
            const KIND: AssetKind = $kind;

            fn id(&self) -> &str {
                &self.id
            }

            fn wrap(self) -> Asset {
                Asset::$variant(self)
            }

            fn unwrap(asset: Asset) -> Option<Self> {
                match asset {
                    Asset::$variant(a) => Some(a),
                    _ => None,
                }
            }
        }
    };
}

asset_record!(Dataset, Dataset, AssetKind::DS);
asset_record!(DataSubset, DataSubset, AssetKind::DSS);
asset_record!(CloudInstance, CloudInstance, AssetKind::CI);
asset_record!(ModelAsset, Model, AssetKind::MOD);
asset_record!(TrainCouple, TrainCouple, AssetKind::TC);
asset_record!(TrainJob, TrainJob, AssetKind::TJ);
asset_record!(FraudRecord, FraudRecord, AssetKind::FR);

/// Assets that carry a status machine.
pub trait Lifecycle: Sized {
    type Status: Copy + PartialEq + fmt::Debug;
    const KIND: AssetKind;

    fn status(&self) -> Self::Status;
    fn set_status(&mut self, status: Self::Status);
    fn allows(from: Self::Status, to: Self::Status) -> bool;

    /// Moves to `to` if `(current, to)` is an edge of the status machine;
    /// all other fields are left unchanged.
    fn transition(mut self, to: Self::Status) -> Result<Self, AssetError> {
        let from = self.status();
        if !Self::allows(from, to) {
            return Err(AssetError::IllegalTransition {
                kind: Self::KIND,
                from: format!("{from:?}"),
                to: format!("{to:?}"),
            });
        }
        self.set_status(to);
        Ok(self)
    }
}

impl Lifecycle for CloudInstance {
    type Status = CiStatus;
    const KIND: AssetKind = AssetKind::CI;

    fn status(&self) -> CiStatus {
        self.status
    }

    fn set_status(&mut self, status: CiStatus) {
        self.status = status;
    }

    fn allows(from: CiStatus, to: CiStatus) -> bool {
        use CiStatus::*;
        matches!(
            (from, to),
            (Free, Joined) | (Joined, Verified) | (Joined, Fraud) | (Verified, Fraud)
        )
    }
}

impl Lifecycle for TrainCouple {
    type Status = TcStatus;
    const KIND: AssetKind = AssetKind::TC;

    fn status(&self) -> TcStatus {
        self.status
    }

    fn set_status(&mut self, status: TcStatus) {
        self.status = status;
    }

    fn allows(from: TcStatus, to: TcStatus) -> bool {
        use TcStatus::*;
        matches!(
            (from, to),
            (Requested, Approved)
                | (Approved, Training)
                | (Training, RoundDone)
                | (RoundDone, Training)
                | (RoundDone, Trained)
        )
    }
}

impl Lifecycle for TrainJob {
    type Status = TjStatus;
    const KIND: AssetKind = AssetKind::TJ;

    fn status(&self) -> TjStatus {
        self.status
    }

    fn set_status(&mut self, status: TjStatus) {
        self.status = status;
    }

    fn allows(from: TjStatus, to: TjStatus) -> bool {
        matches!(
            (from, to),
            (TjStatus::Pending, TjStatus::Updated) | (TjStatus::Pending, TjStatus::Voided)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_ci() -> CloudInstance {
        CloudInstance {
            id: "c1".into(),
            co: "co".into(),
            dss: Some("d1".into()),
            status: CiStatus::Free,
            nonce: None,
            hash: None,
            rounds: 0,
        }
    }

    fn tc() -> TrainCouple {
        TrainCouple {
            id: "t1".into(),
            ds: "ds".into(),
            model: "m".into(),
            status: TcStatus::Requested,
            rem: 0,
            round_total: 0,
            paid: false,
            round: 0,
            cur_dss_ids: vec![],
            selection_seed: None,
        }
    }

    #[test]
    fn free_ci_round_trips_exactly() {
        let a = free_ci().wrap();
        let bytes = a.serialize().unwrap();
        assert_eq!(Asset::deserialize(&bytes).unwrap(), a);
        assert_eq!(a.key(), "CI:c1");
    }

    #[test]
    fn canonical_form_sorts_keys_without_whitespace() {
        let bytes = free_ci().wrap().serialize().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            r#"{"asset":"CloudInstance","co":"co","dss":"d1","hash":null,"id":"c1","nonce":null,"rounds":0,"status":"Free"}"#
        );
    }

    #[test]
    fn equal_assets_serialize_identically() {
        let a = tc().wrap().serialize().unwrap();
        let b = tc().clone().wrap().serialize().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_rem_does_not_parse() {
        let mut v: serde_json::Value = serde_json::from_slice(&tc().wrap().serialize().unwrap()).unwrap();
        v["rem"] = serde_json::json!(-1);
        let bytes = serde_json::to_vec(&v).unwrap();
        assert!(matches!(Asset::deserialize(&bytes), Err(AssetError::ParseError(_))));
    }

    #[test]
    fn training_without_outstanding_jobs_is_invalid() {
        let mut t = tc();
        t.status = TcStatus::Training;
        assert!(matches!(
            t.wrap().serialize(),
            Err(AssetError::InvariantViolation { kind: AssetKind::TC, .. })
        ));
    }

    #[test]
    fn joined_ci_needs_commitment() {
        let mut ci = free_ci();
        ci.status = CiStatus::Joined;
        assert!(ci.clone().wrap().serialize().is_err());
        ci.hash = Some("h".into());
        ci.nonce = Some("n".into());
        assert!(ci.wrap().serialize().is_ok());
    }

    #[test]
    fn ci_status_machine() {
        let joined = free_ci().transition(CiStatus::Joined).unwrap();
        assert_eq!(joined.status, CiStatus::Joined);
        assert_eq!(joined.id, "c1");
        let verified = joined.transition(CiStatus::Verified).unwrap();
        assert!(matches!(
            verified.clone().transition(CiStatus::Joined),
            Err(AssetError::IllegalTransition { .. })
        ));
        assert_eq!(verified.transition(CiStatus::Fraud).unwrap().status, CiStatus::Fraud);
        assert!(free_ci().transition(CiStatus::Verified).is_err());
    }

    #[test]
    fn tc_status_machine() {
        let approved = tc().transition(TcStatus::Approved).unwrap();
        assert_eq!(approved.status, TcStatus::Approved);
        assert!(approved.clone().transition(TcStatus::Approved).is_err());
        assert!(approved.transition(TcStatus::Trained).is_err());
    }

    #[test]
    fn keys_parse_into_one_kind() {
        for kind in AssetKind::ALL {
            let key = kind.key("abc");
            assert_eq!(AssetKind::parse_key(&key), Some((kind, "abc")));
        }
        assert_eq!(AssetKind::parse_key("XX:abc"), None);
        assert_eq!(AssetKind::parse_key("CI:"), None);
    }
}
