//! The fifteen externally invoked transactions.
//!
//! Chaincode runs only inside the ledger's serialized commit step. Each
//! transaction reads committed state through a [`TxContext`] and buffers its
//! writes; the ledger applies the buffer only when the transaction is valid.
//! The one exception is a rejected duplicate commitment: the commitment is
//! refused, but the fraud penalty (flagging the offending cloud instance) is
//! kept.
//!
//! Identifiers of created assets are `SHA-256(tx_id || tag)` in hex, so a
//! client can compute the id of what it creates before the block commits.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::assets::{
    Asset, AssetKind, AssetRecord, CiStatus, CloudInstance, DataSubset, Dataset, FraudRecord,
    Lifecycle, Member, MemberKind, ModelAsset, TcStatus, TjStatus, TrainCouple, TrainJob,
    TrainingMethod,
};
use crate::digest::{seeded_permutation, sha256_hex, Digest};
use crate::ledger::{EventType, TransactionEnvelope, TxType, WorldState};

/// Reporter recorded on fraud flags raised by the chaincode itself.
pub const CHAIN_REPORTER: &str = "chain";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChaincodeError {
    #[error("caller is not a registered member")]
    NotMember,
    #[error("caller is not a data owner")]
    NotDataOwner,
    #[error("member is not a cloud owner")]
    NotCloudOwner,
    #[error("caller is not a model owner")]
    NotModelOwner,
    #[error("caller does not own the asset")]
    NotOwner,
    #[error("caller is not the assigned cloud owner")]
    NotAssignee,
    #[error("caller is not a party to the subject")]
    NotParty,
    #[error("dataset shape needs m >= 2 and n >= 1")]
    BadShape,
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("subset index out of order")]
    OutOfOrder,
    #[error("dataset already has m subsets")]
    TooMany,
    #[error("subset already has n replicas")]
    ReplicaQuotaFull,
    #[error("asset is in the wrong status for this transaction")]
    WrongStatus,
    #[error("commitment already declared by another party")]
    DuplicateCommitment,
    #[error("dataset is not fully distributed and verified")]
    DatasetNotReady,
    #[error("tc not yet approved")]
    NotApproved,
    #[error("a round is already in progress")]
    RoundInProgress,
    #[error("job belongs to another round")]
    WrongRound,
    #[error("unknown fraud subject {0}")]
    UnknownSubject(String),
    #[error("asset invariant violated: {0}")]
    Invariant(String),
}

impl ChaincodeError {
    /// Stable name recorded in blocks.
    pub fn name(&self) -> &'static str {
        use ChaincodeError::*;
        match self {
            NotMember => "NotMember",
            NotDataOwner => "NotDataOwner",
            NotCloudOwner => "NotCloudOwner",
            NotModelOwner => "NotModelOwner",
            NotOwner => "NotOwner",
            NotAssignee => "NotAssignee",
            NotParty => "NotParty",
            BadShape => "BadShape",
            BadArgument(_) => "BadArgument",
            UnknownAsset(_) => "UnknownAsset",
            OutOfOrder => "OutOfOrder",
            TooMany => "TooMany",
            ReplicaQuotaFull => "ReplicaQuotaFull",
            WrongStatus => "WrongStatus",
            DuplicateCommitment => "DuplicateCommitment",
            DatasetNotReady => "DatasetNotReady",
            NotApproved => "NotApproved",
            RoundInProgress => "RoundInProgress",
            WrongRound => "WrongRound",
            UnknownSubject(_) => "UnknownSubject",
            Invariant(_) => "Invariant",
        }
    }
}

type TxResult<T = ()> = Result<T, ChaincodeError>;

/// Id of an asset created by transaction `tx_id`.
pub fn asset_id(tx_id: &str, tag: &str) -> String {
    sha256_hex(&[tx_id.as_bytes(), tag.as_bytes()])
}

/// The single train job of a cloud instance for one round of a couple.
pub fn train_job_id(tc_id: &str, ci_id: &str, round: u32) -> String {
    sha256_hex(&[format!("{tc_id}|{ci_id}|{round}").as_bytes()])
}

/// Per-transaction randomness: `SHA-256(prev_hash || tx_id)`.
pub fn tx_seed(prev_hash: &Digest, tx_id: &str) -> Digest {
    Digest::of_parts(&[prev_hash.as_bytes(), tx_id.as_bytes()])
}

/// Subset indices trained in `round` (1-based) of a dataset with `m`
/// subsets.
///
/// A fixed seeded permutation of `0..m` is walked in cyclic windows of
/// `ceil(m/2)` positions, window `r` starting at `(r-1)*ceil(m/2) mod m`.
/// Two consecutive windows span at least `m` consecutive positions, so any
/// two consecutive rounds together cover every subset.
pub fn select_subsets(seed: &[u8], m: usize, round: u32) -> Vec<usize> {
    if m == 0 || round == 0 {
        return Vec::new();
    }
    let k = m.div_ceil(2);
    let perm = seeded_permutation(seed, m);
    let offset = ((round as usize - 1) * k) % m;
    let mut picked: Vec<usize> = (0..k).map(|j| perm[(offset + j) % m]).collect();
    picked.sort_unstable();
    picked
}

/// A dataset can be trained once every subset has all `n` replicas, every
/// replica's verification is settled, and each subset keeps at least one
/// verified replica.
pub fn dataset_ready(state: &WorldState, ds: &Dataset) -> bool {
    ds.dss_ids.len() == ds.m as usize
        && ds.dss_ids.iter().all(|dss_id| {
            let Some(dss) = state.read::<DataSubset>(dss_id) else {
                return false;
            };
            let statuses: Vec<_> = dss
                .ci_ids
                .iter()
                .filter_map(|ci| state.read::<CloudInstance>(ci).map(|c| c.status))
                .collect();
            statuses.len() == ds.n as usize
                && statuses
                    .iter()
                    .all(|s| matches!(s, CiStatus::Verified | CiStatus::Fraud))
                && statuses.contains(&CiStatus::Verified)
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingEvent {
    pub event_type: EventType,
    pub key: String,
    pub attrs: BTreeMap<String, String>,
}

/// Buffered effects of one transaction.
#[derive(Debug)]
pub struct Execution {
    pub result: TxResult,
    /// Apply `writes` and `events` even though `result` is an error.
    pub keep_writes: bool,
    /// In key order.
    pub writes: Vec<(String, Vec<u8>)>,
    pub events: Vec<PendingEvent>,
    pub output: Option<String>,
}

/// Read-through write buffer over committed state.
pub struct TxContext<'a> {
    base: &'a WorldState,
    overlay: BTreeMap<String, Vec<u8>>,
    events: Vec<PendingEvent>,
    pub caller: &'a str,
    pub tx_id: &'a str,
    pub rng_seed: Digest,
    keep_writes: bool,
}

impl<'a> TxContext<'a> {
    pub fn new(base: &'a WorldState, env: &'a TransactionEnvelope, prev_hash: &Digest) -> Self {
        TxContext {
            base,
            overlay: BTreeMap::new(),
            events: Vec::new(),
            caller: &env.caller,
            tx_id: &env.tx_id,
            rng_seed: tx_seed(prev_hash, &env.tx_id),
            keep_writes: false,
        }
    }

    fn raw(&self, key: &str) -> Option<&[u8]> {
        self.overlay
            .get(key)
            .map(Vec::as_slice)
            .or_else(|| self.base.get(key))
    }

    pub fn get<T: AssetRecord>(&self, id: &str) -> Option<T> {
        let bytes = self.raw(&T::KIND.key(id))?;
        T::unwrap(Asset::deserialize(bytes).expect("state holds only valid assets"))
    }

    fn require<T: AssetRecord>(&self, id: &str) -> TxResult<T> {
        self.get(id)
            .ok_or_else(|| ChaincodeError::UnknownAsset(T::KIND.key(id)))
    }

    pub fn member(&self, id: &str, kind: MemberKind) -> Option<Member> {
        let bytes = self.raw(&kind.asset_kind().key(id))?;
        match Asset::deserialize(bytes).ok()? {
            Asset::Member(m) => Some(m),
            _ => None,
        }
    }

    fn is_member(&self, id: &str) -> bool {
        [MemberKind::DO, MemberKind::CO, MemberKind::MO]
            .into_iter()
            .any(|k| self.member(id, k).is_some())
    }

    fn put_asset(&mut self, asset: Asset) -> TxResult {
        let bytes = asset
            .serialize()
            .map_err(|e| ChaincodeError::Invariant(e.to_string()))?;
        self.overlay.insert(asset.key(), bytes);
        Ok(())
    }

    pub fn put<T: AssetRecord>(&mut self, record: T) -> TxResult {
        self.put_asset(record.wrap())
    }

    fn emit(&mut self, event_type: EventType, key: String, attrs: &[(&str, String)]) {
        self.events.push(PendingEvent {
            event_type,
            key,
            attrs: attrs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        });
    }

    fn finish(self, result: TxResult<Option<String>>) -> Execution {
        let (result, output) = match result {
            Ok(out) => (Ok(()), out),
            Err(e) => (Err(e), None),
        };
        let keep = result.is_ok() || self.keep_writes;
        Execution {
            result,
            keep_writes: self.keep_writes,
            writes: if keep { self.overlay.into_iter().collect() } else { Vec::new() },
            events: if keep { self.events } else { Vec::new() },
            output,
        }
    }
}

/// Executes one envelope against committed state.
pub fn execute(state: &WorldState, env: &TransactionEnvelope, prev_hash: &Digest) -> Execution {
    let mut ctx = TxContext::new(state, env, prev_hash);
    let result = dispatch(&mut ctx, env);
    ctx.finish(result)
}

fn dispatch(ctx: &mut TxContext<'_>, env: &TransactionEnvelope) -> TxResult<Option<String>> {
    env.check_well_formed()
        .map_err(|e| ChaincodeError::BadArgument(e.to_string()))?;
    if !env.tx_type.creates_member() && !ctx.is_member(ctx.caller) {
        return Err(ChaincodeError::NotMember);
    }
    let a = &env.args;
    let opt = |i: usize| a.get(i).filter(|s| !s.is_empty()).cloned();
    let out = match env.tx_type {
        TxType::CreateDO => create_member(ctx, MemberKind::DO, opt(0), opt(1), opt(2))?,
        TxType::CreateCO => create_member(ctx, MemberKind::CO, opt(0), opt(1), opt(2))?,
        TxType::CreateMO => create_member(ctx, MemberKind::MO, opt(0), opt(1), opt(2))?,
        TxType::CreateDS => create_ds(ctx, parse_u32(&a[0])?, parse_u32(&a[1])?, &a[2])?,
        TxType::CreateDSS => create_dss(ctx, &a[0], parse_u32(&a[1])?, parse_u64(&a[2])?)?,
        TxType::CreateCI => create_ci(ctx, &a[0], &a[1])?,
        TxType::JoinCI => join_ci(ctx, &a[0], &a[1], &a[2])?,
        TxType::VerifyCI => verify_ci(ctx, &a[0], parse_bool(&a[1])?)?,
        TxType::CreateMod => create_mod(ctx, &a[0], &a[1], &a[2], &a[3])?,
        TxType::RequestTC => request_tc(ctx, &a[0], &a[1])?,
        TxType::ApproveTC => approve_tc(ctx, &a[0])?,
        TxType::StartRound => start_round(ctx, &a[0], model_update(a))?,
        TxType::UpdateTJ => update_tj(ctx, &a[0], &a[1], &a[2], &a[3])?,
        TxType::FinishTC => finish_tc(ctx, &a[0], model_update(a))?,
        TxType::FlagFraud => flag_fraud(ctx, &a[0], &a[1])?,
    };
    Ok(Some(out))
}

fn model_update(args: &[String]) -> Option<(&str, &str)> {
    (args.len() == 3).then(|| (args[1].as_str(), args[2].as_str()))
}

fn parse_u32(s: &str) -> TxResult<u32> {
    s.parse()
        .map_err(|_| ChaincodeError::BadArgument(format!("expected a non-negative integer, got {s:?}")))
}

fn parse_u64(s: &str) -> TxResult<u64> {
    s.parse()
        .map_err(|_| ChaincodeError::BadArgument(format!("expected a non-negative integer, got {s:?}")))
}

fn parse_bool(s: &str) -> TxResult<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ChaincodeError::BadArgument(format!("expected true|false, got {s:?}"))),
    }
}

fn non_empty<'s>(s: &'s str, what: &str) -> TxResult<&'s str> {
    if s.is_empty() {
        Err(ChaincodeError::BadArgument(format!("{what} must not be empty")))
    } else {
        Ok(s)
    }
}

fn create_member(
    ctx: &mut TxContext<'_>,
    kind: MemberKind,
    name: Option<String>,
    organization: Option<String>,
    how_many: Option<String>,
) -> TxResult<String> {
    let id = asset_id(ctx.tx_id, kind.asset_kind().prefix());
    ctx.put_asset(Asset::Member(Member {
        id: id.clone(),
        kind,
        name,
        organization,
        how_many,
    }))?;
    Ok(id)
}

fn create_ds(ctx: &mut TxContext<'_>, m: u32, n: u32, sample_meta: &str) -> TxResult<String> {
    if ctx.member(ctx.caller, MemberKind::DO).is_none() {
        return Err(ChaincodeError::NotDataOwner);
    }
    if m < 2 || n < 1 {
        return Err(ChaincodeError::BadShape);
    }
    let id = asset_id(ctx.tx_id, "DS");
    ctx.put(Dataset {
        id: id.clone(),
        owner: ctx.caller.to_string(),
        m,
        n,
        dss_ids: Vec::new(),
        sample_meta: sample_meta.to_string(),
    })?;
    Ok(id)
}

fn owned_dataset(ctx: &TxContext<'_>, ds_id: &str) -> TxResult<Dataset> {
    let ds: Dataset = ctx.require(ds_id)?;
    if ds.owner != ctx.caller {
        return Err(ChaincodeError::NotOwner);
    }
    Ok(ds)
}

fn create_dss(ctx: &mut TxContext<'_>, ds_id: &str, index: u32, rows: u64) -> TxResult<String> {
    let mut ds = owned_dataset(ctx, ds_id)?;
    if index >= ds.m {
        return Err(ChaincodeError::TooMany);
    }
    if index as usize != ds.dss_ids.len() {
        return Err(ChaincodeError::OutOfOrder);
    }
    let id = asset_id(ctx.tx_id, "DSS");
    ds.dss_ids.push(id.clone());
    ctx.put(DataSubset {
        id: id.clone(),
        ds_id: ds_id.to_string(),
        index,
        rows,
        ci_ids: Vec::new(),
    })?;
    ctx.put(ds)?;
    Ok(id)
}

fn create_ci(ctx: &mut TxContext<'_>, dss_id: &str, co_id: &str) -> TxResult<String> {
    let mut dss: DataSubset = ctx.require(dss_id)?;
    let ds = owned_dataset(ctx, &dss.ds_id)?;
    if ctx.member(co_id, MemberKind::CO).is_none() {
        return Err(ChaincodeError::NotCloudOwner);
    }
    if dss.ci_ids.len() >= ds.n as usize {
        return Err(ChaincodeError::ReplicaQuotaFull);
    }
    let id = asset_id(ctx.tx_id, "CI");
    dss.ci_ids.push(id.clone());
    let ci = CloudInstance {
        id: id.clone(),
        co: co_id.to_string(),
        dss: Some(dss_id.to_string()),
        status: CiStatus::Free,
        nonce: None,
        hash: None,
        rounds: 0,
    };
    let key = ci.key();
    ctx.put(ci)?;
    ctx.put(dss)?;
    ctx.emit(
        EventType::CICreated,
        key,
        &[
            ("ci", id.clone()),
            ("co", co_id.to_string()),
            ("dss", dss_id.to_string()),
            ("ds", ds.id),
        ],
    );
    Ok(id)
}

/// Parent dataset of a cloud instance.
fn dataset_of(ctx: &TxContext<'_>, ci: &CloudInstance) -> TxResult<Dataset> {
    let dss_id = ci
        .dss
        .as_deref()
        .ok_or_else(|| ChaincodeError::UnknownAsset(format!("DSS of CI:{}", ci.id)))?;
    let dss: DataSubset = ctx.require(dss_id)?;
    ctx.require(&dss.ds_id)
}

fn join_ci(ctx: &mut TxContext<'_>, ci_id: &str, hash: &str, nonce: &str) -> TxResult<String> {
    let ci: CloudInstance = ctx.require(ci_id)?;
    if ci.co != ctx.caller {
        return Err(ChaincodeError::NotAssignee);
    }
    if ci.status != CiStatus::Free {
        return Err(ChaincodeError::WrongStatus);
    }
    non_empty(hash, "hash")?;
    non_empty(nonce, "nonce")?;
    let duplicate = ctx
        .base
        .all::<CloudInstance>()
        .into_iter()
        .find(|other| other.id != ci.id && other.hash.as_deref() == Some(hash));
    if let Some(first) = duplicate {
        // The CI stays Free (Free -> Fraud is not an edge); the flag lives in
        // the fraud record and event.
        record_fraud(
            ctx,
            &ci,
            ci_id,
            CHAIN_REPORTER,
            &format!("JoinCI replayed hash already declared by CI:{}", first.id),
        )?;
        ctx.keep_writes = true;
        return Err(ChaincodeError::DuplicateCommitment);
    }
    let mut ci = ci
        .transition(CiStatus::Joined)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    ci.hash = Some(hash.to_string());
    ci.nonce = Some(nonce.to_string());
    let key = ci.key();
    let attrs = [
        ("ci", ci.id.clone()),
        ("co", ci.co.clone()),
        ("dss", ci.dss.clone().unwrap_or_default()),
    ];
    ctx.put(ci)?;
    ctx.emit(EventType::CIJoined, key, &attrs);
    Ok(ci_id.to_string())
}

fn verify_ci(ctx: &mut TxContext<'_>, ci_id: &str, ok: bool) -> TxResult<String> {
    let ci: CloudInstance = ctx.require(ci_id)?;
    let ds = dataset_of(ctx, &ci)?;
    if ds.owner != ctx.caller {
        return Err(ChaincodeError::NotOwner);
    }
    if ci.status != CiStatus::Joined {
        return Err(ChaincodeError::WrongStatus);
    }
    let key = ci.key();
    let attrs = [
        ("ci", ci.id.clone()),
        ("co", ci.co.clone()),
        ("ok", ok.to_string()),
    ];
    if ok {
        let ci = ci
            .transition(CiStatus::Verified)
            .map_err(|_| ChaincodeError::WrongStatus)?;
        ctx.put(ci)?;
        ctx.emit(EventType::CIVerified, key, &attrs);
    } else {
        ctx.emit(EventType::CIVerified, key, &attrs);
        let caller = ctx.caller;
        mark_fraud(ctx, ci, ci_id, caller, "declared data hash does not match the distributed subset")?;
    }
    Ok(ci_id.to_string())
}

fn create_mod(
    ctx: &mut TxContext<'_>,
    model_type: &str,
    model_url: &str,
    training_method: &str,
    model_hash: &str,
) -> TxResult<String> {
    if ctx.member(ctx.caller, MemberKind::MO).is_none() {
        return Err(ChaincodeError::NotModelOwner);
    }
    let training_method: TrainingMethod = serde_json::from_str(training_method)
        .map_err(|e| ChaincodeError::BadArgument(format!("training method: {e}")))?;
    if !(training_method.learning_rate > 0.0 && training_method.learning_rate.is_finite()) {
        return Err(ChaincodeError::BadArgument("learning rate must be positive".into()));
    }
    let id = asset_id(ctx.tx_id, "MOD");
    ctx.put(ModelAsset {
        id: id.clone(),
        owner: ctx.caller.to_string(),
        model_type: model_type.to_string(),
        model_url: model_url.to_string(),
        training_method,
        model_hash: model_hash.to_string(),
    })?;
    Ok(id)
}

fn request_tc(ctx: &mut TxContext<'_>, ds_id: &str, mod_id: &str) -> TxResult<String> {
    let model: ModelAsset = ctx.require(mod_id)?;
    if model.owner != ctx.caller {
        return Err(ChaincodeError::NotOwner);
    }
    let ds: Dataset = ctx.require(ds_id)?;
    if !dataset_ready(ctx.base, &ds) {
        return Err(ChaincodeError::DatasetNotReady);
    }
    let id = asset_id(ctx.tx_id, "TC");
    let tc = TrainCouple {
        id: id.clone(),
        ds: ds_id.to_string(),
        model: mod_id.to_string(),
        status: TcStatus::Requested,
        rem: 0,
        round_total: 0,
        paid: false,
        round: 0,
        cur_dss_ids: Vec::new(),
        selection_seed: None,
    };
    let key = tc.key();
    ctx.put(tc)?;
    ctx.emit(
        EventType::TCRequested,
        key,
        &[
            ("tc", id.clone()),
            ("ds", ds_id.to_string()),
            ("mod", mod_id.to_string()),
            ("do", ds.owner),
        ],
    );
    Ok(id)
}

fn approve_tc(ctx: &mut TxContext<'_>, tc_id: &str) -> TxResult<String> {
    let tc: TrainCouple = ctx.require(tc_id)?;
    let ds: Dataset = ctx.require(&tc.ds)?;
    if ds.owner != ctx.caller {
        return Err(ChaincodeError::NotOwner);
    }
    let tc = tc
        .transition(TcStatus::Approved)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    let model: ModelAsset = ctx.require(&tc.model)?;
    let key = tc.key();
    ctx.put(tc)?;
    ctx.emit(
        EventType::TCApproved,
        key,
        &[("tc", tc_id.to_string()), ("mo", model.owner)],
    );
    Ok(tc_id.to_string())
}

fn owned_couple(ctx: &TxContext<'_>, tc_id: &str) -> TxResult<(TrainCouple, ModelAsset)> {
    let tc: TrainCouple = ctx.require(tc_id)?;
    let model: ModelAsset = ctx.require(&tc.model)?;
    if model.owner != ctx.caller {
        return Err(ChaincodeError::NotOwner);
    }
    Ok((tc, model))
}

fn publish_model(ctx: &mut TxContext<'_>, mut model: ModelAsset, update: Option<(&str, &str)>) -> TxResult {
    if let Some((url, hash)) = update {
        model.model_url = url.to_string();
        model.model_hash = hash.to_string();
        ctx.put(model)?;
    }
    Ok(())
}

fn start_round(ctx: &mut TxContext<'_>, tc_id: &str, update: Option<(&str, &str)>) -> TxResult<String> {
    let (mut tc, model) = owned_couple(ctx, tc_id)?;
    match tc.status {
        TcStatus::Approved | TcStatus::RoundDone => {}
        TcStatus::Training => return Err(ChaincodeError::RoundInProgress),
        TcStatus::Requested | TcStatus::Trained => return Err(ChaincodeError::NotApproved),
    }
    publish_model(ctx, model, update)?;
    let ds: Dataset = ctx.require(&tc.ds)?;

    let seed_hex = tc
        .selection_seed
        .get_or_insert_with(|| ctx.rng_seed.to_hex())
        .clone();
    let seed = hex::decode(&seed_hex).map_err(|e| ChaincodeError::Invariant(e.to_string()))?;
    tc.round += 1;
    tc.cur_dss_ids = select_subsets(&seed, ds.dss_ids.len(), tc.round)
        .into_iter()
        .map(|i| ds.dss_ids[i].clone())
        .collect();

    let mut job_cis = Vec::new();
    for dss_id in &tc.cur_dss_ids {
        let dss: DataSubset = ctx.require(dss_id)?;
        for ci_id in &dss.ci_ids {
            let ci: CloudInstance = ctx.require(ci_id)?;
            if ci.status == CiStatus::Verified {
                job_cis.push(ci.id);
            }
        }
    }
    for ci_id in &job_cis {
        ctx.put(TrainJob {
            id: train_job_id(tc_id, ci_id, tc.round),
            tc: tc_id.to_string(),
            ci: ci_id.clone(),
            round: tc.round,
            model_hash: None,
            nonce: None,
            enc_model_url: None,
            status: TjStatus::Pending,
        })?;
    }
    tc.rem = job_cis.len() as u32;
    tc.round_total = tc.rem;
    let mut tc = tc
        .transition(TcStatus::Training)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    let key = tc.key();
    ctx.emit(
        EventType::RoundStarted,
        key.clone(),
        &[
            ("tc", tc_id.to_string()),
            ("round", tc.round.to_string()),
            ("cur_dss_ids", tc.cur_dss_ids.join(",")),
            ("ci_ids", job_cis.join(",")),
        ],
    );
    if tc.rem == 0 {
        tc = complete_round(ctx, tc)?;
    }
    ctx.put(tc)?;
    Ok(tc_id.to_string())
}

fn complete_round(ctx: &mut TxContext<'_>, tc: TrainCouple) -> TxResult<TrainCouple> {
    let tc = tc
        .transition(TcStatus::RoundDone)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    ctx.emit(
        EventType::RoundComplete,
        tc.key(),
        &[("tc", tc.id.clone()), ("round", tc.round.to_string())],
    );
    Ok(tc)
}

/// Settles one outstanding job of the current round.
fn settle_job(ctx: &mut TxContext<'_>, mut tc: TrainCouple) -> TxResult<TrainCouple> {
    tc.rem = tc
        .rem
        .checked_sub(1)
        .ok_or_else(|| ChaincodeError::Invariant("rem underflow".into()))?;
    if tc.rem == 0 {
        tc = complete_round(ctx, tc)?;
    }
    Ok(tc)
}

fn update_tj(
    ctx: &mut TxContext<'_>,
    tj_id: &str,
    model_hash: &str,
    nonce: &str,
    enc_model_url: &str,
) -> TxResult<String> {
    let tj: TrainJob = ctx.require(tj_id)?;
    let mut ci: CloudInstance = ctx.require(&tj.ci)?;
    if ci.co != ctx.caller {
        return Err(ChaincodeError::NotAssignee);
    }
    let tc: TrainCouple = ctx.require(&tj.tc)?;
    if tj.round != tc.round {
        return Err(ChaincodeError::WrongRound);
    }
    if tj.status != TjStatus::Pending {
        return Err(ChaincodeError::WrongStatus);
    }
    non_empty(model_hash, "model hash")?;
    non_empty(nonce, "nonce")?;
    non_empty(enc_model_url, "model location")?;

    let earlier = round_jobs(ctx, &tc)?
        .into_iter()
        .find(|other| other.status == TjStatus::Updated && other.model_hash.as_deref() == Some(model_hash));
    if let Some(first) = earlier {
        let evidence = format!("UpdateTJ replayed model hash already declared by TJ:{}", first.id);
        mark_fraud(ctx, ci, tj_id, CHAIN_REPORTER, &evidence)?;
        ctx.keep_writes = true;
        return Err(ChaincodeError::DuplicateCommitment);
    }

    let mut tj = tj
        .transition(TjStatus::Updated)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    tj.model_hash = Some(model_hash.to_string());
    tj.nonce = Some(nonce.to_string());
    tj.enc_model_url = Some(enc_model_url.to_string());
    ci.rounds += 1;
    let key = tj.key();
    ctx.emit(
        EventType::TJUpdated,
        key,
        &[
            ("tj", tj.id.clone()),
            ("tc", tc.id.clone()),
            ("ci", ci.id.clone()),
            ("dss", ci.dss.clone().unwrap_or_default()),
            ("round", tj.round.to_string()),
        ],
    );
    ctx.put(tj)?;
    ctx.put(ci)?;
    let tc = settle_job(ctx, tc)?;
    ctx.put(tc)?;
    Ok(tj_id.to_string())
}

/// Jobs of the current round of `tc`, read through the write buffer.
fn round_jobs(ctx: &TxContext<'_>, tc: &TrainCouple) -> TxResult<Vec<TrainJob>> {
    let mut jobs = Vec::new();
    for dss_id in &tc.cur_dss_ids {
        let dss: DataSubset = ctx.require(dss_id)?;
        for ci_id in &dss.ci_ids {
            if let Some(tj) = ctx.get::<TrainJob>(&train_job_id(&tc.id, ci_id, tc.round)) {
                jobs.push(tj);
            }
        }
    }
    Ok(jobs)
}

fn finish_tc(ctx: &mut TxContext<'_>, tc_id: &str, update: Option<(&str, &str)>) -> TxResult<String> {
    let (tc, model) = owned_couple(ctx, tc_id)?;
    let tc = tc
        .transition(TcStatus::Trained)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    publish_model(ctx, model, update)?;
    let key = tc.key();
    ctx.emit(
        EventType::TCFinished,
        key,
        &[("tc", tc_id.to_string()), ("round", tc.round.to_string())],
    );
    ctx.put(tc)?;
    Ok(tc_id.to_string())
}

fn flag_fraud(ctx: &mut TxContext<'_>, subject: &str, evidence: &str) -> TxResult<String> {
    let (ci, related_tc) = if let Some(ci) = ctx.get::<CloudInstance>(subject) {
        (ci, None)
    } else if let Some(tj) = ctx.get::<TrainJob>(subject) {
        (ctx.require::<CloudInstance>(&tj.ci)?, Some(tj.tc))
    } else {
        return Err(ChaincodeError::UnknownSubject(subject.to_string()));
    };
    let ds = dataset_of(ctx, &ci)?;
    let is_do = ds.owner == ctx.caller;
    let is_mo = || -> bool {
        let owns = |tc: &TrainCouple| {
            tc.ds == ds.id
                && ctx
                    .get::<ModelAsset>(&tc.model)
                    .is_some_and(|m| m.owner == ctx.caller)
        };
        match &related_tc {
            Some(tc_id) => ctx.get::<TrainCouple>(tc_id).is_some_and(|tc| owns(&tc)),
            None => ctx.base.all::<TrainCouple>().iter().any(owns),
        }
    };
    if !is_do && !is_mo() {
        return Err(ChaincodeError::NotParty);
    }
    if !CloudInstance::allows(ci.status, CiStatus::Fraud) {
        return Err(ChaincodeError::WrongStatus);
    }
    let caller = ctx.caller;
    mark_fraud(ctx, ci, subject, caller, evidence)?;
    Ok(asset_id(ctx.tx_id, "FR"))
}

fn record_fraud(
    ctx: &mut TxContext<'_>,
    ci: &CloudInstance,
    subject: &str,
    reporter: &str,
    evidence: &str,
) -> TxResult {
    let record = FraudRecord {
        id: asset_id(ctx.tx_id, "FR"),
        subject: subject.to_string(),
        ci: ci.id.clone(),
        reporter: reporter.to_string(),
        evidence: evidence.to_string(),
    };
    let key = record.key();
    ctx.emit(
        EventType::FraudFlagged,
        key,
        &[
            ("ci", ci.id.clone()),
            ("co", ci.co.clone()),
            ("subject", subject.to_string()),
            ("reporter", reporter.to_string()),
        ],
    );
    ctx.put(record)
}

/// Moves a cloud instance to Fraud, records the evidence and voids any job
/// it still owes in a running round.
fn mark_fraud(
    ctx: &mut TxContext<'_>,
    ci: CloudInstance,
    subject: &str,
    reporter: &str,
    evidence: &str,
) -> TxResult {
    let ci = ci
        .transition(CiStatus::Fraud)
        .map_err(|_| ChaincodeError::WrongStatus)?;
    record_fraud(ctx, &ci, subject, reporter, evidence)?;
    let ds = dataset_of(ctx, &ci)?;
    let running: Vec<TrainCouple> = ctx
        .base
        .scan(AssetKind::TC)
        .filter_map(|(key, _)| AssetKind::parse_key(key).map(|(_, id)| id.to_string()))
        .filter_map(|id| ctx.get::<TrainCouple>(&id))
        .filter(|tc| tc.ds == ds.id && tc.status == TcStatus::Training)
        .collect();
    for tc in running {
        let tj_id = train_job_id(&tc.id, &ci.id, tc.round);
        match ctx.get::<TrainJob>(&tj_id) {
            Some(tj) if tj.status == TjStatus::Pending => {
                let tj = tj
                    .transition(TjStatus::Voided)
                    .map_err(|_| ChaincodeError::WrongStatus)?;
                ctx.put(tj)?;
                let tc = settle_job(ctx, tc)?;
                ctx.put(tc)?;
            }
            _ => {}
        }
    }
    ctx.put(ci)
}
