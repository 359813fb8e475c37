//! Mechanical checks that each participant did what it claims, computed
//! from the block log plus bytes held by the actors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assets::{
    AssetKind, CloudInstance, DataSubset, Dataset, ModelAsset, TjStatus, TrainCouple, TrainJob,
};
use crate::chaincode::{select_subsets, tx_seed};
use crate::dataplane::verify_commitment;
use crate::ledger::{replay_blocks, Block, EventType, LedgerConfig, LedgerError, TxType, WorldState};

use super::offchain::Evidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Check {
    DataClaim,
    DuplicateCommit,
    ReceivedData,
    CIVerify,
    ModelDownload,
    ModelHashCopy,
    RoundSelectionIndependence,
    IdentityOpacity,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::DataClaim,
        Check::DuplicateCommit,
        Check::ReceivedData,
        Check::CIVerify,
        Check::ModelDownload,
        Check::ModelHashCopy,
        Check::RoundSelectionIndependence,
        Check::IdentityOpacity,
    ];
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("{self:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Asset id the check is about.
    pub subject: String,
    pub check: Check,
    pub verdict: Verdict,
    pub evidence: String,
}

impl VerificationReport {
    fn new(subject: &str, check: Check, ok: bool, evidence: impl Into<String>) -> Self {
        VerificationReport {
            subject: subject.to_string(),
            check,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            evidence: evidence.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<26} {} {}", self.check, self.subject, self.evidence)
    }
}

/// Cloud instance a report's subject belongs to, if any.
pub fn subject_ci(state: &WorldState, subject: &str) -> Option<String> {
    if state.read::<CloudInstance>(subject).is_some() {
        return Some(subject.to_string());
    }
    state.read::<TrainJob>(subject).map(|tj| tj.ci)
}

struct Suite<'a> {
    blocks: &'a [Block],
    state: WorldState,
    events: Vec<crate::ledger::LedgerEvent>,
    ev: &'a Evidence,
    reports: Vec<VerificationReport>,
}

/// Replays `blocks` and runs every check. Fails only if the chain itself
/// does not verify.
pub fn verify_suite(
    config: &LedgerConfig,
    blocks: &[Block],
    evidence: &Evidence,
) -> Result<Vec<VerificationReport>, LedgerError> {
    let replayed = replay_blocks(config, blocks)?;
    let mut suite = Suite {
        blocks,
        state: replayed.state,
        events: replayed.events,
        ev: evidence,
        reports: Vec::new(),
    };
    suite.data_claim();
    suite.duplicate_commit();
    suite.received_data();
    suite.ci_verify();
    suite.model_download();
    suite.model_hash_copy();
    suite.round_selection();
    suite.identity_opacity();
    Ok(suite.reports)
}

impl Suite<'_> {
    fn envelopes(&self, tx_type: TxType) -> impl Iterator<Item = (&Block, &crate::ledger::BlockTx)> {
        self.blocks
            .iter()
            .flat_map(|b| b.txs.iter().map(move |t| (b, t)))
            .filter(move |(_, t)| t.envelope.tx_type == tx_type)
    }

    /// Model bytes behind a sealed locator, opened with the couple's key.
    fn fetch(&self, tc_id: &str, sealed: &str) -> Option<Vec<u8>> {
        let tc: TrainCouple = self.state.read(tc_id)?;
        let model: ModelAsset = self.state.read(&tc.model)?;
        let key = self.ev.key(&model.training_method.mask_id)?;
        let locator = key.open_locator(sealed)?;
        self.ev.objects.get(&locator).cloned()
    }

    fn updated_jobs(&self) -> Vec<TrainJob> {
        self.state
            .all::<TrainJob>()
            .into_iter()
            .filter(|tj| tj.status == TjStatus::Updated)
            .collect()
    }

    fn dss_of(&self, ci: &str) -> Option<String> {
        self.state.read::<CloudInstance>(ci)?.dss
    }

    fn push(&mut self, subject: &str, check: Check, ok: bool, evidence: impl Into<String>) {
        self.reports.push(VerificationReport::new(subject, check, ok, evidence));
    }

    /// Each posted model must agree with at least `quorum - 1` replicas
    /// trained on the same subset in the same round.
    fn data_claim(&mut self) {
        let jobs = self.updated_jobs();
        let mut models: HashMap<&str, Option<Vec<u8>>> = HashMap::new();
        for tj in &jobs {
            let bytes = tj.enc_model_url.as_deref().and_then(|u| self.fetch(&tj.tc, u));
            models.insert(&tj.id, bytes);
        }
        let mut out = Vec::new();
        for tj in &jobs {
            let dss = self.dss_of(&tj.ci);
            let Some(Some(mine)) = models.get(tj.id.as_str()) else {
                out.push((tj.id.clone(), false, "model not retrievable".to_string()));
                continue;
            };
            let replicas = self
                .state
                .read::<DataSubset>(dss.as_deref().unwrap_or_default())
                .map_or(1, |d| d.ci_ids.len());
            let agreeing = jobs
                .iter()
                .filter(|o| o.id != tj.id && o.tc == tj.tc && o.round == tj.round && self.dss_of(&o.ci) == dss)
                .filter(|o| models.get(o.id.as_str()).and_then(Option::as_ref) == Some(mine))
                .count();
            let needed = self.ev.quorum.min(replicas).max(1);
            out.push((
                tj.id.clone(),
                1 + agreeing >= needed,
                format!("{} of {needed} required replicas agree", 1 + agreeing),
            ));
        }
        for (s, ok, e) in out {
            self.push(&s, Check::DataClaim, ok, e);
        }
    }

    /// No declared hash or nonce may repeat an earlier declaration,
    /// including ones the chaincode rejected.
    fn duplicate_commit(&mut self) {
        let mut hashes: HashMap<(TxType, String), String> = HashMap::new();
        let mut nonces: HashMap<String, String> = HashMap::new();
        let mut verdicts: BTreeMap<String, (bool, String)> = BTreeMap::new();
        let declarations: Vec<_> = self
            .blocks
            .iter()
            .flat_map(|b| &b.txs)
            .filter(|t| matches!(t.envelope.tx_type, TxType::JoinCI | TxType::UpdateTJ))
            .map(|t| (t.envelope.tx_type, t.envelope.args.clone()))
            .collect();
        for (tx_type, args) in declarations {
            let (subject, hash, nonce) = (&args[0], &args[1], &args[2]);
            let mut problems = Vec::new();
            if let Some(first) = hashes.get(&(tx_type, hash.clone())) {
                problems.push(format!("hash first declared by {first}"));
            }
            if let Some(first) = nonces.get(nonce) {
                problems.push(format!("nonce first declared by {first}"));
            }
            hashes.entry((tx_type, hash.clone())).or_insert_with(|| subject.clone());
            nonces.entry(nonce.clone()).or_insert_with(|| subject.clone());
            let entry = verdicts.entry(subject.clone()).or_insert((true, String::new()));
            if !problems.is_empty() {
                *entry = (false, problems.join("; "));
            }
        }
        for (subject, (ok, e)) in verdicts {
            let e = if ok { "all declarations unique".to_string() } else { e };
            self.push(&subject, Check::DuplicateCommit, ok, e);
        }
    }

    /// A cloud owner hashes its own chunk with each sibling's nonce; a
    /// strict majority of declaring holders must agree with it.
    fn received_data(&mut self) {
        let mut out = Vec::new();
        for (ci_id, bytes) in &self.ev.received {
            let Some(ci) = self.state.read::<CloudInstance>(ci_id) else { continue };
            let Some(dss) = ci.dss.as_deref().and_then(|d| self.state.read::<DataSubset>(d)) else {
                continue;
            };
            let siblings: Vec<CloudInstance> = dss
                .ci_ids
                .iter()
                .filter(|id| *id != ci_id)
                .filter_map(|id| self.state.read::<CloudInstance>(id))
                .filter(|s| s.hash.is_some() && s.nonce.is_some())
                .collect();
            if siblings.is_empty() {
                out.push((ci_id.clone(), true, "no sibling declarations to compare".to_string()));
                continue;
            }
            let matching = siblings
                .iter()
                .filter(|s| verify_commitment(s.hash.as_deref().unwrap(), bytes, s.nonce.as_deref().unwrap()))
                .count();
            let holders = siblings.len() + 1;
            out.push((
                ci_id.clone(),
                2 * (matching + 1) > holders,
                format!("{matching} of {} siblings match", siblings.len()),
            ));
        }
        for (s, ok, e) in out {
            self.push(&s, Check::ReceivedData, ok, e);
        }
    }

    /// The data owner recomputes each declared data commitment.
    fn ci_verify(&mut self) {
        let mut out = Vec::new();
        for ci in self.state.all::<CloudInstance>() {
            let ok = match (&ci.hash, &ci.nonce, self.ev.sent.get(&ci.id)) {
                (Some(h), Some(nonce), Some(bytes)) => {
                    let m = verify_commitment(h, bytes, nonce);
                    (m, if m { "commitment matches distributed chunk" } else { "commitment does not match distributed chunk" })
                }
                (None, _, _) | (_, None, _) => (false, "no commitment declared"),
                (_, _, None) => (false, "data owner holds no bytes for this instance"),
            };
            out.push((ci.id, ok.0, ok.1));
        }
        for (s, ok, e) in out {
            self.push(&s, Check::CIVerify, ok, e);
        }
    }

    /// Downloaded bytes plus the posted nonce reproduce the posted hash.
    fn model_download(&mut self) {
        let mut out = Vec::new();
        for tj in self.updated_jobs() {
            let bytes = tj.enc_model_url.as_deref().and_then(|u| self.fetch(&tj.tc, u));
            let (ok, e) = match (bytes, &tj.model_hash, &tj.nonce) {
                (Some(b), Some(h), Some(n)) if verify_commitment(h, &b, n) => (true, "download matches posted hash"),
                (None, _, _) => (false, "model not retrievable"),
                _ => (false, "download does not match posted hash"),
            };
            out.push((tj.id, ok, e));
        }
        for (s, ok, e) in out {
            self.push(&s, Check::ModelDownload, ok, e);
        }
    }

    /// Every model declaration, accepted or not, must hash the declaring
    /// job's own upload with its own nonce.
    fn model_hash_copy(&mut self) {
        let mut verdicts: BTreeMap<String, (bool, String)> = BTreeMap::new();
        let mut seen: HashMap<String, String> = HashMap::new();
        let decls: Vec<Vec<String>> = self
            .envelopes(TxType::UpdateTJ)
            .map(|(_, t)| t.envelope.args.clone())
            .collect();
        for args in decls {
            let (tj_id, hash, nonce, sealed) = (&args[0], &args[1], &args[2], &args[3]);
            let tc = self.state.read::<TrainJob>(tj_id).map(|t| t.tc).unwrap_or_default();
            let mut problems = Vec::new();
            match self.fetch(&tc, sealed) {
                Some(bytes) if verify_commitment(hash, &bytes, nonce) => {}
                Some(_) => problems.push("own upload does not reproduce the declared hash".to_string()),
                None => problems.push("own upload not retrievable".to_string()),
            }
            if let Some(first) = seen.get(hash).filter(|f| *f != tj_id) {
                problems.push(format!("hash already declared by {first}"));
            }
            seen.entry(hash.clone()).or_insert_with(|| tj_id.clone());
            let entry = verdicts.entry(tj_id.clone()).or_insert((true, String::new()));
            if !problems.is_empty() {
                *entry = (false, problems.join("; "));
            }
        }
        for (subject, (ok, e)) in verdicts {
            let e = if ok { "declared hash is over own upload".to_string() } else { e };
            self.push(&subject, Check::ModelHashCopy, ok, e);
        }
    }

    /// Round selections derive from the ledger seed alone.
    fn round_selection(&mut self) {
        let mut first_start: HashMap<String, String> = HashMap::new();
        let starts: Vec<(String, String, String)> = self
            .envelopes(TxType::StartRound)
            .filter(|(_, t)| t.valid)
            .map(|(b, t)| (t.envelope.args[0].clone(), b.prev_hash.to_hex(), t.envelope.tx_id.clone()))
            .collect();
        for (tc, prev, tx) in starts {
            first_start.entry(tc).or_insert_with(|| format!("{prev}|{tx}"));
        }
        let mut out = Vec::new();
        for tc in self.state.all::<TrainCouple>() {
            let Some(seed_hex) = &tc.selection_seed else { continue };
            let mut problems = Vec::new();
            let expected_seed = first_start.get(&tc.id).and_then(|s| {
                let (prev, tx) = s.split_once('|')?;
                Some(tx_seed(&crate::digest::Digest::from_hex(prev)?, tx).to_hex())
            });
            if expected_seed.as_deref() != Some(seed_hex.as_str()) {
                problems.push("selection seed does not derive from the first StartRound".to_string());
            }
            let ds: Option<Dataset> = self.state.read(&tc.ds);
            let seed = hex::decode(seed_hex).unwrap_or_default();
            let mut rounds = 0;
            for ev in self
                .events
                .iter()
                .filter(|e| e.event_type == EventType::RoundStarted && e.attr("tc") == Some(tc.id.as_str()))
            {
                rounds += 1;
                let round: u32 = ev.attr("round").and_then(|r| r.parse().ok()).unwrap_or(0);
                let expected: Option<Vec<String>> = ds.as_ref().map(|ds| {
                    select_subsets(&seed, ds.dss_ids.len(), round)
                        .into_iter()
                        .map(|i| ds.dss_ids[i].clone())
                        .collect()
                });
                if expected != Some(ev.attr_list("cur_dss_ids")) {
                    problems.push(format!("round {round} selection differs from the seeded choice"));
                }
            }
            let ok = problems.is_empty();
            let e = if ok { format!("{rounds} round(s) match the seeded selection") } else { problems.join("; ") };
            out.push((tc.id, ok, e));
        }
        for (s, ok, e) in out {
            self.push(&s, Check::RoundSelectionIndependence, ok, e);
        }
    }

    /// No world-state value carries an actor endpoint.
    fn identity_opacity(&mut self) {
        let endpoints: Vec<&str> = self.ev.endpoints.iter().map(String::as_str).filter(|e| !e.is_empty()).collect();
        let leaks = |bytes: &[u8]| -> Vec<String> {
            endpoints
                .iter()
                .filter(|e| bytes.windows(e.len()).any(|w| w == e.as_bytes()))
                .map(|e| e.to_string())
                .collect()
        };
        let members: HashSet<AssetKind> = [AssetKind::DO, AssetKind::CO, AssetKind::MO].into();
        let mut out = Vec::new();
        for (key, entry) in self.state.iter() {
            let Some((kind, id)) = AssetKind::parse_key(key) else { continue };
            let found = leaks(&entry.value);
            if members.contains(&kind) {
                let ok = found.is_empty();
                let e = if ok { "no endpoint in member record".to_string() } else { format!("contains {}", found.join(", ")) };
                out.push((id.to_string(), ok, e));
            } else if !found.is_empty() {
                out.push((id.to_string(), false, format!("contains {}", found.join(", "))));
            }
        }
        for (s, ok, e) in out {
            self.push(&s, Check::IdentityOpacity, ok, e);
        }
    }
}
