use thiserror::Error;

use crate::assets::{DataSubset, Dataset, TjStatus, TrainCouple, TrainJob, TrainingMethod};
use crate::chaincode::{asset_id, dataset_ready, train_job_id};
use crate::dataplane::verify_commitment;
use crate::digest::Digest;
use crate::fedtrain::{
    fed_average, mask, published_model_hash, unmask, MaskKey, MaskedModel, ModelParams, TrainingSpec,
};
use crate::ledger::{EventType, Ledger, Subscription, TxType};

use super::offchain::{Env, Identity};
use super::ScenarioError;

/// No group of byte-identical replica models holds a strict majority.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no majority among {reported} replica models of DSS {dss} (largest group {largest}, n={n})")]
pub struct QuorumFailure {
    pub dss: String,
    pub round: u32,
    pub n: usize,
    pub reported: usize,
    pub largest: usize,
}

/// A downloaded replica model, already checked against its posted hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaModel {
    pub tj: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Consensus {
    pub model: Vec<u8>,
    pub agreeing: Vec<String>,
    /// Jobs whose model differs from the majority.
    pub outliers: Vec<String>,
}

/// Groups replica models by byte equality and returns the largest group's
/// model when it has more than `n/2` members. Ties go to the group seen
/// first.
pub fn mo_consensus(dss: &str, round: u32, models: &[ReplicaModel], n: usize) -> Result<Consensus, QuorumFailure> {
    let mut groups: Vec<(&[u8], Vec<&str>)> = Vec::new();
    for m in models {
        match groups.iter_mut().find(|(bytes, _)| *bytes == m.bytes.as_slice()) {
            Some((_, members)) => members.push(&m.tj),
            None => groups.push((&m.bytes, vec![&m.tj])),
        }
    }
    let best = groups
        .iter()
        .enumerate()
        .max_by_key(|(i, (_, members))| (members.len(), std::cmp::Reverse(*i)))
        .map(|(_, g)| g);
    let largest = best.map_or(0, |(_, members)| members.len());
    match best {
        Some((bytes, members)) if 2 * members.len() > n => Ok(Consensus {
            model: bytes.to_vec(),
            agreeing: members.iter().map(|s| s.to_string()).collect(),
            outliers: models
                .iter()
                .filter(|m| m.bytes.as_slice() != *bytes)
                .map(|m| m.tj.clone())
                .collect(),
        }),
        _ => Err(QuorumFailure {
            dss: dss.to_string(),
            round,
            n,
            reported: models.len(),
            largest,
        }),
    }
}

/// Global model after one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub cur_dss_ids: Vec<String>,
    /// Subset indices of `cur_dss_ids`.
    pub subsets: Vec<usize>,
    pub model: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Register,
    AwaitDataset,
    AwaitApproval,
    Training,
    Finishing,
    Done,
    Failed,
}

pub struct ModelOwner {
    pub(crate) id: Identity,
    events: Subscription,
    phase: Phase,
    key: MaskKey,
    key_material: Vec<u8>,
    spec: TrainingSpec,
    rounds: u32,
    pub ds_id: Option<String>,
    pub mod_id: Option<String>,
    pub tc_id: Option<String>,
    global: Option<ModelParams>,
    pub history: Vec<RoundRecord>,
    pub quorum_failure: Option<QuorumFailure>,
}

impl ModelOwner {
    pub(crate) fn new(id: Identity, ledger: &mut Ledger, spec: TrainingSpec, rounds: u32) -> Self {
        let key_material = Digest::of_parts(&[&id.seed, b"|mask"]).as_bytes().to_vec();
        let key = MaskKey::derive(format!("key-{}", &Digest::of(&key_material).to_hex()[..16]), &key_material);
        ModelOwner {
            events: ledger.subscribe(&[EventType::TCApproved, EventType::RoundComplete]),
            id,
            phase: Phase::Register,
            key,
            key_material,
            spec,
            rounds,
            ds_id: None,
            mod_id: None,
            tc_id: None,
            global: None,
            history: Vec::new(),
            quorum_failure: None,
        }
    }

    /// Finished or stopped on a quorum failure.
    pub fn is_settled(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Failed)
    }

    pub fn final_model(&self) -> Option<&ModelParams> {
        (self.phase == Phase::Done).then_some(self.global.as_ref()).flatten()
    }

    pub fn initial_model(&self, features: usize) -> ModelParams {
        ModelParams::zeros(features)
    }

    pub(crate) fn step(&mut self, env: &mut Env<'_>) -> Result<(), ScenarioError> {
        self.id.settle(env);
        match self.phase {
            Phase::Register => {
                let tx = self.id.submit(env, TxType::CreateMO, vec!["model-owner".into()]);
                self.id.member_id = asset_id(&tx, "MO");
                env.off.keys.insert(self.key.id.clone(), self.key.clone());
                env.off
                    .key_material
                    .insert(self.key.id.clone(), self.key_material.clone());
                self.phase = Phase::AwaitDataset;
            }
            Phase::AwaitDataset => self.request(env)?,
            Phase::Finishing => {
                let tc = self.tc_id.as_deref().unwrap_or_default();
                if env.ledger.state().read::<TrainCouple>(tc).is_some_and(|t| t.status == crate::assets::TcStatus::Trained) {
                    self.phase = Phase::Done;
                }
            }
            _ => {}
        }
        for ev in self.events.drain() {
            if ev.attr("tc") != self.tc_id.as_deref() {
                continue;
            }
            match (ev.event_type, &self.phase) {
                (EventType::TCApproved, Phase::AwaitApproval) => {
                    let tc = self.tc_id.clone().unwrap_or_default();
                    self.id.submit(env, TxType::StartRound, vec![tc]);
                    self.phase = Phase::Training;
                }
                (EventType::RoundComplete, Phase::Training) => self.aggregate(env)?,
                _ => {}
            }
        }
        Ok(())
    }

    fn request(&mut self, env: &mut Env<'_>) -> Result<(), ScenarioError> {
        let state = env.ledger.state();
        let Some(ds) = env
            .off
            .catalog
            .iter()
            .filter_map(|id| state.read::<Dataset>(id))
            .find(|ds| dataset_ready(state, ds))
        else {
            return Ok(());
        };
        let meta: serde_json::Value = serde_json::from_str(&ds.sample_meta)
            .map_err(|e| ScenarioError::Actor(format!("dataset metadata: {e}")))?;
        let features = meta["features"]
            .as_u64()
            .ok_or_else(|| ScenarioError::Actor("dataset metadata lacks a feature count".into()))?;
        let initial = self.initial_model(features as usize);
        let (url, hash) = self.publish(env, &initial)?;
        let method = TrainingMethod {
            learning_rate: self.spec.learning_rate,
            local_epochs: self.spec.local_epochs,
            mask_id: self.key.id.clone(),
        };
        let method = serde_json::to_string(&method).expect("training method serializes");
        let tx = self.id.submit(env, TxType::CreateMod, vec!["linear-regression".into(), url, method, hash]);
        let mod_id = asset_id(&tx, "MOD");
        let tx = self.id.submit(env, TxType::RequestTC, vec![ds.id.clone(), mod_id.clone()]);
        self.tc_id = Some(asset_id(&tx, "TC"));
        self.mod_id = Some(mod_id);
        self.ds_id = Some(ds.id);
        self.global = Some(initial);
        self.phase = Phase::AwaitApproval;
        Ok(())
    }

    /// Masks and stores a model; returns its locator and published hash.
    fn publish(&mut self, env: &mut Env<'_>, p: &ModelParams) -> Result<(String, String), ScenarioError> {
        let mm = mask(p, &self.key)?;
        let url = self.id.next_locator();
        env.off.objects.insert(url.clone(), mm.to_bytes());
        Ok((url, published_model_hash(&mm)))
    }

    fn download(&self, env: &Env<'_>, tj: &TrainJob) -> Option<Vec<u8>> {
        let locator = self.key.open_locator(tj.enc_model_url.as_deref()?)?;
        env.off.objects.get(&locator).cloned()
    }

    fn aggregate(&mut self, env: &mut Env<'_>) -> Result<(), ScenarioError> {
        let tc_id = self.tc_id.clone().unwrap_or_default();
        let state = env.ledger.state();
        let tc: TrainCouple = state
            .read(&tc_id)
            .ok_or_else(|| ScenarioError::Actor(format!("unknown TC {tc_id}")))?;
        let ds: Dataset = state
            .read(&tc.ds)
            .ok_or_else(|| ScenarioError::Actor(format!("unknown DS {}", tc.ds)))?;

        let mut flags: Vec<(String, String)> = Vec::new();
        let mut consensus: Vec<(Vec<u8>, f64)> = Vec::new();
        let mut failure = None;
        for dss_id in &tc.cur_dss_ids {
            let dss: DataSubset = state
                .read(dss_id)
                .ok_or_else(|| ScenarioError::Actor(format!("unknown DSS {dss_id}")))?;
            let mut models = Vec::new();
            for ci in &dss.ci_ids {
                let Some(tj) = state.read::<TrainJob>(&train_job_id(&tc.id, ci, tc.round)) else {
                    continue;
                };
                if tj.status != TjStatus::Updated {
                    continue;
                }
                let bytes = self.download(env, &tj);
                let matches = match (&bytes, &tj.model_hash, &tj.nonce) {
                    (Some(b), Some(h), Some(nonce)) => verify_commitment(h, b, nonce),
                    _ => false,
                };
                match bytes {
                    Some(bytes) if matches => models.push(ReplicaModel { tj: tj.id, bytes }),
                    _ => flags.push((tj.id, "downloaded model does not match the posted hash".into())),
                }
            }
            match mo_consensus(dss_id, tc.round, &models, ds.n as usize) {
                Ok(c) => {
                    for tj in c.outliers {
                        flags.push((tj, "model disagrees with the replica majority".into()));
                    }
                    consensus.push((c.model, dss.rows as f64));
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }

        for (tj, evidence) in flags {
            self.id.log(env, "flag", &[("tj", tj.clone()), ("evidence", evidence.clone())]);
            self.id.submit(env, TxType::FlagFraud, vec![tj, evidence]);
        }
        if let Some(e) = failure {
            self.id.log(env, "quorum_failure", &[("dss", e.dss.clone()), ("round", e.round.to_string())]);
            self.quorum_failure = Some(e);
            self.phase = Phase::Failed;
            return Ok(());
        }

        let mut locals = Vec::with_capacity(consensus.len());
        for (bytes, weight) in consensus {
            locals.push((unmask(&MaskedModel::from_bytes(&bytes)?, &self.key)?, weight));
        }
        let global = fed_average(&locals)?;
        let subsets = tc
            .cur_dss_ids
            .iter()
            .map(|id| ds.dss_ids.iter().position(|d| d == id).unwrap_or(usize::MAX))
            .collect();
        self.history.push(RoundRecord {
            round: tc.round,
            cur_dss_ids: tc.cur_dss_ids.clone(),
            subsets,
            model: global.clone(),
        });
        let (url, hash) = self.publish(env, &global)?;
        self.global = Some(global);
        if tc.round < self.rounds {
            self.id.submit(env, TxType::StartRound, vec![tc_id, url, hash]);
        } else {
            self.id.submit(env, TxType::FinishTC, vec![tc_id, url, hash]);
            self.phase = Phase::Finishing;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rm(tj: &str, bytes: &[u8]) -> ReplicaModel {
        ReplicaModel {
            tj: tj.into(),
            bytes: bytes.to_vec(),
        }
    }

    #[test]
    fn majority_of_three_wins() {
        let c = mo_consensus("d", 1, &[rm("a", b"good"), rm("b", b"lazy"), rm("c", b"good")], 3).unwrap();
        assert_eq!(c.model, b"good");
        assert_eq!(c.agreeing, vec!["a", "c"]);
        assert_eq!(c.outliers, vec!["b"]);
    }

    #[test]
    fn two_distinct_fakes_break_quorum() {
        let err = mo_consensus("d", 1, &[rm("a", b"good"), rm("b", b"x"), rm("c", b"y")], 3).unwrap_err();
        assert_eq!(err.largest, 1);
    }

    #[test]
    fn single_replica_is_its_own_majority() {
        let c = mo_consensus("d", 1, &[rm("a", b"m")], 1).unwrap();
        assert!(c.outliers.is_empty());
    }

    #[test]
    fn majority_counts_against_n_not_reports() {
        // Two of five replicas were voided; the remaining three agree.
        let ok = mo_consensus("d", 1, &[rm("a", b"m"), rm("b", b"m"), rm("c", b"m")], 5);
        assert!(ok.is_ok());
        let short = mo_consensus("d", 1, &[rm("a", b"m"), rm("b", b"m")], 5);
        assert!(short.is_err());
        assert!(mo_consensus("d", 1, &[], 1).is_err());
    }
}
