use std::collections::BTreeMap;

use crate::assets::{ModelAsset, TrainCouple, TrainJob};
use crate::chaincode::{asset_id, train_job_id};
use crate::dataplane::{commit, parse_chunk_csv};
use crate::digest::prf_unit;
use crate::fedtrain::{local_train, mask, unmask, MaskKey, MaskedModel, ModelParams, Sample, TrainingSpec};
use crate::ledger::{EventType, Ledger, LedgerEvent, Subscription, TxType};

use super::config::FraudStrategy;
use super::data_owner::altered;
use super::offchain::{Env, Identity};
use super::ScenarioError;

struct Holding {
    dss: String,
    bytes: Vec<u8>,
}

/// A CopyHash job waiting for a sibling to post first.
struct Copying {
    tc: String,
    round: u32,
    dss: String,
    tj: String,
    sealed_url: String,
}

pub struct CloudOwner {
    pub(crate) id: Identity,
    pub fraud: FraudStrategy,
    events: Subscription,
    registered: bool,
    holdings: BTreeMap<String, Holding>,
    copying: Vec<Copying>,
}

impl CloudOwner {
    pub(crate) fn new(id: Identity, ledger: &mut Ledger, fraud: FraudStrategy) -> Self {
        CloudOwner {
            events: ledger.subscribe(&[EventType::CICreated, EventType::RoundStarted, EventType::TJUpdated]),
            id,
            fraud,
            registered: false,
            holdings: BTreeMap::new(),
            copying: Vec::new(),
        }
    }

    /// Chunk bytes held per cloud instance.
    pub fn received(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.holdings.iter().map(|(ci, h)| (ci.as_str(), h.bytes.as_slice()))
    }

    pub(crate) fn step(&mut self, env: &mut Env<'_>) -> Result<(), ScenarioError> {
        self.id.settle(env);
        if !self.registered {
            let tx = self.id.submit(env, TxType::CreateCO, vec![]);
            self.id.member_id = asset_id(&tx, "CO");
            env.off
                .directory
                .push((self.id.endpoint.clone(), self.id.member_id.clone()));
            self.registered = true;
        }
        for ev in self.events.drain() {
            match ev.event_type {
                EventType::CICreated if ev.attr("co") == Some(self.id.member_id.as_str()) => self.join(env, &ev),
                EventType::RoundStarted => self.train_round(env, &ev)?,
                EventType::TJUpdated => self.copy_from(env, &ev),
                _ => {}
            }
        }
        Ok(())
    }

    fn join(&mut self, env: &mut Env<'_>, ev: &LedgerEvent) {
        let ci = ev.attr("ci").unwrap_or_default().to_string();
        let inbox = env.off.mailbox.entry(self.id.member_id.clone()).or_default();
        let Some(pos) = inbox.iter().position(|d| d.ci == ci) else {
            self.id.log(env, "missing_chunk", &[("ci", ci)]);
            return;
        };
        let bytes = inbox.remove(pos).bytes;
        let payload = match self.fraud {
            FraudStrategy::WrongData => altered(&bytes),
            _ => bytes.clone(),
        };
        let nonce = self.id.next_nonce();
        let c = commit(&payload, &nonce).expect("nonce has the right length");
        self.holdings.insert(ci.clone(), Holding {
            dss: ev.attr("dss").unwrap_or_default().to_string(),
            bytes,
        });
        self.id.submit(env, TxType::JoinCI, vec![ci, c.hash, c.nonce]);
    }

    fn train_round(&mut self, env: &mut Env<'_>, ev: &LedgerEvent) -> Result<(), ScenarioError> {
        let tc_id = ev.attr("tc").unwrap_or_default();
        let round: u32 = ev.attr("round").and_then(|r| r.parse().ok()).unwrap_or(0);
        let mine: Vec<String> = ev
            .attr_list("ci_ids")
            .into_iter()
            .filter(|ci| self.holdings.contains_key(ci))
            .collect();
        if mine.is_empty() {
            return Ok(());
        }
        let state = env.ledger.state();
        let tc: TrainCouple = state.read(tc_id).ok_or_else(|| ScenarioError::Actor(format!("unknown TC {tc_id}")))?;
        let model: ModelAsset = state
            .read(&tc.model)
            .ok_or_else(|| ScenarioError::Actor(format!("unknown MOD {}", tc.model)))?;
        let key = env
            .off
            .keys
            .get(&model.training_method.mask_id)
            .cloned()
            .ok_or_else(|| ScenarioError::Actor("mask key not shared".into()))?;
        let incoming_bytes = env
            .off
            .objects
            .get(&model.model_url)
            .ok_or_else(|| ScenarioError::Actor(format!("model {} not in store", model.model_url)))?;
        let incoming = MaskedModel::from_bytes(incoming_bytes)?;
        let params = unmask(&incoming, &key)?;
        let spec = TrainingSpec {
            learning_rate: model.training_method.learning_rate,
            local_epochs: model.training_method.local_epochs,
        };

        for ci in mine {
            let tj = train_job_id(tc_id, &ci, round);
            let holding = &self.holdings[&ci];
            let dss = holding.dss.clone();
            let out = match self.fraud {
                FraudStrategy::LazyModel => mask(&self.perturb(&params, round), &key)?,
                FraudStrategy::CopyHash => incoming.clone(),
                FraudStrategy::None | FraudStrategy::WrongData => {
                    let rows = parse_chunk_csv(&holding.bytes)?;
                    let samples: Vec<Sample> = rows.iter().map(Sample::from).collect();
                    mask(&local_train(&params, &samples, &spec)?, &key)?
                }
            };
            let sealed_url = self.upload(env, &out, &key);
            if self.fraud == FraudStrategy::CopyHash {
                self.copying.push(Copying {
                    tc: tc_id.to_string(),
                    round,
                    dss,
                    tj,
                    sealed_url,
                });
                continue;
            }
            let nonce = self.id.next_nonce();
            let c = commit(&out.to_bytes(), &nonce).expect("nonce has the right length");
            self.id.submit(env, TxType::UpdateTJ, vec![tj, c.hash, c.nonce, sealed_url]);
        }
        Ok(())
    }

    fn upload(&mut self, env: &mut Env<'_>, model: &MaskedModel, key: &MaskKey) -> String {
        let locator = self.id.next_locator();
        env.off.objects.insert(locator.clone(), model.to_bytes());
        key.seal_locator(&locator)
    }

    /// Untrained parameters nudged by an amount unique to this actor.
    fn perturb(&self, p: &ModelParams, round: u32) -> ModelParams {
        let delta = 1e-3 * (1.0 + prf_unit(&self.id.seed, u64::from(round)));
        ModelParams {
            weights: p.weights.iter().map(|w| w + delta).collect(),
        }
    }

    fn copy_from(&mut self, env: &mut Env<'_>, ev: &LedgerEvent) {
        let (Some(tc), Some(dss), Some(tj_id)) = (ev.attr("tc"), ev.attr("dss"), ev.attr("tj")) else {
            return;
        };
        let round: u32 = ev.attr("round").and_then(|r| r.parse().ok()).unwrap_or(0);
        let Some(pos) = self
            .copying
            .iter()
            .position(|c| c.tc == tc && c.round == round && c.dss == dss && c.tj != tj_id)
        else {
            return;
        };
        let Some(source) = env.ledger.state().read::<TrainJob>(tj_id) else {
            return;
        };
        let (Some(hash), Some(nonce)) = (source.model_hash, source.nonce) else {
            return;
        };
        let job = self.copying.remove(pos);
        self.id.submit(env, TxType::UpdateTJ, vec![job.tj, hash, nonce, job.sealed_url]);
    }
}
