use std::collections::BTreeMap;

use crate::assets::{CloudInstance, Dataset};
use crate::chaincode::asset_id;
use crate::dataplane::{split, verify_commitment, Chunk, LabeledDataset};
use crate::digest::Digest;
use crate::ledger::{EventType, Ledger, Subscription, TxType};

use super::offchain::{Delivery, Env, Identity};
use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Register,
    AwaitClouds,
    Distributed,
}

pub struct DataOwner {
    pub(crate) id: Identity,
    events: Subscription,
    phase: Phase,
    data: LabeledDataset,
    m: usize,
    n: usize,
    split_seed: Digest,
    bad_chunk_to: Option<String>,
    pub ds_id: Option<String>,
    pub chunks: Vec<Chunk>,
    /// Bytes handed to each cloud instance.
    pub sent: BTreeMap<String, Vec<u8>>,
}

/// Chunk bytes with the first row repeated. Still a parseable chunk.
pub fn altered(bytes: &[u8]) -> Vec<u8> {
    let first = bytes.iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| i + 1);
    let mut out = bytes.to_vec();
    out.extend_from_slice(&bytes[..first]);
    out
}

impl DataOwner {
    pub(crate) fn new(
        id: Identity,
        ledger: &mut Ledger,
        data: LabeledDataset,
        m: usize,
        n: usize,
        bad_chunk_to: Option<String>,
    ) -> Self {
        let split_seed = Digest::of_parts(&[&id.seed, b"|split"]);
        DataOwner {
            events: ledger.subscribe(&[EventType::CIJoined, EventType::TCRequested]),
            id,
            phase: Phase::Register,
            data,
            m,
            n,
            split_seed,
            bad_chunk_to,
            ds_id: None,
            chunks: Vec::new(),
            sent: BTreeMap::new(),
        }
    }

    pub(crate) fn step(&mut self, env: &mut Env<'_>) -> Result<(), ScenarioError> {
        self.id.settle(env);
        match self.phase {
            Phase::Register => {
                let tx = self.id.submit(env, TxType::CreateDO, vec!["data-owner".into()]);
                self.id.member_id = asset_id(&tx, "DO");
                self.phase = Phase::AwaitClouds;
            }
            Phase::AwaitClouds => self.distribute(env)?,
            Phase::Distributed => {}
        }
        for ev in self.events.drain() {
            match ev.event_type {
                EventType::CIJoined => {
                    let Some(ci) = ev.attr("ci") else { continue };
                    let Some(bytes) = self.sent.get(ci) else { continue };
                    let Some(rec) = env.ledger.state().read::<CloudInstance>(ci) else { continue };
                    let ok = match (&rec.hash, &rec.nonce) {
                        (Some(h), Some(nonce)) => verify_commitment(h, bytes, nonce),
                        _ => false,
                    };
                    self.id.submit(env, TxType::VerifyCI, vec![ci.to_string(), ok.to_string()]);
                }
                EventType::TCRequested if ev.attr("ds") == self.ds_id.as_deref() => {
                    let tc = ev.attr("tc").unwrap_or_default().to_string();
                    self.id.submit(env, TxType::ApproveTC, vec![tc]);
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn distribute(&mut self, env: &mut Env<'_>) -> Result<(), ScenarioError> {
        let state = env.ledger.state();
        let registered = |id: &str| state.get(&format!("DO:{id}")).is_some() || state.get(&format!("CO:{id}")).is_some();
        if !registered(&self.id.member_id) {
            return Ok(());
        }
        let clouds: Vec<(String, String)> = env
            .off
            .directory
            .iter()
            .filter(|(_, id)| registered(id))
            .take(self.m * self.n)
            .cloned()
            .collect();
        if clouds.len() < self.m * self.n {
            return Ok(());
        }
        self.chunks = split(&self.data, self.m, self.split_seed.as_bytes())?;
        let meta = serde_json::json!({
            "features": self.data.dim(),
            "labels": self.data.label_count,
            "rows": self.data.rows.len(),
        })
        .to_string();
        let tx = self.id.submit(env, TxType::CreateDS, vec![self.m.to_string(), self.n.to_string(), meta]);
        let ds_id = asset_id(&tx, "DS");
        for chunk in &self.chunks {
            let tx = self.id.submit(env, TxType::CreateDSS, vec![
                ds_id.clone(),
                chunk.subset_index.to_string(),
                chunk.rows.len().to_string(),
            ]);
            let dss_id = asset_id(&tx, "DSS");
            for replica in 0..self.n {
                let (endpoint, co) = &clouds[chunk.subset_index * self.n + replica];
                let tx = self.id.submit(env, TxType::CreateCI, vec![dss_id.clone(), co.clone()]);
                let ci = asset_id(&tx, "CI");
                let bytes = if self.bad_chunk_to.as_ref() == Some(endpoint) {
                    self.id.log(env, "send_altered_chunk", &[("ci", ci.clone())]);
                    altered(&chunk.chunk_bytes)
                } else {
                    chunk.chunk_bytes.clone()
                };
                env.off.mailbox.entry(co.clone()).or_default().push(Delivery {
                    ci: ci.clone(),
                    bytes: bytes.clone(),
                });
                self.sent.insert(ci, bytes);
            }
        }
        env.off.catalog.push(ds_id.clone());
        self.id.log(env, "distributed", &[("ds", ds_id.clone()), ("chunks", self.chunks.len().to_string())]);
        self.ds_id = Some(ds_id);
        self.phase = Phase::Distributed;
        Ok(())
    }

    pub fn dataset(&self, ledger: &Ledger) -> Option<Dataset> {
        ledger.state().read(self.ds_id.as_deref()?)
    }
}
