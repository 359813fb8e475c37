use std::collections::BTreeSet;

use crate::assets::{CloudInstance, FraudRecord};
use crate::dataplane::Chunk;
use crate::fedtrain::{ModelParams, TrainingSpec};
use crate::ledger::{Ledger, LedgerConfig, TxType};

use super::cloud_owner::CloudOwner;
use super::config::{Role, ScenarioConfig};
use super::data_owner::DataOwner;
use super::model_owner::{ModelOwner, QuorumFailure, RoundRecord};
use super::offchain::{ActorLog, Env, Evidence, Identity, OffChain};
use super::verify::{subject_ci, verify_suite, VerificationReport};
use super::ScenarioError;

/// Upper bound on simulated seconds before a scenario counts as stalled.
pub const MAX_STEPS: usize = 100_000;

const STEP_MS: u64 = 1000;

/// All actors of one scenario sharing a ledger and an off-chain store.
pub struct Market {
    pub ledger: Ledger,
    pub off: OffChain,
    pub log: ActorLog,
    pub now: u64,
    pub data_owner: DataOwner,
    pub clouds: Vec<CloudOwner>,
    pub model_owner: ModelOwner,
    steps: usize,
}

impl Market {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate().map_err(ScenarioError::Config)?;
        let mut ledger = Ledger::new(LedgerConfig::default());
        let do_entry = cfg.entries(Role::DO).next().expect("validated");
        let do_id = Identity::new(&do_entry.endpoint, "DO", cfg.seed);
        let data = cfg.data.generate(&do_id.seed);
        let data_owner = DataOwner::new(do_id, &mut ledger, data, cfg.m, cfg.n, do_entry.bad_chunk_to.clone());
        let clouds = cfg
            .entries(Role::CO)
            .map(|e| CloudOwner::new(Identity::new(&e.endpoint, "CO", cfg.seed), &mut ledger, e.fraud))
            .collect();
        let mo_entry = cfg.entries(Role::MO).next().expect("validated");
        let model_owner = ModelOwner::new(
            Identity::new(&mo_entry.endpoint, "MO", cfg.seed),
            &mut ledger,
            cfg.training.into(),
            cfg.rounds,
        );
        Ok(Market {
            ledger,
            off: OffChain::default(),
            log: ActorLog::default(),
            now: 0,
            data_owner,
            clouds,
            model_owner,
            steps: 0,
        })
    }

    /// One simulated second: every actor reacts, then the ledger cuts
    /// whatever blocks are due. Returns the number of transactions sent.
    pub fn step(&mut self) -> Result<usize, ScenarioError> {
        let mut env = Env {
            ledger: &mut self.ledger,
            off: &mut self.off,
            log: &mut self.log,
            now: self.now,
            submitted: 0,
        };
        self.data_owner.step(&mut env)?;
        for co in &mut self.clouds {
            co.step(&mut env)?;
        }
        self.model_owner.step(&mut env)?;
        let submitted = env.submitted;
        self.now += STEP_MS;
        self.ledger.tick(self.now)?;
        self.steps += 1;
        Ok(submitted)
    }

    /// Steps until nothing is pending and no actor reacts any more.
    pub fn run(&mut self) -> Result<(), ScenarioError> {
        loop {
            let submitted = self.step()?;
            if submitted == 0 && self.ledger.pending_len() == 0 {
                break;
            }
            if self.steps >= MAX_STEPS {
                return Err(ScenarioError::Stalled { steps: self.steps });
            }
        }
        if self.model_owner.is_settled() {
            Ok(())
        } else {
            Err(ScenarioError::Stalled { steps: self.steps })
        }
    }

    pub fn evidence(&self, quorum: usize, endpoints: Vec<String>) -> Evidence {
        Evidence {
            sent: self.data_owner.sent.clone(),
            received: self
                .clouds
                .iter()
                .flat_map(|c| c.received())
                .map(|(ci, b)| (ci.to_string(), b.to_vec()))
                .collect(),
            objects: self.off.objects.clone(),
            mask_keys: self.off.key_material.clone(),
            endpoints,
            quorum,
        }
    }
}

/// Everything a finished scenario leaves behind.
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub ledger: Ledger,
    pub log: ActorLog,
    pub evidence: Evidence,
    pub directory: Vec<(String, String)>,
    pub chunks: Vec<Chunk>,
    pub final_model: Option<ModelParams>,
    pub rounds: Vec<RoundRecord>,
    pub quorum_failure: Option<QuorumFailure>,
    pub reports: Vec<VerificationReport>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, ScenarioError> {
    let mut market = Market::new(cfg)?;
    market.run()?;
    let endpoints = cfg.roster.iter().map(|e| e.endpoint.clone()).collect();
    let evidence = market.evidence(cfg.quorum, endpoints);
    let reports = verify_suite(market.ledger.config(), market.ledger.blocks(), &evidence)?;
    Ok(ScenarioRun {
        config: cfg.clone(),
        evidence,
        directory: market.off.directory.clone(),
        chunks: market.data_owner.chunks.clone(),
        final_model: market.model_owner.final_model().cloned(),
        rounds: market.model_owner.history.clone(),
        quorum_failure: market.model_owner.quorum_failure.clone(),
        reports,
        log: market.log,
        ledger: market.ledger,
    })
}

impl ScenarioRun {
    /// Cloud instances named in fraud records.
    pub fn flagged_cis(&self) -> BTreeSet<String> {
        self.ledger
            .state()
            .all::<FraudRecord>()
            .into_iter()
            .map(|r| r.ci)
            .collect()
    }

    /// Endpoints of cloud owners holding a flagged instance.
    pub fn flagged_endpoints(&self) -> BTreeSet<String> {
        let state = self.ledger.state();
        self.flagged_cis()
            .iter()
            .filter_map(|ci| state.read::<CloudInstance>(ci))
            .filter_map(|ci| {
                self.directory
                    .iter()
                    .find(|(_, id)| *id == ci.co)
                    .map(|(e, _)| e.clone())
            })
            .collect()
    }

    pub fn failed_reports(&self) -> impl Iterator<Item = &VerificationReport> {
        self.reports.iter().filter(|r| !r.passed())
    }

    /// Distinct transaction types among committed valid transactions.
    pub fn valid_tx_types(&self) -> BTreeSet<TxType> {
        self.ledger
            .blocks()
            .iter()
            .flat_map(|b| &b.txs)
            .filter(|t| t.valid)
            .map(|t| t.envelope.tx_type)
            .collect()
    }

    /// Ways the run departs from its configured expectations. Failing
    /// reports are tolerated only about instances that were flagged.
    pub fn expectation_mismatches(&self) -> Vec<String> {
        let mut out = Vec::new();
        let flagged = self.flagged_cis();
        let expect = &self.config.expect;
        if flagged.len() != expect.fraud_flags {
            out.push(format!("expected {} fraud flag(s), got {}", expect.fraud_flags, flagged.len()));
        }
        if self.quorum_failure.is_some() != expect.quorum_failure {
            out.push(match &self.quorum_failure {
                Some(e) => format!("unexpected quorum failure: {e}"),
                None => "expected a quorum failure".to_string(),
            });
        }
        let state = self.ledger.state();
        for r in self.failed_reports() {
            let attributed = subject_ci(state, &r.subject).is_some_and(|ci| flagged.contains(&ci));
            if !attributed {
                out.push(format!("unattributed failure: {r}"));
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.expectation_mismatches().is_empty()
    }
}

/// Reference federated training on one machine: the same rounds, subset
/// selections and arithmetic order, with no ledger, masking or
/// serialization in the way.
pub fn centralized_fedavg(
    chunks: &[Chunk],
    features: usize,
    spec: &TrainingSpec,
    selections: &[Vec<usize>],
) -> ModelParams {
    let mut global = vec![0.0; features + 1];
    for picked in selections {
        let mut acc = vec![0.0; features + 1];
        let mut total = 0.0;
        for &s in picked {
            let rows = &chunks[s].rows;
            let mut w = global.clone();
            for _ in 0..spec.local_epochs {
                let mut grad = vec![0.0; features + 1];
                for r in rows {
                    let mut pred = 0.0;
                    for (wi, xi) in w[..features].iter().zip(&r.features) {
                        pred += wi * xi;
                    }
                    let resid = pred + w[features] - f64::from(r.label);
                    for (g, x) in grad.iter_mut().zip(&r.features) {
                        *g += resid * x;
                    }
                    grad[features] += resid;
                }
                let scale = 2.0 / rows.len() as f64;
                for (wi, g) in w.iter_mut().zip(&grad) {
                    *wi -= spec.learning_rate * (g * scale);
                }
            }
            let weight = rows.len() as f64;
            for (a, x) in acc.iter_mut().zip(&w) {
                *a += weight * x;
            }
            total += weight;
        }
        global = acc.into_iter().map(|a| a / total).collect();
    }
    ModelParams { weights: global }
}
