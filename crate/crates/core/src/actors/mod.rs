//! Data-owner, cloud-owner and model-owner agents driving the chaincode
//! through a shared ledger, plus the checks that audit them afterwards.
//!
//! Actors only see the ledger through events and state reads. Chunk bytes,
//! model files and mask keys travel through [`OffChain`]. A scenario runs
//! in a single thread with a deterministic step order, so the same config
//! and seed always produce the same block log.

mod cloud_owner;
mod config;
mod data_owner;
mod market;
mod model_owner;
mod offchain;
mod verify;

use thiserror::Error;

use crate::dataplane::DataError;
use crate::fedtrain::{MaskError, TrainError};
use crate::ledger::LedgerError;

pub use cloud_owner::CloudOwner;
pub use config::{DataGen, Expectations, FraudStrategy, Role, RosterEntry, ScenarioConfig, TrainingConfig};
pub use data_owner::{altered, DataOwner};
pub use market::{centralized_fedavg, run_scenario, Market, ScenarioRun, MAX_STEPS};
pub use model_owner::{mo_consensus, Consensus, ModelOwner, QuorumFailure, ReplicaModel, RoundRecord};
pub use offchain::{ActorLog, Delivery, Evidence, LogEntry, OffChain};
pub use verify::{subject_ci, verify_suite, Check, Verdict, VerificationReport};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("scenario stalled after {steps} steps")]
    Stalled { steps: usize },
    #[error("{0}")]
    Actor(String),
}
