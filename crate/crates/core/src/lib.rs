//! A blockchain-mediated AI marketplace: data owners split and replicate
//! datasets across cloud owners, model owners train federated models over
//! them, and a hash-chained ledger records the commitments that make every
//! step verifiable. A discrete-event network simulator reproduces the
//! throughput and latency behaviour of such a ledger.

pub mod assets;
pub mod chaincode;
pub mod digest;
pub mod ledger;
pub mod dataplane;
pub mod fedtrain;
pub mod simnet;
pub mod actors;
