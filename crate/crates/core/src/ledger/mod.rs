//! Append-only, hash-chained transaction log with a deterministic world
//! state.
//!
//! Submitted envelopes wait in a single FIFO queue. [`Ledger::tick`] cuts a
//! block as soon as either `block_size` transactions are pending or the
//! oldest one has waited `block_timeout_ms`, and commits it immediately by
//! running every transaction through the chaincode dispatcher. Blocks are
//! cut at the exact simulation time the rule fires, not at the tick time,
//! so a block's `cut_time` is a pure function of its contents.

mod block;
mod envelope;
mod events;
mod state;

use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

pub use block::{export_ndjson, import_ndjson, Block, BlockTx};
pub use envelope::{TransactionEnvelope, TxType};
pub use events::{EventType, LedgerEvent, Subscription};
pub use state::{StateEntry, WorldState};

use crate::chaincode::{self, ChaincodeError};
use crate::digest::Digest;
use events::EventBus;

pub const DEFAULT_BLOCK_SIZE: usize = 500;
pub const DEFAULT_BLOCK_TIMEOUT_MS: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error("unknown transaction type {0:?}")]
    UnknownTxType(String),
    #[error("duplicate tx_id {0}")]
    DuplicateTxId(String),
    #[error("clock regression: tick({now}) after tick({last})")]
    ClockRegression { now: u64, last: u64 },
    #[error("corrupt chain at block {height}: {reason}")]
    CorruptChain { height: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerConfig {
    pub block_size: usize,
    pub block_timeout_ms: u64,
    /// Carried as metadata only; block formation ignores it.
    pub formation_policy: String,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            block_size: DEFAULT_BLOCK_SIZE,
            block_timeout_ms: DEFAULT_BLOCK_TIMEOUT_MS,
            formation_policy: "2:3:1".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_id: String,
    /// Queue-entry time assigned to the envelope.
    pub queued_at: u64,
}

/// Result of executing one committed transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutcome {
    pub block_height: u64,
    pub valid: bool,
    pub error: Option<ChaincodeError>,
    /// Id of the asset the transaction created or updated.
    pub output: Option<String>,
}

pub struct Ledger {
    config: LedgerConfig,
    blocks: Vec<Block>,
    state: WorldState,
    pending: VecDeque<TransactionEnvelope>,
    tx_ids: HashSet<String>,
    outcomes: HashMap<String, TxOutcome>,
    events: Vec<LedgerEvent>,
    bus: EventBus,
    last_tick: u64,
    last_entry: u64,
}

impl Default for Ledger {
    fn default() -> Self {
        Ledger::new(LedgerConfig::default())
    }
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        assert!(config.block_size > 0, "block size must be positive");
        Ledger {
            config,
            blocks: vec![Block::genesis()],
            state: WorldState::new(),
            pending: VecDeque::new(),
            tx_ids: HashSet::new(),
            outcomes: HashMap::new(),
            events: Vec::new(),
            bus: EventBus::default(),
            last_tick: 0,
            last_entry: 0,
        }
    }

    /// Rebuilds a ledger from an exported block log, verifying it on the way.
    pub fn from_blocks(config: LedgerConfig, blocks: Vec<Block>) -> Result<Self, LedgerError> {
        let replayed = replay_blocks(&config, &blocks)?;
        let last_cut = blocks.last().map_or(0, |b| b.cut_time);
        let last_entry = blocks
            .iter()
            .flat_map(|b| b.txs.iter().map(|t| t.envelope.submit_time))
            .max()
            .unwrap_or(0);
        Ok(Ledger {
            config,
            tx_ids: blocks
                .iter()
                .flat_map(|b| b.txs.iter().map(|t| t.envelope.tx_id.clone()))
                .collect(),
            blocks,
            state: replayed.state,
            pending: VecDeque::new(),
            outcomes: replayed.outcomes,
            events: replayed.events,
            bus: EventBus::default(),
            last_tick: last_cut,
            last_entry,
        })
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    /// Queues an envelope. The queue-entry time is the envelope's
    /// `submit_time`, clamped so the queue stays ordered and never predates
    /// the last tick.
    pub fn submit(&mut self, mut env: TransactionEnvelope) -> Result<Receipt, LedgerError> {
        env.check_well_formed()?;
        if self.tx_ids.contains(&env.tx_id) {
            return Err(LedgerError::DuplicateTxId(env.tx_id));
        }
        env.submit_time = env.submit_time.max(self.last_entry).max(self.last_tick);
        self.last_entry = env.submit_time;
        self.tx_ids.insert(env.tx_id.clone());
        let receipt = Receipt {
            tx_id: env.tx_id.clone(),
            queued_at: env.submit_time,
        };
        self.pending.push_back(env);
        Ok(receipt)
    }

    /// Advances simulation time, cutting and committing every block whose
    /// cut rule fired at or before `now`.
    pub fn tick(&mut self, now: u64) -> Result<Vec<Block>, LedgerError> {
        if now < self.last_tick {
            return Err(LedgerError::ClockRegression {
                now,
                last: self.last_tick,
            });
        }
        self.last_tick = now;
        let mut cut = Vec::new();
        while let Some(cut_time) = self.next_cut_time() {
            if cut_time > now {
                break;
            }
            let take = self
                .pending
                .iter()
                .take(self.config.block_size)
                .take_while(|e| e.submit_time <= cut_time)
                .count();
            let txs: Vec<_> = self.pending.drain(..take).collect();
            cut.push(self.commit(txs, cut_time));
        }
        Ok(cut)
    }

    /// Cuts and commits everything pending, advancing the clock as far as
    /// needed. Returns the time of the last cut (or the current tick time).
    pub fn flush(&mut self) -> u64 {
        while let Some(t) = self.next_cut_time() {
            self.tick(t.max(self.last_tick)).expect("time only moves forward");
        }
        self.last_tick
    }

    fn next_cut_time(&self) -> Option<u64> {
        let oldest = self.pending.front()?;
        let timeout = oldest.submit_time + self.config.block_timeout_ms;
        let full = self
            .pending
            .get(self.config.block_size - 1)
            .map(|e| e.submit_time);
        Some(full.map_or(timeout, |t| t.min(timeout)))
    }

    fn commit(&mut self, envelopes: Vec<TransactionEnvelope>, cut_time: u64) -> Block {
        let prev = self.blocks.last().expect("genesis always present");
        let height = prev.height + 1;
        let prev_hash = prev.block_hash;
        let mut txs = Vec::with_capacity(envelopes.len());
        for env in envelopes {
            let exec = chaincode::execute(&self.state, &env, &prev_hash);
            let outcome = apply(&mut self.state, exec, &env, height, cut_time, &mut |ev| {
                self.bus.publish(&ev);
                self.events.push(ev);
            });
            txs.push(BlockTx {
                envelope: env.clone(),
                valid: outcome.valid,
                error: outcome.error.as_ref().map(|e| e.name().to_string()),
            });
            self.outcomes.insert(env.tx_id, outcome);
        }
        let block = Block::seal(height, prev_hash, txs, cut_time);
        self.blocks.push(block.clone());
        block
    }

    /// Latest committed value; pending writes are never visible.
    pub fn get_state(&self, key: &str) -> Option<&[u8]> {
        self.state.get(key)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Subscribes to events committed from now on.
    pub fn subscribe(&mut self, filter: &[EventType]) -> Subscription {
        self.bus.subscribe(filter)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Every event emitted since genesis, in commit order.
    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn outcome(&self, tx_id: &str) -> Option<&TxOutcome> {
        self.outcomes.get(tx_id)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn now(&self) -> u64 {
        self.last_tick
    }

    /// Re-executes the whole log on a fresh state.
    pub fn replay(&self) -> Result<WorldState, LedgerError> {
        replay_blocks(&self.config, &self.blocks).map(|r| r.state)
    }

    pub fn export(&self) -> String {
        export_ndjson(&self.blocks)
    }
}

fn apply(
    state: &mut WorldState,
    exec: chaincode::Execution,
    env: &TransactionEnvelope,
    height: u64,
    cut_time: u64,
    emit: &mut dyn FnMut(LedgerEvent),
) -> TxOutcome {
    let valid = exec.result.is_ok();
    if valid || exec.keep_writes {
        for (key, value) in exec.writes {
            state.put(key, value);
        }
        for ev in exec.events {
            emit(LedgerEvent {
                event_type: ev.event_type,
                key: ev.key,
                attrs: ev.attrs,
                tx_id: env.tx_id.clone(),
                block_height: height,
                emit_time: cut_time,
            });
        }
    }
    TxOutcome {
        block_height: height,
        valid,
        error: exec.result.err(),
        output: exec.output,
    }
}

/// State, events and outcomes reconstructed by [`replay_blocks`].
#[derive(Debug, Default)]
pub struct Replayed {
    pub state: WorldState,
    pub events: Vec<LedgerEvent>,
    pub outcomes: HashMap<String, TxOutcome>,
}

/// Verifies the chain and re-executes it from genesis.
///
/// Checks, per block: height sequence, prev-hash link, recomputed block hash,
/// block size, queue ordering and that `cut_time` is the time the cut rule
/// fires for the block's contents. Re-execution must reproduce every
/// recorded validity flag.
pub fn replay_blocks(config: &LedgerConfig, blocks: &[Block]) -> Result<Replayed, LedgerError> {
    let mut out = Replayed::default();
    let mut prev: Option<&Block> = None;
    let mut seen = HashSet::new();
    let mut last_entry = 0u64;
    for block in blocks {
        let corrupt = |reason: &str| LedgerError::CorruptChain {
            height: block.height,
            reason: reason.to_string(),
        };
        let (expect_height, expect_prev) = match prev {
            None => (0, Digest::ZERO),
            Some(p) => (p.height + 1, p.block_hash),
        };
        if block.height != expect_height {
            return Err(corrupt("height out of sequence"));
        }
        if block.prev_hash != expect_prev {
            return Err(corrupt("prev_hash mismatch"));
        }
        if Block::compute_hash(block.height, &block.prev_hash, &block.txs) != block.block_hash {
            return Err(corrupt("block_hash mismatch"));
        }
        if block.txs.len() > config.block_size {
            return Err(corrupt("block exceeds size limit"));
        }
        match prev {
            None if !block.txs.is_empty() || block.cut_time != 0 => {
                return Err(corrupt("genesis must be empty at time 0"))
            }
            None => {}
            Some(p) => {
                let (first, last) = match (block.txs.first(), block.txs.last()) {
                    (Some(f), Some(l)) => (f.envelope.submit_time, l.envelope.submit_time),
                    _ => return Err(corrupt("empty block after genesis")),
                };
                let expected_cut = if block.txs.len() == config.block_size {
                    last.min(first + config.block_timeout_ms)
                } else {
                    first + config.block_timeout_ms
                };
                if block.cut_time != expected_cut || block.cut_time < p.cut_time {
                    return Err(corrupt("cut_time does not follow the cut rule"));
                }
            }
        }
        for tx in &block.txs {
            let env = &tx.envelope;
            if env.submit_time < last_entry || env.submit_time > block.cut_time {
                return Err(corrupt("queue order violated"));
            }
            last_entry = env.submit_time;
            env.check_well_formed()
                .map_err(|e| corrupt(&format!("bad envelope: {e}")))?;
            if !seen.insert(env.tx_id.clone()) {
                return Err(corrupt("duplicate tx_id"));
            }
            let exec = chaincode::execute(&out.state, env, &block.prev_hash);
            let events = &mut out.events;
            let outcome = apply(&mut out.state, exec, env, block.height, block.cut_time, &mut |ev| {
                events.push(ev)
            });
            let error = outcome.error.as_ref().map(|e| e.name().to_string());
            if outcome.valid != tx.valid || error != tx.error {
                return Err(corrupt("re-execution disagrees with recorded validity"));
            }
            out.outcomes.insert(env.tx_id.clone(), outcome);
        }
        prev = Some(block);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaincode::asset_id;

    fn create_do(tx_id: &str, t: u64) -> TransactionEnvelope {
        TransactionEnvelope::new(tx_id, TxType::CreateDO, "", vec!["h1".into()], t)
    }

    #[test]
    fn valid_envelope_is_accepted() {
        let mut l = Ledger::default();
        let r = l.submit(create_do("t1", 0)).unwrap();
        assert_eq!(r.tx_id, "t1");
        assert_eq!(
            l.submit(create_do("t1", 0)),
            Err(LedgerError::DuplicateTxId("t1".into()))
        );
    }

    #[test]
    fn nothing_pending_cuts_nothing() {
        let mut l = Ledger::default();
        assert!(l.tick(5000).unwrap().is_empty());
        assert_eq!(l.blocks().len(), 1);
    }

    #[test]
    fn full_queue_cuts_exactly_block_size() {
        let mut l = Ledger::default();
        for i in 0..501 {
            l.submit(create_do(&format!("t{i}"), 0)).unwrap();
        }
        let blocks = l.tick(1).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].txs.len(), 500);
        assert_eq!(blocks[0].height, 1);
        assert_eq!(blocks[0].cut_time, 0);
        assert_eq!(l.pending_len(), 1);
    }

    #[test]
    fn five_hundred_at_zero_land_in_block_one() {
        let mut l = Ledger::default();
        for i in 0..500 {
            l.submit(create_do(&format!("t{i}"), 0)).unwrap();
        }
        let blocks = l.tick(1000).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].height, 1);
        assert!(blocks[0].cut_time <= 1000);
    }

    #[test]
    fn timeout_cut_fires_at_one_second() {
        let mut l = Ledger::default();
        for i in 0..3 {
            l.submit(create_do(&format!("t{i}"), 0)).unwrap();
        }
        assert!(l.tick(999).unwrap().is_empty());
        let blocks = l.tick(1000).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].txs.len(), 3);
        assert_eq!(blocks[0].cut_time, 1000);
    }

    #[test]
    fn late_tick_cuts_at_rule_time() {
        let mut l = Ledger::default();
        l.submit(create_do("a", 0)).unwrap();
        l.submit(create_do("b", 1500)).unwrap();
        let blocks = l.tick(10_000).unwrap();
        assert_eq!(blocks.iter().map(|b| b.cut_time).collect::<Vec<_>>(), vec![1000, 2500]);
    }

    #[test]
    fn clock_cannot_go_back() {
        let mut l = Ledger::default();
        l.tick(10).unwrap();
        assert_eq!(l.tick(9), Err(LedgerError::ClockRegression { now: 9, last: 10 }));
    }

    #[test]
    fn state_reads_only_committed_values() {
        let mut l = Ledger::default();
        l.submit(create_do("t1", 0)).unwrap();
        let key = format!("DO:{}", asset_id("t1", "DO"));
        assert_eq!(l.get_state(&key), None);
        l.flush();
        assert!(l.get_state(&key).is_some());
        assert_eq!(l.state().version(&key), 1);
        assert_eq!(l.get_state("DO:unknown"), None);
    }

    #[test]
    fn hash_chain_links_and_replays() {
        let mut l = Ledger::default();
        for i in 0..7 {
            l.submit(create_do(&format!("t{i}"), i * 400)).unwrap();
        }
        l.flush();
        let blocks = l.blocks();
        assert!(blocks.len() > 2);
        for w in blocks.windows(2) {
            assert_eq!(w[1].prev_hash, w[0].block_hash);
            assert_eq!(w[1].height, w[0].height + 1);
        }
        assert_eq!(l.replay().unwrap(), *l.state());
    }

    #[test]
    fn empty_log_replays_to_empty_state() {
        let cfg = LedgerConfig::default();
        assert!(replay_blocks(&cfg, &[]).unwrap().state.is_empty());
        assert!(Ledger::default().replay().unwrap().is_empty());
    }

    #[test]
    fn tampered_body_is_corrupt() {
        let mut l = Ledger::default();
        l.submit(create_do("t1", 0)).unwrap();
        l.flush();
        let mut blocks = l.blocks().to_vec();
        blocks[1].txs[0].envelope.args[0] = "h2".into();
        assert!(matches!(
            replay_blocks(l.config(), &blocks),
            Err(LedgerError::CorruptChain { height: 1, .. })
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let mut l = Ledger::default();
        for i in 0..3 {
            l.submit(create_do(&format!("t{i}"), 0)).unwrap();
        }
        l.flush();
        let text = l.export();
        assert_eq!(text.lines().count(), l.blocks().len());
        let blocks = import_ndjson(&text).unwrap();
        assert_eq!(blocks, l.blocks());
        let rebuilt = Ledger::from_blocks(LedgerConfig::default(), blocks).unwrap();
        assert_eq!(rebuilt.state(), l.state());
    }

    #[test]
    fn subscribers_see_only_later_events_in_order() {
        let mut l = Ledger::default();
        // Register a DO and a CO, then a dataset shell with one subset.
        l.submit(create_do("do", 0)).unwrap();
        l.submit(TransactionEnvelope::new("co", TxType::CreateCO, "", vec![], 0)).unwrap();
        l.flush();
        let do_id = asset_id("do", "DO");
        let co_id = asset_id("co", "CO");
        let early = l.subscribe(&[EventType::CICreated]);
        let other = l.subscribe(&[EventType::CICreated]);
        let unrelated = l.subscribe(&[EventType::RoundStarted]);
        let t = l.now();
        let ds_id = asset_id("ds", "DS");
        let dss_id = asset_id("dss", "DSS");
        for env in [
            TransactionEnvelope::new("ds", TxType::CreateDS, &do_id, vec!["2".into(), "2".into(), "".into()], t),
            TransactionEnvelope::new("dss", TxType::CreateDSS, &do_id, vec![ds_id, "0".into(), "1".into()], t),
            TransactionEnvelope::new("ci1", TxType::CreateCI, &do_id, vec![dss_id.clone(), co_id.clone()], t),
        ] {
            l.submit(env).unwrap();
        }
        l.flush();
        let late = l.subscribe(&[EventType::CICreated]);
        l.submit(TransactionEnvelope::new("ci2", TxType::CreateCI, &do_id, vec![dss_id, co_id], l.now()))
            .unwrap();
        l.flush();
        let got: Vec<_> = early.drain().into_iter().map(|e| e.tx_id).collect();
        assert_eq!(got, vec!["ci1", "ci2"]);
        assert_eq!(other.drain().len(), 2);
        assert!(unrelated.drain().is_empty());
        assert_eq!(late.drain().into_iter().map(|e| e.tx_id).collect::<Vec<_>>(), vec!["ci2"]);
    }
}
