use std::collections::{BTreeMap, HashSet};
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    CICreated,
    CIJoined,
    CIVerified,
    TCRequested,
    TCApproved,
    RoundStarted,
    TJUpdated,
    RoundComplete,
    TCFinished,
    FraudFlagged,
}

impl EventType {
    pub const ALL: [EventType; 10] = [
        EventType::CICreated,
        EventType::CIJoined,
        EventType::CIVerified,
        EventType::TCRequested,
        EventType::TCApproved,
        EventType::RoundStarted,
        EventType::TJUpdated,
        EventType::RoundComplete,
        EventType::TCFinished,
        EventType::FraudFlagged,
    ];
}

/// Notification of a committed state change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub event_type: EventType,
    /// World-state key of the asset the event is about.
    pub key: String,
    /// Summary fields; lists are comma-joined.
    pub attrs: BTreeMap<String, String>,
    pub tx_id: String,
    pub block_height: u64,
    pub emit_time: u64,
}

impl LedgerEvent {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).map(String::as_str)
    }

    pub fn attr_list(&self, name: &str) -> Vec<String> {
        match self.attr(name) {
            Some("") | None => Vec::new(),
            Some(s) => s.split(',').map(str::to_string).collect(),
        }
    }
}

/// Receiving end of a subscription. Events arrive in commit order.
#[derive(Debug)]
pub struct Subscription {
    rx: Receiver<LedgerEvent>,
}

impl Subscription {
    pub fn try_next(&self) -> Option<LedgerEvent> {
        self.rx.try_recv().ok()
    }

    /// All events delivered so far and not yet taken.
    pub fn drain(&self) -> Vec<LedgerEvent> {
        self.rx.try_iter().collect()
    }
}

#[derive(Debug, Default)]
pub(crate) struct EventBus {
    subscribers: Vec<(HashSet<EventType>, Sender<LedgerEvent>)>,
}

impl EventBus {
    pub(crate) fn subscribe(&mut self, filter: &[EventType]) -> Subscription {
        let (tx, rx) = channel();
        self.subscribers.push((filter.iter().copied().collect(), tx));
        Subscription { rx }
    }

    pub(crate) fn publish(&mut self, event: &LedgerEvent) {
        // Dropped subscriptions are pruned lazily.
        self.subscribers
            .retain(|(filter, tx)| !filter.contains(&event.event_type) || tx.send(event.clone()).is_ok());
    }
}
