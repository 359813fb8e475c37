use std::collections::BTreeMap;

use serde::Serialize;

use crate::assets::{canonical_json, Asset, AssetError, AssetKind, AssetRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateEntry {
    #[serde(serialize_with = "as_utf8")]
    pub value: Vec<u8>,
    /// Number of committed writes to the key.
    pub version: u64,
}

fn as_utf8<S: serde::Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(bytes))
}

/// Key-value materialization of the committed transaction log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<String, StateEntry>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(|e| e.value.as_slice())
    }

    pub fn version(&self, key: &str) -> u64 {
        self.entries.get(key).map_or(0, |e| e.version)
    }

    pub fn put(&mut self, key: String, value: Vec<u8>) {
        let entry = self.entries.entry(key).or_insert(StateEntry {
            value: Vec::new(),
            version: 0,
        });
        entry.value = value;
        entry.version += 1;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StateEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries whose key starts with `"<kind>:"`, in key order.
    pub fn scan(&self, kind: AssetKind) -> impl Iterator<Item = (&str, &[u8])> {
        let prefix = format!("{}:", kind.prefix());
        self.entries
            .range(prefix.clone()..)
            .take_while(move |(k, _)| k.starts_with(&prefix))
            .map(|(k, v)| (k.as_str(), v.value.as_slice()))
    }

    pub fn asset(&self, key: &str) -> Option<Result<Asset, AssetError>> {
        self.get(key).map(Asset::deserialize)
    }

    /// Reads a typed asset by id. Absent keys and kind mismatches both give
    /// `None`; corrupt bytes panic since the state only holds validated assets.
    pub fn read<T: AssetRecord>(&self, id: &str) -> Option<T> {
        let bytes = self.get(&T::KIND.key(id))?;
        let asset = Asset::deserialize(bytes).expect("world state holds only valid assets");
        T::unwrap(asset)
    }

    pub fn all<T: AssetRecord>(&self) -> Vec<T> {
        self.scan(T::KIND)
            .filter_map(|(_, bytes)| T::unwrap(Asset::deserialize(bytes).ok()?))
            .collect()
    }

    /// Canonical dump used for byte-identity checks and file export.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(&self.entries)
    }
}
