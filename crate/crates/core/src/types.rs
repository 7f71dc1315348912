//! Domain types shared by every stage: pins, their embeddings, and user action logs.

use std::collections::HashMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PinId = u64;
pub type UserId = u64;

pub const SECONDS_PER_DAY: u64 = 86_400;

/// Ages are measured in days; importance and decay rates are per-day.
pub fn age_days(now: u64, ts: u64) -> f64 {
    now.saturating_sub(ts) as f64 / SECONDS_PER_DAY as f64
}

/// A validated, owned embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DimensionTooSmall(values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for Embedding {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// The fixed embedding table: every pin with its vector and a quality score.
///
/// Rows are kept sorted by pin id so that every scan over the store is
/// deterministic.
#[derive(Debug, Clone)]
pub struct PinStore {
    dimension: usize,
    ids: Vec<PinId>,
    values: Vec<f32>,
    quality: Vec<f32>,
    rows: HashMap<PinId, usize>,
}

impl PinStore {
    /// Builds a store from `(pin, embedding, quality)` entries.
    pub fn from_entries<I>(dimension: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (PinId, Vec<f32>, f32)>,
    {
        if dimension < 2 {
            return Err(Error::DimensionTooSmall(dimension));
        }
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|e| e.0);

        let mut store = PinStore {
            dimension,
            ids: Vec::with_capacity(entries.len()),
            values: Vec::with_capacity(entries.len() * dimension),
            quality: Vec::with_capacity(entries.len()),
            rows: HashMap::with_capacity(entries.len()),
        };
        for (pin, values, quality) in entries {
            if store.rows.contains_key(&pin) {
                return Err(Error::DuplicatePin(pin));
            }
            if values.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: values.len(),
                });
            }
            let emb = Embedding::new(values)?;
            if !(0.0..=1.0).contains(&quality) {
                return Err(Error::format(
                    "pin store",
                    format!("quality {quality} of pin {pin} outside [0, 1]"),
                ));
            }
            store.rows.insert(pin, store.ids.len());
            store.ids.push(pin);
            store.values.extend_from_slice(&emb);
            store.quality.push(quality);
        }
        Ok(store)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Pin ids in ascending order.
    pub fn ids(&self) -> &[PinId] {
        &self.ids
    }

    pub fn contains(&self, pin: PinId) -> bool {
        self.rows.contains_key(&pin)
    }

    pub fn row_of(&self, pin: PinId) -> Option<usize> {
        self.rows.get(&pin).copied()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.dimension..(row + 1) * self.dimension]
    }

    pub fn embedding(&self, pin: PinId) -> Option<&[f32]> {
        self.row_of(pin).map(|r| self.row(r))
    }

    pub fn quality(&self, pin: PinId) -> Option<f32> {
        self.row_of(pin).map(|r| self.quality[r])
    }

    pub fn iter(&self) -> impl Iterator<Item = (PinId, &[f32], f32)> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(r, &pin)| (pin, self.row(r), self.quality[r]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Repin,
    Click,
    Impression,
}

impl ActionKind {
    /// Repins and clicks are engagements; impressions are negatives.
    pub fn is_engagement(self) -> bool {
        matches!(self, ActionKind::Repin | ActionKind::Click)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionRecord {
    pub pin: PinId,
    pub timestamp: u64,
    pub kind: ActionKind,
}

impl ActionRecord {
    pub fn new(pin: PinId, timestamp: u64, kind: ActionKind) -> Self {
        ActionRecord {
            pin,
            timestamp,
            kind,
        }
    }
}

/// One user's actions in non-decreasing timestamp order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionLog {
    user: UserId,
    records: Vec<ActionRecord>,
}

impl ActionLog {
    /// Sorts the records by timestamp; equal timestamps keep their input order.
    pub fn new(user: UserId, mut records: Vec<ActionRecord>) -> Self {
        records.sort_by_key(|r| r.timestamp);
        ActionLog { user, records }
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn records(&self) -> &[ActionRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Repins and clicks only.
    pub fn engagements(&self) -> impl Iterator<Item = &ActionRecord> + '_ {
        self.records.iter().filter(|r| r.kind.is_engagement())
    }

    /// Records with `from <= timestamp < until`.
    pub fn window(&self, from: u64, until: u64) -> ActionLog {
        let lo = self.records.partition_point(|r| r.timestamp < from);
        let hi = self.records.partition_point(|r| r.timestamp < until);
        ActionLog {
            user: self.user,
            records: self.records[lo..hi].to_vec(),
        }
    }

    /// Appends records and restores timestamp order.
    pub fn extend(&mut self, more: impl IntoIterator<Item = ActionRecord>) {
        self.records.extend(more);
        self.records.sort_by_key(|r| r.timestamp);
    }
}
