//! On-disk formats for embeddings and action logs.
//!
//! Embedding blob (all integers and floats little-endian):
//!
//! ```text
//! "MSG1" | u32 dimension | u64 count | count × { u64 pin | f32 × dimension | f32 quality }
//! ```
//!
//! Action logs are JSON lines: `{"user":u64,"pin":u64,"ts":u64,"kind":"repin"|"click"|"impression"}`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ActionKind, ActionLog, ActionRecord, PinId, PinStore, UserId};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MSG1";

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never sees a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format("path", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_embeddings(store: &PinStore) -> Vec<u8> {
    let d = store.dimension();
    let mut out = Vec::with_capacity(16 + store.len() * (12 + 4 * d));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (pin, values, quality) in store.iter() {
        out.extend_from_slice(&pin.to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&quality.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<PinStore> {
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    take(&mut cur, &mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::format("embedding blob", "bad magic"));
    }
    let dimension = u32::from_le_bytes(take_array(&mut cur)?) as usize;
    let count = u64::from_le_bytes(take_array(&mut cur)?) as usize;
    let record = 12 + 4 * dimension;
    if cur.len() != count.saturating_mul(record) {
        return Err(Error::format(
            "embedding blob",
            format!(
                "expected {count} records of {record} bytes, found {} bytes",
                cur.len()
            ),
        ));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let pin = u64::from_le_bytes(take_array(&mut cur)?);
        let mut values = Vec::with_capacity(dimension);
        for _ in 0..dimension {
            values.push(f32::from_le_bytes(take_array(&mut cur)?));
        }
        let quality = f32::from_le_bytes(take_array(&mut cur)?);
        entries.push((pin, values, quality));
    }
    PinStore::from_entries(dimension, entries)
}

fn take(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::format("embedding blob", "truncated"))
}

fn take_array<const N: usize>(cur: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    take(cur, &mut buf)?;
    Ok(buf)
}

pub fn write_embeddings(path: &Path, store: &PinStore) -> Result<()> {
    write_atomic(path, &encode_embeddings(store))
}

pub fn read_embeddings(path: &Path) -> Result<PinStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionLine {
    user: UserId,
    pin: PinId,
    ts: u64,
    kind: ActionKind,
}

/// A single action line, in file order.
pub type Event = (UserId, ActionRecord);

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ActionLine = serde_json::from_str(&line).map_err(|e| {
            Error::format("action log", format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        events.push((
            parsed.user,
            ActionRecord::new(parsed.pin, parsed.ts, parsed.kind),
        ));
    }
    Ok(events)
}

/// Groups events by user; logs come back sorted by user id.
pub fn group_events(events: impl IntoIterator<Item = Event>) -> Vec<ActionLog> {
    let mut by_user: BTreeMap<UserId, Vec<ActionRecord>> = BTreeMap::new();
    for (user, rec) in events {
        by_user.entry(user).or_default().push(rec);
    }
    by_user
        .into_iter()
        .map(|(user, recs)| ActionLog::new(user, recs))
        .collect()
}

pub fn read_actions(path: &Path) -> Result<Vec<ActionLog>> {
    Ok(group_events(read_events(path)?))
}

/// Serializes logs as time-ordered JSON lines (ties broken by user id).
pub fn encode_actions(logs: &[ActionLog]) -> Vec<u8> {
    let mut events: Vec<Event> = logs
        .iter()
        .flat_map(|log| log.records().iter().map(move |r| (log.user(), *r)))
        .collect();
    events.sort_by_key(|(user, r)| (r.timestamp, *user));
    let mut out = BufWriter::new(Vec::new());
    for (user, r) in events {
        let line = ActionLine {
            user,
            pin: r.pin,
            ts: r.timestamp,
            kind: r.kind,
        };
        serde_json::to_writer(&mut out, &line).expect("serializing to memory");
        out.write_all(b"\n").expect("writing to memory");
    }
    out.into_inner().expect("flushing to memory")
}

pub fn write_actions(path: &Path, logs: &[ActionLog]) -> Result<()> {
    write_atomic(path, &encode_actions(logs))
}
