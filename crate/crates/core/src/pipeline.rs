//! Two-pronged serving: a daily batch job rebuilds every profile from the
//! trailing window, and a lightweight online path folds the current day's
//! engagements into the served profile until the next batch run replaces it.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use tracing::warn;

use crate::distance::sq_dist;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::representation::{
    build_profile, date_of, end_of_day, ClusterSummary, ProfileParams, ProfileSource, ProfileVersion, UserProfile,
};
use crate::types::{ActionLog, ActionRecord, PinStore, UserId};

/// Online buffers keep only this many of a user's most recent engagements.
pub const ONLINE_BUFFER_LEN: usize = 20;

/// Profiles keyed by user. Serialized as JSON lines sorted by user id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileStore {
    profiles: BTreeMap<UserId, UserProfile>,
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, user: UserId) -> Option<&UserProfile> {
        self.profiles.get(&user)
    }

    pub fn insert(&mut self, profile: UserProfile) -> Option<UserProfile> {
        self.profiles.insert(profile.user, profile)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserProfile> + '_ {
        self.profiles.values()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in self.profiles.values() {
            serde_json::to_writer(&mut out, p).expect("serializing to memory");
            out.write_all(b"\n").expect("writing to memory");
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::format("profile store", e.to_string()))?;
        let mut store = ProfileStore::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let profile: UserProfile = serde_json::from_str(line)
                .map_err(|e| Error::format("profile store", format!("line {}: {e}", n + 1)))?;
            if store.insert(profile).is_some() {
                return Err(Error::format("profile store", format!("line {}: duplicate user", n + 1)));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        Self::decode(&bytes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchReport {
    pub users: usize,
    pub profiles: usize,
    /// Engagements skipped because their pin has no embedding.
    pub unknown_pins: usize,
    pub truncated: usize,
}

/// Rebuilds every user's profile as of the end of `as_of`.
///
/// Users are processed independently on the rayon pool; the result does not
/// depend on scheduling. Users without a usable engagement in the window get no
/// profile.
pub fn batch_infer(
    logs: &[ActionLog],
    pins: &PinStore,
    params: &ProfileParams,
    as_of: NaiveDate,
) -> Result<(ProfileStore, BatchReport)> {
    params.validate()?;
    let now = end_of_day(as_of);
    let built: Vec<_> = logs
        .par_iter()
        .map(|log| build_profile(log, pins, params, now))
        .collect::<Result<_>>()?;

    let mut report = BatchReport {
        users: logs.len(),
        ..Default::default()
    };
    let mut store = ProfileStore::new();
    for b in built {
        report.unknown_pins += b.unknown_pins;
        report.truncated += b.truncated;
        if !b.profile.is_empty() {
            store.insert(b.profile);
        }
    }
    report.profiles = store.len();
    if report.unknown_pins > 0 {
        warn!(skipped = report.unknown_pins, "engagements on pins without embeddings were skipped");
    }
    Ok((store, report))
}

/// Why an online event did not change a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skipped {
    NotEngagement,
    UnknownPin,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OnlineCounters {
    pub applied: usize,
    pub unknown_pins: usize,
    pub not_engagement: usize,
}

/// Intra-day overlay on top of the batch store.
///
/// Batch profiles are never modified; each user touched today gets an overlay
/// profile (source `online`) that is served instead of the batch one.
#[derive(Debug, Clone, Default)]
pub struct OnlineState {
    buffers: HashMap<UserId, VecDeque<ActionRecord>>,
    overlays: HashMap<UserId, UserProfile>,
    counters: OnlineCounters,
}

impl OnlineState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> OnlineCounters {
        self.counters
    }

    /// The user's most recent engagements today, oldest first.
    pub fn buffer(&self, user: UserId) -> Vec<ActionRecord> {
        self.buffers
            .get(&user)
            .map(|b| b.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn overlay(&self, user: UserId) -> Option<&UserProfile> {
        self.overlays.get(&user)
    }

    pub fn overlay_count(&self) -> usize {
        self.overlays.len()
    }

    /// Online overlay when present, otherwise the batch profile.
    pub fn served<'a>(&'a self, batch: &'a ProfileStore, user: UserId) -> Option<&'a UserProfile> {
        self.overlays.get(&user).or_else(|| batch.get(user))
    }

    /// Batch store with today's overlays layered on top.
    pub fn served_store(&self, batch: &ProfileStore) -> ProfileStore {
        let mut out = batch.clone();
        for p in self.overlays.values() {
            out.insert(p.clone());
        }
        out
    }

    pub fn clear(&mut self) {
        self.buffers.clear();
        self.overlays.clear();
    }

    /// Folds one event into the user's served profile.
    ///
    /// The new pin joins the cluster whose medoid is nearest when the squared
    /// distance is within `alpha`, adding `1` (an age-zero action) to its
    /// importance; otherwise it becomes a new singleton cluster. Medoids are
    /// left untouched until the next batch run.
    pub fn apply(
        &mut self,
        batch: &ProfileStore,
        user: UserId,
        event: ActionRecord,
        pins: &PinStore,
        params: &ProfileParams,
    ) -> Result<std::result::Result<&UserProfile, Skipped>> {
        if !event.kind.is_engagement() {
            self.counters.not_engagement += 1;
            return Ok(Err(Skipped::NotEngagement));
        }
        let Some(query) = pins.embedding(event.pin) else {
            self.counters.unknown_pins += 1;
            warn!(user, pin = event.pin, "online event on unknown pin ignored");
            return Ok(Err(Skipped::UnknownPin));
        };
        let event_date = date_of(event.timestamp);
        let mut profile = match self.overlays.get(&user).or_else(|| batch.get(user)) {
            Some(p) => p.clone(),
            None => UserProfile::empty(
                user,
                ProfileVersion {
                    date: event_date,
                    source: ProfileSource::Online,
                },
            ),
        };
        if event_date < profile.version.date {
            return Err(Error::StaleEvent {
                event_ts: event.timestamp,
                version: profile.version.date.to_string(),
            });
        }

        let buffer = self.buffers.entry(user).or_default();
        buffer.push_back(event);
        while buffer.len() > ONLINE_BUFFER_LEN {
            buffer.pop_front();
        }

        let nearest = profile
            .summaries
            .iter()
            .enumerate()
            .filter_map(|(i, s)| pins.embedding(s.medoid).map(|m| (i, sq_dist(query, m))))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match nearest {
            Some((i, d)) if d <= params.alpha => {
                let s = &mut profile.summaries[i];
                s.importance += 1.0;
                s.member_count += 1;
            }
            _ => profile.summaries.push(ClusterSummary {
                medoid: event.pin,
                importance: 1.0,
                member_count: 1,
            }),
        }
        profile.sort_summaries();
        profile.version = ProfileVersion {
            date: event_date,
            source: ProfileSource::Online,
        };
        self.counters.applied += 1;
        self.overlays.insert(user, profile);
        Ok(Ok(&self.overlays[&user]))
    }

    /// Applies a stream of events in timestamp order (stable for equal times).
    pub fn replay(
        &mut self,
        batch: &ProfileStore,
        events: &[(UserId, ActionRecord)],
        pins: &PinStore,
        params: &ProfileParams,
    ) -> Result<()> {
        let mut ordered: Vec<&(UserId, ActionRecord)> = events.iter().collect();
        ordered.sort_by_key(|(_, r)| r.timestamp);
        for &(user, rec) in ordered {
            let _ = self.apply(batch, user, rec, pins, params)?;
        }
        Ok(())
    }
}

/// Merges two sets of logs user by user.
pub fn merge_logs(history: &[ActionLog], day_logs: &[ActionLog]) -> Vec<ActionLog> {
    let mut by_user: BTreeMap<UserId, ActionLog> = BTreeMap::new();
    for log in history.iter().chain(day_logs) {
        by_user
            .entry(log.user())
            .and_modify(|l| l.extend(log.records().iter().copied()))
            .or_insert_with(|| log.clone());
    }
    by_user.into_values().collect()
}

/// End-of-day reconciliation: reruns the batch job over the window including
/// today's logs, replaces every profile, and drops the online overlays.
pub fn reconcile_daily(
    state: &mut OnlineState,
    history: &[ActionLog],
    day_logs: &[ActionLog],
    pins: &PinStore,
    params: &ProfileParams,
    day: NaiveDate,
) -> Result<(ProfileStore, BatchReport)> {
    let logs = merge_logs(history, day_logs);
    let out = batch_infer(&logs, pins, params, day)?;
    state.clear();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActionKind, SECONDS_PER_DAY};

    fn day(n: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(n)
    }

    fn ts(d: i64, secs: u64) -> u64 {
        end_of_day(day(d)) + 1 - SECONDS_PER_DAY + secs
    }

    fn pins() -> PinStore {
        let mut entries = vec![
            (1, vec![1.0, 0.0, 0.0], 1.0),
            (2, vec![0.98, 0.2, 0.0], 1.0),
            (3, vec![0.0, 1.0, 0.0], 1.0),
            (4, vec![0.0, 0.0, 1.0], 1.0),
        ];
        for i in 0..20u64 {
            let t = i as f32 * 0.005;
            entries.push((100 + i, vec![-1.0, t, -t], 1.0));
        }
        PinStore::from_entries(3, entries).unwrap()
    }

    fn history() -> Vec<ActionLog> {
        vec![
            ActionLog::new(
                1,
                vec![
                    ActionRecord::new(1, ts(0, 10), ActionKind::Repin),
                    ActionRecord::new(2, ts(1, 10), ActionKind::Click),
                    ActionRecord::new(3, ts(2, 10), ActionKind::Repin),
                ],
            ),
            ActionLog::new(2, vec![ActionRecord::new(4, ts(2, 50), ActionKind::Repin)]),
        ]
    }

    #[test]
    fn batch_basics() {
        let params = ProfileParams::default();
        let (store, report) = batch_infer(&[], &pins(), &params, day(3)).unwrap();
        assert!(store.is_empty());
        assert_eq!(report.profiles, 0);

        let one = vec![ActionLog::new(9, vec![ActionRecord::new(4, ts(1, 0), ActionKind::Click)])];
        let (store, _) = batch_infer(&one, &pins(), &params, day(3)).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(9).unwrap().version.source, ProfileSource::Batch);
    }

    #[test]
    fn batch_counts_unknown_pins() {
        let logs = vec![ActionLog::new(
            5,
            vec![
                ActionRecord::new(1, ts(0, 0), ActionKind::Click),
                ActionRecord::new(77, ts(0, 5), ActionKind::Click),
            ],
        )];
        let (store, report) = batch_infer(&logs, &pins(), &ProfileParams::default(), day(1)).unwrap();
        assert_eq!(report.unknown_pins, 1);
        assert_eq!(store.get(5).unwrap().summaries.len(), 1);
    }

    #[test]
    fn batch_is_byte_stable() {
        let params = ProfileParams::default();
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = batch_infer(&history(), &pins(), &params, day(3)).unwrap();
        let (b, _) = batch_infer(&history(), &pins(), &params, day(3)).unwrap();
        a.save(&dir.path().join("a.jsonl")).unwrap();
        b.save(&dir.path().join("b.jsonl")).unwrap();
        let ra = std::fs::read(dir.path().join("a.jsonl")).unwrap();
        assert_eq!(ra, std::fs::read(dir.path().join("b.jsonl")).unwrap());
        assert_eq!(ProfileStore::load(&dir.path().join("a.jsonl")).unwrap(), a);
    }

    #[test]
    fn online_bump_on_existing_medoid() {
        let params = ProfileParams::default();
        let pins = pins();
        let (batch, _) = batch_infer(&history(), &pins, &params, day(3)).unwrap();
        let before = batch.get(1).unwrap().clone();
        let medoid = before.summaries[0].medoid;
        let mut state = OnlineState::new();
        let after = state
            .apply(&batch, 1, ActionRecord::new(medoid, ts(4, 0), ActionKind::Repin), &pins, &params)
            .unwrap()
            .unwrap()
            .clone();
        assert_eq!(after.summaries.len(), before.summaries.len());
        let bumped = after.summaries.iter().find(|s| s.medoid == medoid).unwrap();
        assert_eq!(bumped.importance, before.summaries[0].importance + 1.0);
        assert_eq!(after.version.source, ProfileSource::Online);
        assert_eq!(after.version.date, day(4));
        // Batch history untouched.
        assert_eq!(batch.get(1).unwrap(), &before);
    }

    #[test]
    fn online_far_pin_opens_cluster() {
        let params = ProfileParams::default();
        let pins = pins();
        let (batch, _) = batch_infer(&history(), &pins, &params, day(3)).unwrap();
        let n = batch.get(1).unwrap().summaries.len();
        let mut state = OnlineState::new();
        let p = state
            .apply(&batch, 1, ActionRecord::new(100, ts(4, 0), ActionKind::Click), &pins, &params)
            .unwrap()
            .unwrap();
        assert_eq!(p.summaries.len(), n + 1);
        assert!(p.summaries.iter().any(|s| s.medoid == 100 && s.importance == 1.0));
    }

    #[test]
    fn online_skips_and_errors() {
        let params = ProfileParams::default();
        let pins = pins();
        let (batch, _) = batch_infer(&history(), &pins, &params, day(3)).unwrap();
        let mut state = OnlineState::new();
        let r = state.apply(&batch, 1, ActionRecord::new(555, ts(4, 0), ActionKind::Click), &pins, &params);
        assert_eq!(r.unwrap().unwrap_err(), Skipped::UnknownPin);
        let r = state.apply(&batch, 1, ActionRecord::new(1, ts(4, 0), ActionKind::Impression), &pins, &params);
        assert_eq!(r.unwrap().unwrap_err(), Skipped::NotEngagement);
        let r = state.apply(&batch, 1, ActionRecord::new(1, ts(1, 0), ActionKind::Click), &pins, &params);
        assert!(matches!(r, Err(Error::StaleEvent { .. })));
        assert_eq!(state.counters().unknown_pins, 1);
        assert_eq!(state.counters().not_engagement, 1);
    }

    #[test]
    fn buffer_is_bounded() {
        let params = ProfileParams::default();
        let pins = pins();
        let batch = ProfileStore::new();
        let mut state = OnlineState::new();
        for i in 0..45u64 {
            state
                .apply(&batch, 3, ActionRecord::new(100 + i % 20, ts(4, i), ActionKind::Click), &pins, &params)
                .unwrap()
                .unwrap();
            assert!(state.buffer(3).len() <= ONLINE_BUFFER_LEN);
        }
        let buf = state.buffer(3);
        assert_eq!(buf.len(), ONLINE_BUFFER_LEN);
        assert_eq!(buf[0].timestamp, ts(4, 25));
    }

    #[test]
    fn new_topic_agrees_with_batch_at_day_end() {
        let params = ProfileParams::default();
        let pins = pins();
        let hist = history();
        let (batch, _) = batch_infer(&hist, &pins, &params, day(3)).unwrap();
        let mut state = OnlineState::new();
        let today: Vec<ActionRecord> = (0..20u64)
            .map(|i| ActionRecord::new(100 + i, ts(4, 60 * i), ActionKind::Repin))
            .collect();
        for r in &today {
            state.apply(&batch, 1, *r, &pins, &params).unwrap().unwrap();
        }
        let online_clusters = state.served(&batch, 1).unwrap().summaries.len();
        let day_logs = vec![ActionLog::new(1, today)];
        let (reconciled, _) = reconcile_daily(&mut state, &hist, &day_logs, &pins, &params, day(4)).unwrap();
        assert_eq!(reconciled.get(1).unwrap().summaries.len(), online_clusters);
        assert_eq!(state.overlay_count(), 0);
    }

    #[test]
    fn reconciliation_absorbs_online_outlier() {
        // The online medoid is the first pin seen, which sits on the far side
        // of its group; the last pin misses it but is close to the group.
        let entries: Vec<_> = [(20u64, 5.0f32), (21, 4.09), (22, 4.1), (23, 4.11), (24, 3.9)]
            .into_iter()
            .map(|(id, x)| (id, vec![x, 0.0], 1.0))
            .collect();
        let pins = PinStore::from_entries(2, entries).unwrap();
        let params = ProfileParams::new(1.0, 0.01).unwrap();
        let today: Vec<_> = (20..25u64)
            .map(|id| ActionRecord::new(id, ts(2, id), ActionKind::Click))
            .collect();

        let batch = ProfileStore::new();
        let mut state = OnlineState::new();
        for r in &today {
            state.apply(&batch, 1, *r, &pins, &params).unwrap().unwrap();
        }
        let online = state.served(&batch, 1).unwrap();
        assert!(online.summaries.iter().any(|s| s.medoid == 24 && s.member_count == 1));

        let (reconciled, _) =
            reconcile_daily(&mut state, &[], &[ActionLog::new(1, today)], &pins, &params, day(2)).unwrap();
        let p = reconciled.get(1).unwrap();
        assert!(p.summaries.iter().all(|s| s.medoid != 24));
        let total: u32 = p.summaries.iter().map(|s| s.member_count).sum();
        assert_eq!(total, 5);
        assert_eq!(p.summaries[0].member_count, 4);
    }

    #[test]
    fn reconcile_without_online_equals_batch_and_is_idempotent() {
        let params = ProfileParams::default();
        let pins = pins();
        let hist = history();
        let day_logs = vec![ActionLog::new(2, vec![ActionRecord::new(3, ts(4, 5), ActionKind::Click)])];
        let mut state = OnlineState::new();
        let (r1, _) = reconcile_daily(&mut state, &hist, &day_logs, &pins, &params, day(4)).unwrap();
        let (r2, _) = reconcile_daily(&mut state, &hist, &day_logs, &pins, &params, day(4)).unwrap();
        let (plain, _) = batch_infer(&merge_logs(&hist, &day_logs), &pins, &params, day(4)).unwrap();
        assert_eq!(r1.encode(), plain.encode());
        assert_eq!(r1.encode(), r2.encode());
    }

    #[test]
    fn store_rejects_bad_lines() {
        assert!(ProfileStore::decode(b"{\"user\":1}\n").is_err());
        let line = br#"{"user":1,"version":{"date":"2024-01-01","source":"batch"},"clusters":[]}"#;
        let mut two = line.to_vec();
        two.push(b'\n');
        two.extend_from_slice(line);
        assert!(ProfileStore::decode(&two).is_err());
        assert_eq!(ProfileStore::decode(line).unwrap().len(), 1);
    }
}
