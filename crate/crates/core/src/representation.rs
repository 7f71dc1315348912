//! Per-user profiles: each Ward cluster of recent actions is summarized by its
//! medoid pin and a time-decayed importance score.

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::distance::{dot, sq_dist};
use crate::error::{Error, Result};
use crate::types::{age_days, ActionLog, Embedding, PinId, PinStore, UserId, SECONDS_PER_DAY};
use crate::ward::{Ward, DEFAULT_ALPHA, DEFAULT_POINT_CAP};

/// Per-day decay rate balancing frequent and recent interests.
pub const DEFAULT_LAMBDA: f64 = 0.01;

/// Only actions from this many trailing days are clustered.
pub const WINDOW_DAYS: u64 = 90;

/// Clusters at or below this size get an exhaustive medoid search.
const EXHAUSTIVE_MEDOID_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub medoid: PinId,
    pub importance: f64,
    #[serde(rename = "count")]
    pub member_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    Batch,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileVersion {
    pub date: NaiveDate,
    pub source: ProfileSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub user: UserId,
    pub version: ProfileVersion,
    #[serde(rename = "clusters")]
    pub summaries: Vec<ClusterSummary>,
}

impl UserProfile {
    pub fn empty(user: UserId, version: ProfileVersion) -> Self {
        UserProfile {
            user,
            version,
            summaries: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }

    /// Restores the ordering invariant: importance descending, then medoid id.
    pub fn sort_summaries(&mut self) {
        self.summaries.sort_by(|a, b| {
            b.importance
                .total_cmp(&a.importance)
                .then(a.medoid.cmp(&b.medoid))
        });
    }

    pub fn medoids(&self) -> impl Iterator<Item = PinId> + '_ {
        self.summaries.iter().map(|s| s.medoid)
    }
}

/// Calendar date (UTC) containing `ts`.
pub fn date_of(ts: u64) -> NaiveDate {
    let days = (ts / SECONDS_PER_DAY) as i64;
    NaiveDate::from_num_days_from_ce_opt(719_163 + days as i32).expect("timestamp within chrono range")
}

/// Last second of `date`, the reference time for a batch run "as of" that day.
pub fn end_of_day(date: NaiveDate) -> u64 {
    let days = date.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days();
    assert!(days >= 0, "dates before 1970 are not representable");
    (days as u64 + 1) * SECONDS_PER_DAY - 1
}

fn exact_score<P: AsRef<[f32]>>(m: usize, members: &[usize], points: &[P]) -> f64 {
    let x = points[m].as_ref();
    members.iter().map(|&j| sq_dist(x, points[j].as_ref())).sum()
}

/// Members of a cluster ranked as medoid candidates: ascending
/// `Σ_j ‖P_m − P_j‖²`, ties by pin id. Each pin appears once.
///
/// Small clusters are scored exhaustively. Larger ones use the expansion
/// `n‖x‖² − 2x·S + Σ‖x_j‖²`, then every candidate within rounding distance of
/// the best is re-scored exactly, so the head of the ranking always equals the
/// exhaustive argmin.
pub fn medoid_ranking<P: AsRef<[f32]>>(
    members: &[usize],
    pins: &[PinId],
    points: &[P],
) -> Result<Vec<(PinId, f64)>> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut scored: Vec<(PinId, f64)> = if members.len() <= EXHAUSTIVE_MEDOID_SIZE {
        members
            .iter()
            .map(|&m| (pins[m], exact_score(m, members, points)))
            .collect()
    } else {
        let d = points[members[0]].as_ref().len();
        let mut sum = vec![0f64; d];
        let mut sq_total = 0.0;
        let mut sq_norms = Vec::with_capacity(members.len());
        for &j in members {
            let x = points[j].as_ref();
            for (s, &v) in sum.iter_mut().zip(x) {
                *s += v as f64;
            }
            let sq = dot(x, x);
            sq_norms.push(sq);
            sq_total += sq;
        }
        let n = members.len() as f64;
        let mut approx: Vec<(usize, f64)> = members
            .iter()
            .zip(&sq_norms)
            .map(|(&m, &sq)| {
                let cross: f64 = points[m].as_ref().iter().zip(&sum).map(|(&v, s)| v as f64 * s).sum();
                (m, n * sq - 2.0 * cross + sq_total)
            })
            .collect();
        let best = approx.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
        let max_sq = sq_norms.iter().copied().fold(0.0, f64::max);
        let slack = 1e-9 * (n * max_sq + sq_total) + 1e-12;
        for a in approx.iter_mut() {
            if a.1 <= best + slack {
                a.1 = exact_score(a.0, members, points);
            } else {
                // Keep approximate scores strictly behind every exact contender.
                a.1 = a.1.max(best + slack);
            }
        }
        approx.into_iter().map(|(m, s)| (pins[m], s)).collect()
    };
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.dedup_by_key(|s| s.0);
    Ok(scored)
}

/// The member minimizing the sum of squared distances to all members.
pub fn compute_medoid<P: AsRef<[f32]>>(members: &[usize], pins: &[PinId], points: &[P]) -> Result<PinId> {
    Ok(medoid_ranking(members, pins, points)?[0].0)
}

/// Arithmetic mean of the members.
pub fn compute_centroid<P: AsRef<[f32]>>(members: &[usize], points: &[P]) -> Result<Embedding> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let d = points[members[0]].as_ref().len();
    let mut mean = vec![0f64; d];
    for &j in members {
        for (m, &v) in mean.iter_mut().zip(points[j].as_ref()) {
            *m += v as f64;
        }
    }
    let n = members.len() as f64;
    Embedding::new(mean.into_iter().map(|m| (m / n) as f32).collect())
}

/// `Σ e^(−λ · age_days)` over the given action timestamps.
pub fn compute_importance(timestamps: impl IntoIterator<Item = u64>, lambda: f64, now: u64) -> f64 {
    timestamps
        .into_iter()
        .map(|ts| (-lambda * age_days(now, ts)).exp())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileParams {
    pub alpha: f64,
    pub lambda: f64,
    pub window_days: u64,
    pub point_cap: usize,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            window_days: WINDOW_DAYS,
            point_cap: DEFAULT_POINT_CAP,
        }
    }
}

impl ProfileParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        let p = ProfileParams {
            alpha,
            lambda,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if self.point_cap == 0 {
            return Err(Error::invalid("point_cap", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProfileBuild {
    pub profile: UserProfile,
    /// Engagements skipped because their pin has no embedding.
    pub unknown_pins: usize,
    /// Engagements dropped beyond the clustering cap (oldest first).
    pub truncated: usize,
}

/// Engagements selected for clustering: `(pin, timestamp, embedding)`.
#[derive(Debug, Clone)]
pub struct Windowed<'a> {
    pub actions: Vec<(PinId, u64, &'a [f32])>,
    pub unknown_pins: usize,
    pub truncated: usize,
}

/// Engagements in `(now − window, now]` on known pins, keeping only the most
/// recent `point_cap`.
pub fn windowed_engagements<'a>(log: &ActionLog, store: &'a PinStore, params: &ProfileParams, now: u64) -> Windowed<'a> {
    let from = now.saturating_sub(params.window_days * SECONDS_PER_DAY);
    let mut unknown_pins = 0;
    let mut actions = Vec::new();
    for r in log.engagements() {
        if r.timestamp <= from || r.timestamp > now {
            continue;
        }
        match store.embedding(r.pin) {
            Some(emb) => actions.push((r.pin, r.timestamp, emb)),
            None => unknown_pins += 1,
        }
    }
    let truncated = actions.len().saturating_sub(params.point_cap);
    actions.drain(..truncated);
    Windowed {
        actions,
        unknown_pins,
        truncated,
    }
}

/// Clusters the user's recent engagements and summarizes every cluster.
///
/// Engagements (repins and clicks) in `(now − window, now]` are clustered with
/// Ward at `alpha`; each cluster becomes a medoid with importance
/// `Σ e^(−λ·age)`. When two clusters would share a medoid pin, the less
/// important one takes its next-best member; a cluster with no free member is
/// folded into the cluster owning its medoid.
pub fn build_profile(log: &ActionLog, store: &PinStore, params: &ProfileParams, now: u64) -> Result<ProfileBuild> {
    params.validate()?;
    let Windowed {
        actions,
        unknown_pins,
        truncated,
    } = windowed_engagements(log, store, params, now);

    let version = ProfileVersion {
        date: date_of(now),
        source: ProfileSource::Batch,
    };
    let mut profile = UserProfile::empty(log.user(), version);
    if actions.is_empty() {
        return Ok(ProfileBuild {
            profile,
            unknown_pins,
            truncated,
        });
    }

    let pins: Vec<PinId> = actions.iter().map(|a| a.0).collect();
    let points: Vec<&[f32]> = actions.iter().map(|a| a.2).collect();
    let ward = Ward::new(params.alpha)?.with_cap(params.point_cap).cluster(&points)?;

    struct Pending {
        ranking: Vec<(PinId, f64)>,
        importance: f64,
        count: u32,
    }
    let mut pending = Vec::with_capacity(ward.clusters.len());
    for members in ward.clusters.clusters() {
        pending.push(Pending {
            ranking: medoid_ranking(members, &pins, &points)?,
            importance: compute_importance(members.iter().map(|&i| actions[i].1), params.lambda, now),
            count: members.len() as u32,
        });
    }
    pending.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(a.ranking[0].0.cmp(&b.ranking[0].0))
    });

    let mut owner: HashMap<PinId, usize> = HashMap::new();
    for p in pending {
        match p.ranking.iter().find(|(pin, _)| !owner.contains_key(pin)) {
            Some(&(medoid, _)) => {
                owner.insert(medoid, profile.summaries.len());
                profile.summaries.push(ClusterSummary {
                    medoid,
                    importance: p.importance,
                    member_count: p.count,
                });
            }
            None => {
                let s = &mut profile.summaries[owner[&p.ranking[0].0]];
                s.importance += p.importance;
                s.member_count += p.count;
            }
        }
    }
    profile.sort_summaries();
    Ok(ProfileBuild {
        profile,
        unknown_pins,
        truncated,
    })
}
