//! Synthetic multi-interest corpus.
//!
//! Topics are unit vectors; each topic holds a few subtopics, and a user's
//! interest is one subtopic. Topic structure lives in a low-dimensional latent
//! subspace while pin noise spans every coordinate. Background pins cover the
//! latent sphere, so an average of unrelated interests lands on real but
//! unrelated content. Each day a user attends to a few interests and switches
//! among them per action, with occasional exploratory actions on arbitrary
//! pins.

use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::distance::{dot, normalized};
use crate::error::{Error, Result};
use crate::representation::end_of_day;
use crate::rng::{weighted_sample_without_replacement, Rng};
use crate::types::{ActionKind, ActionLog, ActionRecord, PinId, PinStore, UserId, SECONDS_PER_DAY};

/// Topic centers are rejection-sampled below this pairwise cosine.
pub const MAX_TOPIC_COSINE: f64 = 0.5;

const TOPIC_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_topics: usize,
    pub subtopics_per_topic: usize,
    pub pins_per_topic: usize,
    /// Pins spread uniformly over the latent sphere, unrelated to any subtopic.
    pub background_pins: usize,
    pub dimension: usize,
    /// Leading coordinates that carry topic structure.
    pub latent_dimension: usize,
    /// Per-coordinate standard deviation of pin noise around its subtopic.
    pub sigma: f64,
    /// Norm of the offset from a topic center to each subtopic center.
    pub subtopic_spread: f64,
    pub n_users: usize,
    pub min_interests: usize,
    pub max_interests: usize,
    pub min_actions_per_day: usize,
    pub max_actions_per_day: usize,
    pub days: usize,
    /// Interests a user draws on in one day, picked in proportion to weight.
    pub daily_interests: usize,
    /// Chance, per action, of redrawing the current interest among the day's
    /// active interests (the redraw may keep the same one). Zero keeps each
    /// user on a single interest for the whole log.
    pub switch_prob: f64,
    /// Exponent applied to exponential draws when forming interest weights;
    /// larger values concentrate weight on one interest.
    pub interest_skew: f64,
    /// Chance that an action lands on an arbitrary pin instead of an interest.
    pub explore_prob: f64,
    pub impressions_per_action: usize,
    /// Share of impressions drawn near the user's interests rather than from
    /// global popularity.
    pub targeted_impressions: f64,
    /// Share of impressions drawn from the pins nearest the user's average
    /// taste, as a single-embedding recommender would show them.
    pub legacy_impressions: f64,
    /// Size of that nearest-pin pool.
    pub legacy_pool: usize,
    /// Weight reduction for the interest a user ended the previous day on when
    /// picking the next day's interests.
    pub satiation: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_topics: 20,
            subtopics_per_topic: 8,
            pins_per_topic: 1600,
            background_pins: 20000,
            dimension: 64,
            latent_dimension: 6,
            sigma: 0.07,
            subtopic_spread: 0.7,
            n_users: 500,
            min_interests: 2,
            max_interests: 6,
            min_actions_per_day: 2,
            max_actions_per_day: 8,
            days: 30,
            daily_interests: 2,
            switch_prob: 0.5,
            interest_skew: 1.25,
            explore_prob: 0.15,
            impressions_per_action: 12,
            targeted_impressions: 0.6,
            legacy_impressions: 0.1,
            legacy_pool: 300,
            satiation: 0.9,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_topics", self.n_topics),
            ("subtopics_per_topic", self.subtopics_per_topic),
            ("n_users", self.n_users),
            ("days", self.days),
            ("max_actions_per_day", self.max_actions_per_day),
            ("daily_interests", self.daily_interests),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.dimension < 2 {
            return Err(Error::DimensionTooSmall(self.dimension));
        }
        if self.pins_per_topic < self.subtopics_per_topic {
            return Err(Error::invalid(
                "pins_per_topic",
                format!("{} pins cannot fill {} subtopics", self.pins_per_topic, self.subtopics_per_topic),
            ));
        }
        if self.min_interests == 0 || self.min_interests > self.max_interests {
            return Err(Error::invalid("min_interests", "need 1 ≤ min_interests ≤ max_interests"));
        }
        if self.max_interests > self.n_topics {
            return Err(Error::invalid(
                "max_interests",
                format!("{} interests need as many topics, have {}", self.max_interests, self.n_topics),
            ));
        }
        if self.min_actions_per_day > self.max_actions_per_day {
            return Err(Error::invalid("min_actions_per_day", "exceeds max_actions_per_day"));
        }
        if self.max_actions_per_day * (self.impressions_per_action + 1) > SECONDS_PER_DAY as usize {
            return Err(Error::invalid("max_actions_per_day", "too many events for one-second spacing"));
        }
        if self.targeted_impressions + self.legacy_impressions > 1.0 {
            return Err(Error::invalid(
                "legacy_impressions",
                "targeted and legacy impression shares exceed 1",
            ));
        }
        if self.legacy_impressions > 0.0 && self.legacy_pool == 0 {
            return Err(Error::invalid("legacy_pool", "must be positive when legacy impressions are enabled"));
        }
        if self.latent_dimension < 2 || self.latent_dimension > self.dimension {
            return Err(Error::invalid(
                "latent_dimension",
                format!("must lie in 2..={}, got {}", self.dimension, self.latent_dimension),
            ));
        }
        for (field, v) in [
            ("sigma", self.sigma),
            ("subtopic_spread", self.subtopic_spread),
            ("interest_skew", self.interest_skew),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("must be finite and non-negative, got {v}")));
            }
        }
        for (field, p) in [
            ("switch_prob", self.switch_prob),
            ("explore_prob", self.explore_prob),
            ("targeted_impressions", self.targeted_impressions),
            ("legacy_impressions", self.legacy_impressions),
            ("satiation", self.satiation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(field, format!("must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Timestamp of the first second of day `d`.
    pub fn day_start(&self, d: usize) -> u64 {
        end_of_day(self.start) + 1 - SECONDS_PER_DAY + d as u64 * SECONDS_PER_DAY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PinOrigin {
    Subtopic { topic: u32, subtopic: u32 },
    /// `topic` is the nearest topic center.
    Background { topic: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interest {
    /// Global subtopic id: `topic * subtopics_per_topic + local index`.
    pub subtopic: u32,
    pub topic: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTruth {
    pub user: UserId,
    pub interests: Vec<Interest>,
    /// Generating subtopic of each record in the user's log, aligned by
    /// position; `None` for exploratory actions and untargeted impressions.
    pub labels: Vec<Option<u32>>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub pins: PinStore,
    /// Origin of each pin, aligned with `pins.ids()`.
    pub origins: Vec<PinOrigin>,
    pub logs: Vec<ActionLog>,
    pub truth: Vec<UserTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLine {
    pub user: UserId,
    pub pin: PinId,
    pub ts: u64,
    pub kind: ActionKind,
    pub subtopic: Option<u32>,
}

impl World {
    pub fn origin(&self, pin: PinId) -> Option<PinOrigin> {
        self.pins.row_of(pin).map(|r| self.origins[r])
    }

    pub fn truth(&self, user: UserId) -> Option<&UserTruth> {
        self.truth.binary_search_by_key(&user, |t| t.user).ok().map(|i| &self.truth[i])
    }

    /// One line per log record, in user then time order.
    pub fn label_lines(&self) -> Vec<LabelLine> {
        let mut out = Vec::new();
        for (log, truth) in self.logs.iter().zip(&self.truth) {
            for (r, label) in log.records().iter().zip(&truth.labels) {
                out.push(LabelLine {
                    user: log.user(),
                    pin: r.pin,
                    ts: r.timestamp,
                    kind: r.kind,
                    subtopic: *label,
                });
            }
        }
        out
    }
}

/// Uniform on the unit sphere of the first `latent` coordinates.
fn random_unit(rng: &mut Rng, latent: usize, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|k| if k < latent { rng.normal() } else { 0.0 }).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit64(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn jitter(center: &[f64], scale: f64, rng: &mut Rng) -> Vec<f32> {
    let v: Vec<f64> = center.iter().map(|&c| c + scale * rng.normal()).collect();
    unit64(&v).into_iter().map(|x| x as f32).collect()
}

fn topic_centers(cfg: &WorldConfig, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_topics);
    let mut attempts = 0;
    while centers.len() < cfg.n_topics {
        attempts += 1;
        if attempts > TOPIC_ATTEMPTS {
            return Err(Error::invalid(
                "n_topics",
                format!("could not place {} separated topics in {} dimensions", cfg.n_topics, cfg.dimension),
            ));
        }
        let c = random_unit(rng, cfg.latent_dimension, cfg.dimension);
        let separated = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() < MAX_TOPIC_COSINE);
        if separated {
            centers.push(c);
        }
    }
    Ok(centers)
}

/// Rows of the `k` entries with the largest dot product with `target`.
fn nearest_rows(entries: &[(PinId, Vec<f32>, f32)], target: &[f64], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.1.iter().zip(target).map(|(&x, &t)| x as f64 * t).sum(), i))
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
    }
    let mut rows: Vec<usize> = scored.into_iter().map(|(_, i)| i).collect();
    rows.sort_unstable();
    rows
}

/// Cumulative weights for repeated proportional draws.
struct Sampler {
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn draw(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty sampler");
        let t = rng.uniform() * total;
        self.cumulative.partition_point(|&c| c <= t).min(self.cumulative.len() - 1)
    }
}

/// Generates pins, per-user logs and ground-truth labels. Deterministic in
/// `cfg.seed`.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = Rng::stream(cfg.seed, 0);
    let centers = topic_centers(cfg, &mut rng)?;
    let dim = cfg.dimension;
    let noise = cfg.sigma;
    let latent = cfg.latent_dimension;
    let spread = cfg.subtopic_spread / (latent as f64).sqrt();

    let n_sub = cfg.n_topics * cfg.subtopics_per_topic;
    let mut sub_centers = Vec::with_capacity(n_sub);
    for c in &centers {
        for _ in 0..cfg.subtopics_per_topic {
            let v: Vec<f64> = c
                .iter()
                .enumerate()
                .map(|(k, &x)| if k < latent { x + spread * rng.normal() } else { x })
                .collect();
            sub_centers.push(unit64(&v));
        }
    }

    // Zipf-like popularity over a random permutation of all pins.
    let n_pins = cfg.n_topics * cfg.pins_per_topic + cfg.background_pins;
    if n_pins == 0 {
        return Err(Error::invalid("pins_per_topic", "world has no pins"));
    }
    let mut order: Vec<usize> = (0..n_pins).collect();
    rng.shuffle(&mut order);
    let mut popularity = vec![0.0; n_pins];
    for (rank, &i) in order.iter().enumerate() {
        popularity[i] = 1.0 / (rank as f64 + 10.0).powf(0.8);
    }

    // Pins: subtopic members first, background after; ids start at 1.
    let mut entries: Vec<(PinId, Vec<f32>, f32)> = Vec::with_capacity(n_pins);
    let mut origins = Vec::with_capacity(n_pins);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_sub];
    let mut background_by_topic: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_topics];
    for topic in 0..cfg.n_topics {
        for k in 0..cfg.pins_per_topic {
            let local = k % cfg.subtopics_per_topic;
            let sub = topic * cfg.subtopics_per_topic + local;
            let i = entries.len();
            members[sub].push(i);
            entries.push((i as PinId + 1, jitter(&sub_centers[sub], noise, &mut rng), 0.0));
            origins.push(PinOrigin::Subtopic {
                topic: topic as u32,
                subtopic: sub as u32,
            });
        }
    }
    for _ in 0..cfg.background_pins {
        let center = random_unit(&mut rng, latent, dim);
        let topic = (0..cfg.n_topics)
            .max_by(|&x, &y| dot64(&centers[x], &center).total_cmp(&dot64(&centers[y], &center)))
            .expect("at least one topic");
        let i = entries.len();
        background_by_topic[topic].push(i);
        entries.push((i as PinId + 1, jitter(&center, noise, &mut rng), 0.0));
        origins.push(PinOrigin::Background { topic: topic as u32 });
    }
    for (i, e) in entries.iter_mut().enumerate() {
        let q = 0.5 + 0.5 * (popularity[i] / popularity[order[0]]).powf(0.1) * rng.uniform();
        e.2 = q.min(1.0) as f32;
    }
    let sub_samplers: Vec<Sampler> = members
        .iter()
        .map(|m| Sampler::new(m.iter().map(|&i| popularity[i])))
        .collect();
    let global = Sampler::new(popularity.iter().copied());

    let mut user_rng = Rng::stream(cfg.seed, 1);
    let mut logs = Vec::with_capacity(cfg.n_users);
    let mut truth = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let user = u as UserId + 1;
        let rng = &mut user_rng;
        let count = cfg.min_interests + rng.index(cfg.max_interests - cfg.min_interests + 1);
        let mut topics: Vec<usize> = (0..cfg.n_topics).collect();
        rng.shuffle(&mut topics);
        let raw: Vec<f64> = (0..count).map(|_| -(1.0 - rng.uniform()).ln()).map(|x| x.powf(cfg.interest_skew)).collect();
        let total: f64 = raw.iter().sum();
        let mut interests: Vec<Interest> = topics[..count]
            .iter()
            .zip(&raw)
            .map(|(&topic, &w)| Interest {
                subtopic: (topic * cfg.subtopics_per_topic + rng.index(cfg.subtopics_per_topic)) as u32,
                topic: topic as u32,
                weight: w / total,
            })
            .collect();
        interests.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.subtopic.cmp(&b.subtopic)));
        // Neighborhood pool for targeted impressions: sibling subtopics and
        // background pins nearest any interest topic.
        let mut nearby: Vec<usize> = Vec::new();
        for it in &interests {
            let t = it.topic as usize;
            for s in t * cfg.subtopics_per_topic..(t + 1) * cfg.subtopics_per_topic {
                if s as u32 != it.subtopic {
                    nearby.extend(&members[s]);
                }
            }
            nearby.extend(&background_by_topic[t]);
        }
        nearby.sort_unstable();
        nearby.dedup();
        let nearby_sampler = (!nearby.is_empty()).then(|| Sampler::new(nearby.iter().map(|&i| popularity[i])));
        let legacy = if cfg.legacy_impressions > 0.0 {
            let mut taste = vec![0.0; dim];
            for it in &interests {
                for (t, &c) in taste.iter_mut().zip(&sub_centers[it.subtopic as usize]) {
                    *t += it.weight * c;
                }
            }
            nearest_rows(&entries, &taste, cfg.legacy_pool)
        } else {
            Vec::new()
        };

        let mut records = Vec::new();
        let mut labels = Vec::new();
        let interest_draw = Sampler::new(interests.iter().map(|i| i.weight));
        let mut last_interest = None;
        for day in 0..cfg.days {
            let picks: Vec<(usize, f64)> = interests
                .iter()
                .enumerate()
                .map(|(i, it)| (i, if Some(i) == last_interest { it.weight * (1.0 - cfg.satiation) } else { it.weight }))
                .collect();
            let active = if cfg.switch_prob == 0.0 {
                vec![*last_interest.get_or_insert(interest_draw.draw(rng))]
            } else {
                weighted_sample_without_replacement(&picks, cfg.daily_interests, rng)?
            };
            let active_sampler = Sampler::new(active.iter().map(|&i| interests[i].weight));
            let mut current = active[active_sampler.draw(rng)];
            let n = cfg.min_actions_per_day + rng.index(cfg.max_actions_per_day - cfg.min_actions_per_day + 1);
            let slots = n * (cfg.impressions_per_action + 1);
            // Distinct seconds within the day keep timestamps strictly increasing.
            let mut seconds: Vec<u64> = Vec::with_capacity(slots);
            let mut seen = HashSet::with_capacity(slots);
            while seconds.len() < slots {
                let s = rng.below(SECONDS_PER_DAY);
                if seen.insert(s) {
                    seconds.push(s);
                }
            }
            seconds.sort_unstable();
            let mut slot = seconds.into_iter().map(|s| cfg.day_start(day) + s);
            for _ in 0..n {
                for _ in 0..cfg.impressions_per_action {
                    let u = rng.uniform();
                    let row = match &nearby_sampler {
                        Some(ns) if u < cfg.targeted_impressions => nearby[ns.draw(rng)],
                        _ if u < cfg.targeted_impressions + cfg.legacy_impressions && !legacy.is_empty() => {
                            legacy[rng.index(legacy.len())]
                        }
                        _ => global.draw(rng),
                    };
                    records.push(ActionRecord::new(entries[row].0, slot.next().expect("slot"), ActionKind::Impression));
                    labels.push(None);
                }
                if rng.bernoulli(cfg.switch_prob) {
                    current = active[active_sampler.draw(rng)];
                }
                let kind = if rng.bernoulli(0.5) { ActionKind::Repin } else { ActionKind::Click };
                let (row, label) = if rng.bernoulli(cfg.explore_prob) {
                    (global.draw(rng), None)
                } else {
                    let sub = interests[current].subtopic as usize;
                    (members[sub][sub_samplers[sub].draw(rng)], Some(interests[current].subtopic))
                };
                records.push(ActionRecord::new(entries[row].0, slot.next().expect("slot"), kind));
                labels.push(label);
            }
            last_interest = Some(current);
        }
        logs.push(ActionLog::new(user, records));
        truth.push(UserTruth {
            user,
            interests,
            labels,
        });
    }

    let pins = PinStore::from_entries(dim, entries)?;
    Ok(World {
        config: cfg.clone(),
        pins,
        origins,
        logs,
        truth,
    })
}

/// Mean over users of the mean cluster purity, where a cluster's purity is the
/// share of its labelled members carrying its majority subtopic. Exploratory
/// actions are ignored.
pub fn mean_purity(clusters_per_user: &[Vec<Vec<Option<u32>>>]) -> f64 {
    let mut user_scores = Vec::new();
    for clusters in clusters_per_user {
        let mut scores = Vec::new();
        for c in clusters {
            let labelled: Vec<u32> = c.iter().flatten().copied().collect();
            if labelled.is_empty() {
                continue;
            }
            let mut counts = std::collections::BTreeMap::new();
            for l in &labelled {
                *counts.entry(*l).or_insert(0usize) += 1;
            }
            let top = counts.values().max().copied().unwrap_or(0);
            scores.push(top as f64 / labelled.len() as f64);
        }
        if !scores.is_empty() {
            user_scores.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
    }
    if user_scores.is_empty() {
        return 0.0;
    }
    user_scores.iter().sum::<f64>() / user_scores.len() as f64
}

/// Cosine similarity of two stored pins.
pub fn pin_cosine(pins: &PinStore, a: PinId, b: PinId) -> Option<f64> {
    let x = normalized(pins.embedding(a)?).ok()?;
    let y = normalized(pins.embedding(b)?).ok()?;
    Some(dot(&x, &y))
}
