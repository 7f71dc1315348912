//! Offline evaluation: next-action prediction, retrieval, ranking and the
//! diversity/relevance sweep over chronological day batches.
//!
//! Every test day is a batch. Models see only records strictly before the
//! batch starts; once the batch is scored it joins the training data for the
//! next one.

pub mod cluster;
mod report;

pub use cluster::{complete_linkage_cluster, kmeans_cluster, KMeans};
pub use report::{EvalReport, ModelRow, SweepRow};

use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::ann::{query_by_medoid, AnnIndex, MedoidCache, Neighbor};
use crate::distance::{dot_f32, normalized};
use crate::error::{Error, Result};
use crate::representation::{
    build_profile, compute_centroid, compute_importance, compute_medoid, end_of_day, windowed_engagements,
    ProfileParams, DEFAULT_LAMBDA,
};
use crate::retrieval::mean_pairwise_distance;
use crate::rng::{weighted_sample_without_replacement, Rng};
use crate::types::{age_days, ActionLog, ActionRecord, Embedding, PinId, PinStore, UserId, SECONDS_PER_DAY};
use crate::ward::{ward_cluster, DEFAULT_ALPHA};

pub const RELEVANCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Summary {
    Medoid,
    Centroid,
}

/// Users are represented by one or more embeddings derived from their
/// training actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    LastPin,
    DecayAvg { lambda: f64 },
    /// Every past pin; scoring picks whichever is closest to the target.
    Oracle,
    /// k-means centroids; scoring picks whichever is closest to the target.
    KMeansOracle { k: usize },
    /// Centroid of the largest cluster of the same k-means run as
    /// `KMeansOracle`, chosen without looking ahead.
    KMeansLargest { k: usize },
    PinnerSage {
        alpha: f64,
        lambda: f64,
        sampled: usize,
        summary: Summary,
    },
    KMeans { k: usize, lambda: f64, sampled: usize },
    CompleteLinkage { alpha: f64, lambda: f64, sampled: usize },
}

impl Model {
    pub fn pinnersage(sampled: usize) -> Self {
        Model::PinnerSage {
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            sampled,
            summary: Summary::Medoid,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Model::LastPin => "LastPin".into(),
            Model::DecayAvg { lambda } => format!("DecayAvg(λ={lambda})"),
            Model::Oracle => "Oracle".into(),
            Model::KMeansOracle { k } => format!("KMeansOracle(k={k})"),
            Model::KMeansLargest { k } => format!("KMeansLargest(k={k})"),
            Model::PinnerSage {
                lambda,
                sampled,
                summary,
                ..
            } => format!("PinnerSage(Ward, {summary:?}, λ={lambda}, e={sampled})"),
            Model::KMeans { k, sampled, .. } => format!("PinnerSage(K-means(k={k}), e={sampled})"),
            Model::CompleteLinkage { sampled, .. } => format!("PinnerSage(Complete Linkage, e={sampled})"),
        }
    }

    pub fn looks_ahead(&self) -> bool {
        matches!(self, Model::Oracle | Model::KMeansOracle { .. })
    }

    /// Embeddings used per request; `None` means all of them.
    fn sampled(&self) -> Option<usize> {
        match *self {
            Model::PinnerSage { sampled, .. } | Model::KMeans { sampled, .. } | Model::CompleteLinkage { sampled, .. } => {
                Some(sampled)
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Model::DecayAvg { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")))
            }
            Model::KMeansOracle { k } | Model::KMeansLargest { k } if k == 0 => Err(Error::invalid("k", "must be positive")),
            Model::KMeans { k, sampled, .. } if k == 0 || sampled == 0 => Err(Error::invalid("k", "k and e must be positive")),
            Model::PinnerSage { sampled: 0, .. } | Model::CompleteLinkage { sampled: 0, .. } => {
                Err(Error::invalid("e", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// A user's embeddings with sampling weights; `pins` marks embeddings that are
/// themselves pins (and so can use the medoid cache).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserEmbeddings {
    pub vectors: Vec<Vec<f32>>,
    pub weights: Vec<f64>,
    pub pins: Vec<Option<PinId>>,
}

impl UserEmbeddings {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn push(&mut self, vector: Vec<f32>, weight: f64, pin: Option<PinId>) {
        self.vectors.push(vector);
        self.weights.push(weight);
        self.pins.push(pin);
    }

    fn subset(&self, idx: &[usize]) -> UserEmbeddings {
        let mut out = UserEmbeddings::default();
        for &i in idx {
            out.push(self.vectors[i].clone(), self.weights[i], self.pins[i]);
        }
        out
    }
}

/// `∝ Σ e^(−λ·age) · P_a` over engagements up to `now`, L2-normalized.
pub fn decay_avg_embedding(log: &ActionLog, pins: &PinStore, lambda: f64, now: u64) -> Result<Embedding> {
    let mut acc = vec![0f64; pins.dimension()];
    let mut any = false;
    for r in log.engagements().filter(|r| r.timestamp <= now) {
        let Some(v) = pins.embedding(r.pin) else { continue };
        let w = (-lambda * age_days(now, r.timestamp)).exp();
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += w * x as f64;
        }
        any = true;
    }
    if !any {
        return Err(Error::EmptyCluster);
    }
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Embedding::new(acc.into_iter().map(|x| (x / n) as f32).collect())
}

/// Builds a model's embeddings from `log` as of `now`; `rng` seeds k-means.
pub fn model_embeddings(model: &Model, log: &ActionLog, pins: &PinStore, now: u64, rng: &mut Rng) -> Result<UserEmbeddings> {
    model.validate()?;
    let mut out = UserEmbeddings::default();
    let known = |r: &&ActionRecord| r.timestamp <= now && pins.contains(r.pin);
    match *model {
        Model::LastPin => {
            if let Some(r) = log.engagements().filter(known).last() {
                out.push(pins.embedding(r.pin).expect("known").to_vec(), 1.0, Some(r.pin));
            }
        }
        Model::DecayAvg { lambda } => match decay_avg_embedding(log, pins, lambda, now) {
            Ok(e) => out.push(e.into_inner(), 1.0, None),
            Err(Error::EmptyCluster) => {}
            Err(e) => return Err(e),
        },
        Model::Oracle => {
            let mut seen = HashSet::new();
            for r in log.engagements().filter(known) {
                if seen.insert(r.pin) {
                    out.push(pins.embedding(r.pin).expect("known").to_vec(), 1.0, Some(r.pin));
                }
            }
        }
        Model::KMeansOracle { k } | Model::KMeansLargest { k } => {
            let points: Vec<&[f32]> = log.engagements().filter(known).map(|r| pins.embedding(r.pin).expect("known")).collect();
            let km = kmeans_cluster(&points, k, rng)?;
            if matches!(model, Model::KMeansOracle { .. }) {
                for (c, members) in km.centroids.into_iter().zip(km.clusters.clusters()) {
                    out.push(c, members.len() as f64, None);
                }
            } else if let Some((i, _)) = km
                .clusters
                .clusters()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            {
                out.push(km.centroids[i].clone(), 1.0, None);
            }
        }
        Model::PinnerSage {
            alpha,
            lambda,
            summary: Summary::Medoid,
            ..
        } => {
            let params = ProfileParams::new(alpha, lambda)?;
            let profile = build_profile(log, pins, &params, now)?.profile;
            for s in &profile.summaries {
                out.push(pins.embedding(s.medoid).expect("medoid is known").to_vec(), s.importance, Some(s.medoid));
            }
        }
        Model::PinnerSage {
            alpha,
            lambda,
            summary: Summary::Centroid,
            ..
        } => clustered(&mut out, log, pins, now, lambda, Summary::Centroid, |p| {
            Ok(ward_cluster(p, alpha)?.clusters)
        })?,
        Model::KMeans { k, lambda, .. } => {
            clustered(&mut out, log, pins, now, lambda, Summary::Medoid, |p| Ok(kmeans_cluster(p, k, rng)?.clusters))?
        }
        Model::CompleteLinkage { alpha, lambda, .. } => {
            clustered(&mut out, log, pins, now, lambda, Summary::Medoid, |p| Ok(complete_linkage_cluster(p, alpha)))?
        }
    }
    Ok(out)
}

fn clustered<F>(
    out: &mut UserEmbeddings,
    log: &ActionLog,
    pins: &PinStore,
    now: u64,
    lambda: f64,
    summary: Summary,
    cluster: F,
) -> Result<()>
where
    F: FnOnce(&[&[f32]]) -> Result<crate::ward::ClusterSet>,
{
    let params = ProfileParams {
        lambda,
        ..Default::default()
    };
    let w = windowed_engagements(log, pins, &params, now);
    if w.actions.is_empty() {
        return Ok(());
    }
    let ids: Vec<PinId> = w.actions.iter().map(|a| a.0).collect();
    let points: Vec<&[f32]> = w.actions.iter().map(|a| a.2).collect();
    for members in cluster(&points)?.clusters() {
        let importance = compute_importance(members.iter().map(|&i| w.actions[i].1), lambda, now);
        match summary {
            Summary::Medoid => {
                let m = compute_medoid(members, &ids, &points)?;
                out.push(pins.embedding(m).expect("known").to_vec(), importance, Some(m));
            }
            Summary::Centroid => out.push(compute_centroid(members, &points)?.into_inner(), importance, None),
        }
    }
    Ok(())
}

/// Unit-normalized copies of every pin, aligned with store rows.
#[derive(Debug, Clone)]
pub struct UnitPins {
    dim: usize,
    data: Vec<f32>,
}

impl UnitPins {
    pub fn new(pins: &PinStore) -> Result<Self> {
        let mut data = Vec::with_capacity(pins.len() * pins.dimension());
        for (_, v, _) in pins.iter() {
            data.extend(normalized(v)?);
        }
        Ok(Self {
            dim: pins.dimension(),
            data,
        })
    }

    pub fn get(&self, pins: &PinStore, pin: PinId) -> Option<&[f32]> {
        let r = pins.row_of(pin)?;
        Some(&self.data[r * self.dim..(r + 1) * self.dim])
    }
}

fn max_cos(queries: &[Vec<f32>], target: &[f32]) -> f64 {
    queries
        .iter()
        .map(|q| dot_f32(q, target) as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn unit_queries(e: &UserEmbeddings) -> Result<Vec<Vec<f32>>> {
    e.vectors.iter().map(|v| normalized(v)).collect()
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub start: NaiveDate,
    pub days: usize,
    /// First test day; earlier days are training only.
    pub split_day: usize,
    pub threshold: f64,
    pub budget: usize,
    pub impressions_per_action: usize,
    pub window_days: u64,
    pub cache_capacity: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            days: 30,
            split_day: 24,
            threshold: RELEVANCE_THRESHOLD,
            budget: 400,
            impressions_per_action: 20,
            window_days: crate::representation::WINDOW_DAYS,
            cache_capacity: 1 << 16,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split_day == 0 || self.split_day >= self.days {
            return Err(Error::invalid(
                "split_day",
                format!("must lie in 1..{}, got {}", self.days, self.split_day),
            ));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold", "must be a cosine in [-1, 1]"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be positive"));
        }
        if self.impressions_per_action == 0 {
            return Err(Error::invalid("impressions_per_action", "must be positive"));
        }
        Ok(())
    }

    pub fn day_start(&self, d: usize) -> u64 {
        end_of_day(self.start) + 1 - SECONDS_PER_DAY + d as u64 * SECONDS_PER_DAY
    }

    fn test_start(&self) -> u64 {
        self.day_start(self.split_day)
    }
}

/// Counts every training record handed to a model and any that is not
/// strictly earlier than the point being evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Chronology {
    pub batches: usize,
    pub records_checked: usize,
    pub violations: usize,
}

impl Chronology {
    fn check(&mut self, log: &ActionLog, before: u64) {
        self.batches += 1;
        self.records_checked += log.len();
        self.violations += log.records().iter().filter(|r| r.timestamp >= before).count();
    }

    fn merge(&mut self, other: Chronology) {
        self.batches += other.batches;
        self.records_checked += other.records_checked;
        self.violations += other.violations;
    }
}

/// Stable per-(user, slot) stream id so results do not depend on scheduling.
fn stream_key(user: UserId, slot: u64, salt: u64) -> u64 {
    user.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ slot.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ salt
}

#[derive(Debug, Clone, Serialize)]
pub struct NextActionResult {
    pub accuracy: Vec<f64>,
    pub steps: usize,
    pub chronology: Chronology,
}

/// For every test-period engagement with at least one earlier engagement,
/// each model is built from the prefix and succeeds when its best embedding
/// has cosine similarity ≥ `threshold` with the next pin.
pub fn next_action_task(models: &[Model], logs: &[ActionLog], pins: &PinStore, cfg: &EvalConfig) -> Result<NextActionResult> {
    cfg.validate()?;
    for m in models {
        m.validate()?;
    }
    let units = UnitPins::new(pins)?;
    let test_start = cfg.test_start();
    let per_user: Vec<(Vec<usize>, usize, Chronology)> = logs
        .par_iter()
        .map(|log| -> Result<_> {
            let mut hits = vec![0usize; models.len()];
            let mut steps = 0;
            let mut chron = Chronology::default();
            let engaged: Vec<&ActionRecord> = log.engagements().filter(|r| pins.contains(r.pin)).collect();
            for (i, target) in engaged.iter().enumerate() {
                if target.timestamp < test_start || i == 0 {
                    continue;
                }
                let from = target.timestamp.saturating_sub(cfg.window_days * SECONDS_PER_DAY);
                let prefix = ActionLog::new(
                    log.user(),
                    engaged[..i].iter().filter(|r| r.timestamp > from).map(|r| **r).collect(),
                );
                chron.check(&prefix, target.timestamp);
                let now = target.timestamp - 1;
                let goal = units.get(pins, target.pin).expect("known");
                steps += 1;
                for (m, model) in models.iter().enumerate() {
                    let mut rng = Rng::stream(cfg.seed, stream_key(log.user(), target.timestamp, 1));
                    let emb = model_embeddings(model, &prefix, pins, now, &mut rng)?;
                    if emb.is_empty() {
                        continue;
                    }
                    if max_cos(&unit_queries(&emb)?, goal) >= cfg.threshold {
                        hits[m] += 1;
                    }
                }
            }
            Ok((hits, steps, chron))
        })
        .collect::<Result<_>>()?;
    let mut hits = vec![0usize; models.len()];
    let mut steps = 0;
    let mut chronology = Chronology::default();
    for (h, s, c) in per_user {
        for (a, b) in hits.iter_mut().zip(h) {
            *a += b;
        }
        steps += s;
        chronology.merge(c);
    }
    let accuracy = hits.iter().map(|&h| if steps == 0 { 0.0 } else { h as f64 / steps as f64 }).collect();
    Ok(NextActionResult {
        accuracy,
        steps,
        chronology,
    })
}

/// Relevance, recall and diversity of one recommendation set against one
/// batch of held-out actions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub relevance: f64,
    pub recall: f64,
    pub diversity: f64,
    pub diversity_defined: bool,
    pub size: usize,
}

/// Scores `recommended` against `actions` (pins may repeat).
pub fn retrieval_metrics(
    recommended: &[PinId],
    actions: &[PinId],
    pins: &PinStore,
    units: &UnitPins,
    threshold: f64,
) -> RetrievalMetrics {
    let rec_units: Vec<&[f32]> = recommended.iter().filter_map(|&p| units.get(pins, p)).collect();
    let rec_set: HashSet<PinId> = recommended.iter().copied().collect();
    let div = mean_pairwise_distance(&rec_units);
    if actions.is_empty() {
        return RetrievalMetrics {
            diversity: div.value,
            diversity_defined: div.defined,
            size: recommended.len(),
            ..Default::default()
        };
    }
    let mut relevant = 0;
    let mut recalled = 0;
    for &a in actions {
        if rec_set.contains(&a) {
            recalled += 1;
            relevant += 1;
            continue;
        }
        let Some(u) = units.get(pins, a) else { continue };
        if rec_units.iter().any(|r| dot_f32(r, u) as f64 >= threshold) {
            relevant += 1;
        }
    }
    RetrievalMetrics {
        relevance: relevant as f64 / actions.len() as f64,
        recall: recalled as f64 / actions.len() as f64,
        diversity: div.value,
        diversity_defined: div.defined,
        size: recommended.len(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub r_precision: f64,
    pub reciprocal_rank: f64,
}

/// Ranks candidates by descending score; on equal scores negatives go
/// first, then lower pin ids. `k` for R-precision is the number of positives.
pub fn ranking_metrics(candidates: &[(PinId, bool, f64)]) -> RankingMetrics {
    let positives = candidates.iter().filter(|c| c.1).count();
    if positives == 0 {
        return RankingMetrics::default();
    }
    let mut order: Vec<&(PinId, bool, f64)> = candidates.iter().collect();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let top = order[..positives].iter().filter(|c| c.1).count();
    let rr: f64 = order
        .iter()
        .enumerate()
        .filter(|(_, c)| c.1)
        .map(|(rank, _)| 1.0 / (rank + 1) as f64)
        .sum();
    RankingMetrics {
        r_precision: top as f64 / positives as f64,
        reciprocal_rank: rr / positives as f64,
    }
}

/// Shared state for batch evaluation.
pub struct EvalContext<'a> {
    pub pins: &'a PinStore,
    pub index: &'a AnnIndex,
    pub cache: MedoidCache,
    pub units: UnitPins,
    /// Indexed pins, used to pad impression lists.
    pub pool: Vec<PinId>,
    pub config: EvalConfig,
}

impl<'a> EvalContext<'a> {
    pub fn new(pins: &'a PinStore, index: &'a AnnIndex, config: EvalConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            pins,
            index,
            cache: MedoidCache::new(config.cache_capacity)?,
            units: UnitPins::new(pins)?,
            pool: index.ids().to_vec(),
            config,
        })
    }

    fn fetch(&self, e: &UserEmbeddings, per: usize) -> Result<Vec<Vec<Neighbor>>> {
        (0..e.len())
            .map(|i| match e.pins[i] {
                Some(pin) => query_by_medoid(self.index, Some(&self.cache), self.pins, pin, per),
                None => self.index.query(&e.vectors[i], per),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BatchScores {
    pub retrieval: RetrievalMetrics,
    pub ranking: RankingMetrics,
}

/// Macro averages over batches for one model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ModelScores {
    pub relevance: f64,
    pub recall: f64,
    pub r_precision: f64,
    pub reciprocal_rank: f64,
    /// Over batches whose set had at least two pins.
    pub diversity: f64,
    pub mean_set_size: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchResult {
    pub scores: Vec<ModelScores>,
    pub batches: usize,
    pub chronology: Chronology,
}

fn merge_lists(lists: &[Vec<Neighbor>], acted: &HashSet<PinId>) -> Vec<PinId> {
    let mut best: HashMap<PinId, f64> = HashMap::new();
    for list in lists {
        for &(pin, d) in list {
            if acted.contains(&pin) {
                continue;
            }
            let e = best.entry(pin).or_insert(f64::INFINITY);
            *e = e.min(d);
        }
    }
    let mut out: Vec<(PinId, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.into_iter().map(|(p, _)| p).collect()
}

/// Runs retrieval and ranking over every test day for every user with at
/// least one engagement that day and at least one before it.
///
/// Each model samples up to its `e` embeddings in proportion to their weights
/// (single-embedding models use theirs), fetches `budget / sampled` neighbors
/// per embedding, and ranks the day's candidates by the best cosine to the
/// same sampled embeddings. Candidates are the day's engagements plus
/// `impressions_per_action` negatives per engagement, drawn from the day's
/// impressions and padded with random indexed pins.
pub fn batch_tasks(
    ctx: &EvalContext<'_>,
    models: &[Model],
    logs: &[ActionLog],
    users: Option<&HashSet<UserId>>,
) -> Result<BatchResult> {
    for m in models {
        m.validate()?;
        if m.looks_ahead() {
            return Err(Error::invalid("model", format!("{} only applies to next-action prediction", m.name())));
        }
    }
    let cfg = &ctx.config;
    let jobs: Vec<(usize, &ActionLog)> = (cfg.split_day..cfg.days)
        .flat_map(|d| logs.iter().map(move |l| (d, l)))
        .filter(|(_, l)| users.is_none_or(|u| u.contains(&l.user())))
        .collect();
    let results: Vec<Option<(Vec<BatchScores>, Chronology)>> = jobs
        .par_iter()
        .map(|&(day, log)| evaluate_batch(ctx, models, log, day))
        .collect::<Result<_>>()?;

    let mut sums = vec![ModelScores::default(); models.len()];
    let mut div_counts = vec![0usize; models.len()];
    let mut batches = 0;
    let mut chronology = Chronology::default();
    for (scores, chron) in results.into_iter().flatten() {
        batches += 1;
        chronology.merge(chron);
        for (m, s) in scores.iter().enumerate() {
            let acc = &mut sums[m];
            acc.relevance += s.retrieval.relevance;
            acc.recall += s.retrieval.recall;
            acc.r_precision += s.ranking.r_precision;
            acc.reciprocal_rank += s.ranking.reciprocal_rank;
            acc.mean_set_size += s.retrieval.size as f64;
            if s.retrieval.diversity_defined {
                acc.diversity += s.retrieval.diversity;
                div_counts[m] += 1;
            }
        }
    }
    for (acc, &dc) in sums.iter_mut().zip(&div_counts) {
        if batches > 0 {
            let n = batches as f64;
            acc.relevance /= n;
            acc.recall /= n;
            acc.r_precision /= n;
            acc.reciprocal_rank /= n;
            acc.mean_set_size /= n;
        }
        if dc > 0 {
            acc.diversity /= dc as f64;
        }
    }
    Ok(BatchResult {
        scores: sums,
        batches,
        chronology,
    })
}

fn evaluate_batch(
    ctx: &EvalContext<'_>,
    models: &[Model],
    log: &ActionLog,
    day: usize,
) -> Result<Option<(Vec<BatchScores>, Chronology)>> {
    let cfg = &ctx.config;
    let start = cfg.day_start(day);
    let end = start + SECONDS_PER_DAY;
    let today = log.window(start, end);
    let actions: Vec<PinId> = today.engagements().map(|r| r.pin).filter(|p| ctx.pins.contains(*p)).collect();
    if actions.is_empty() {
        return Ok(None);
    }
    let train = log.window(start.saturating_sub(cfg.window_days * SECONDS_PER_DAY), start);
    if !train.engagements().any(|r| ctx.pins.contains(r.pin)) {
        return Ok(None);
    }
    let mut chron = Chronology::default();
    chron.check(&train, start);
    let now = start - 1;
    let acted: HashSet<PinId> = train.engagements().map(|r| r.pin).collect();

    // Negatives shared by all models.
    let mut rng = Rng::stream(cfg.seed, stream_key(log.user(), day as u64, 2));
    let wanted = cfg.impressions_per_action * actions.len();
    let action_set: HashSet<PinId> = actions.iter().copied().collect();
    let mut negatives: Vec<PinId> = today
        .records()
        .iter()
        .filter(|r| !r.kind.is_engagement() && ctx.pins.contains(r.pin) && !action_set.contains(&r.pin))
        .map(|r| r.pin)
        .collect();
    if negatives.len() > wanted {
        rng.shuffle(&mut negatives);
        negatives.truncate(wanted);
    }
    if !ctx.pool.is_empty() {
        let mut guard = 0;
        while negatives.len() < wanted && guard < 100 * wanted {
            guard += 1;
            let p = ctx.pool[rng.index(ctx.pool.len())];
            if !action_set.contains(&p) {
                negatives.push(p);
            }
        }
    }
    let candidates: Vec<(PinId, bool)> = actions
        .iter()
        .map(|&p| (p, true))
        .chain(negatives.iter().map(|&p| (p, false)))
        .collect();

    let mut out = Vec::with_capacity(models.len());
    for model in models {
        let mut krng = Rng::stream(cfg.seed, stream_key(log.user(), day as u64, 3));
        let all = model_embeddings(model, &train, ctx.pins, now, &mut krng)?;
        if all.is_empty() {
            out.push(BatchScores::default());
            continue;
        }
        let chosen = match model.sampled() {
            Some(e) if e < all.len() => {
                let mut srng = Rng::stream(cfg.seed, stream_key(log.user(), day as u64, 4));
                let weighted: Vec<(usize, f64)> = all.weights.iter().copied().enumerate().collect();
                let idx = match weighted_sample_without_replacement(&weighted, e, &mut srng) {
                    Err(Error::AllZeroWeights) => (0..e).collect(),
                    other => other?,
                };
                all.subset(&idx)
            }
            _ => all,
        };
        let per = cfg.budget / chosen.len();
        let recommended = if per == 0 {
            Vec::new()
        } else {
            merge_lists(&ctx.fetch(&chosen, per)?, &acted)
        };
        let retrieval = retrieval_metrics(&recommended, &actions, ctx.pins, &ctx.units, cfg.threshold);
        let queries = unit_queries(&chosen)?;
        let scored: Vec<(PinId, bool, f64)> = candidates
            .iter()
            .map(|&(p, pos)| (p, pos, max_cos(&queries, ctx.units.get(ctx.pins, p).expect("known"))))
            .collect();
        out.push(BatchScores {
            retrieval,
            ranking: ranking_metrics(&scored),
        });
    }
    Ok(Some((out, chron)))
}

/// PinnerSage retrieval at each `e`, restricted to `users` when given.
pub fn diversity_relevance_sweep(
    ctx: &EvalContext<'_>,
    e_values: &[usize],
    logs: &[ActionLog],
    users: Option<&HashSet<UserId>>,
) -> Result<Vec<SweepRow>> {
    let models: Vec<Model> = e_values.iter().map(|&e| Model::pinnersage(e)).collect();
    let result = batch_tasks(ctx, &models, logs, users)?;
    let base = result.scores.first().copied().unwrap_or_default();
    Ok(e_values
        .iter()
        .zip(&result.scores)
        .map(|(&e, s)| SweepRow {
            e,
            relevance: s.relevance,
            recall: s.recall,
            diversity: s.diversity,
            relevance_lift: report::lift(s.relevance, base.relevance),
            diversity_lift: report::lift(s.diversity, base.diversity),
        })
        .collect())
}
