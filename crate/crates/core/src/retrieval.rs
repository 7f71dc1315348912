//! Profile → recommendation set: sample medoids by importance, fetch each
//! medoid's neighborhood from the index, and merge.

use std::collections::{HashMap, HashSet};

use serde::Serialize;

use crate::ann::{query_by_medoid, AnnIndex, MedoidCache, Neighbor};
use crate::distance::{dot, normalized};
use crate::error::{Error, Result};
use crate::representation::UserProfile;
use crate::rng::{weighted_sample_without_replacement, Rng};
use crate::types::{PinId, PinStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalConfig {
    /// Medoids sampled per request.
    pub sampled_medoids: usize,
    pub budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            sampled_medoids: 3,
            budget: 400,
        }
    }
}

impl RetrievalConfig {
    pub fn new(sampled_medoids: usize, budget: usize) -> Result<Self> {
        let cfg = Self {
            sampled_medoids,
            budget,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampled_medoids == 0 {
            return Err(Error::invalid("e", "must be at least 1"));
        }
        if self.budget < self.sampled_medoids {
            return Err(Error::invalid(
                "budget",
                format!("must be at least e = {}, got {}", self.sampled_medoids, self.budget),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Recommendation {
    pub pin: PinId,
    /// Best cosine similarity to any of the queries.
    pub similarity: f64,
    /// Position of the query that produced `similarity`.
    pub source: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RecommendationSet {
    /// Sampled medoids in query order; empty for raw-embedding queries.
    pub medoids: Vec<PinId>,
    /// Descending similarity, ties by pin id.
    pub pins: Vec<Recommendation>,
}

impl RecommendationSet {
    pub fn len(&self) -> usize {
        self.pins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty()
    }

    pub fn pin_ids(&self) -> impl Iterator<Item = PinId> + '_ {
        self.pins.iter().map(|r| r.pin)
    }

    pub fn contains(&self, pin: PinId) -> bool {
        self.pins.iter().any(|r| r.pin == pin)
    }
}

/// Draws `min(e, clusters)` medoids without replacement, proportional to
/// importance. When every cluster fits, all medoids are returned in profile
/// order and `rng` is not consumed.
pub fn sample_medoids(profile: &UserProfile, e: usize, rng: &mut Rng) -> Result<Vec<PinId>> {
    if e == 0 {
        return Err(Error::invalid("e", "must be at least 1"));
    }
    if e >= profile.summaries.len() {
        return Ok(profile.medoids().collect());
    }
    let weighted: Vec<(PinId, f64)> = profile.summaries.iter().map(|s| (s.medoid, s.importance)).collect();
    match weighted_sample_without_replacement(&weighted, e, rng) {
        // Importances can underflow to zero for extreme decay rates.
        Err(Error::AllZeroWeights) => {
            let uniform: Vec<_> = weighted.iter().map(|&(m, _)| (m, 1.0)).collect();
            weighted_sample_without_replacement(&uniform, e, rng)
        }
        other => other,
    }
}

fn merge(lists: &[Vec<Neighbor>], exclude: &HashSet<PinId>) -> Vec<Recommendation> {
    let mut best: HashMap<PinId, Recommendation> = HashMap::new();
    for (source, list) in lists.iter().enumerate() {
        for &(pin, dist) in list {
            if exclude.contains(&pin) {
                continue;
            }
            let cand = Recommendation {
                pin,
                similarity: 1.0 - dist,
                source,
            };
            best.entry(pin)
                .and_modify(|r| {
                    if cand.similarity > r.similarity {
                        *r = cand;
                    }
                })
                .or_insert(cand);
        }
    }
    let mut out: Vec<_> = best.into_values().collect();
    out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.pin.cmp(&b.pin)));
    out
}

/// Recommendation set for a profile.
///
/// Each sampled medoid fetches `budget / sampled` neighbors, dividing by the
/// number actually sampled so single-interest users still fill the budget.
/// Pins in `acted` are removed, as are duplicates across medoids (keeping the
/// best similarity; the earlier query wins ties).
pub fn recommend(
    profile: &UserProfile,
    index: &AnnIndex,
    cache: Option<&MedoidCache>,
    pins: &PinStore,
    cfg: &RetrievalConfig,
    acted: &HashSet<PinId>,
    rng: &mut Rng,
) -> Result<RecommendationSet> {
    cfg.validate()?;
    if profile.is_empty() || index.is_empty() {
        return Ok(RecommendationSet::default());
    }
    let medoids = sample_medoids(profile, cfg.sampled_medoids, rng)?;
    let per = cfg.budget / medoids.len();
    let lists = medoids
        .iter()
        .map(|&m| query_by_medoid(index, cache, pins, m, per))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecommendationSet {
        pins: merge(&lists, acted),
        medoids,
    })
}

/// Same fan-out and merge for arbitrary query embeddings (centroids, decayed
/// averages, ...), fetching `budget / queries` neighbors each.
pub fn recommend_for_embeddings<Q: AsRef<[f32]>>(
    queries: &[Q],
    index: &AnnIndex,
    budget: usize,
    acted: &HashSet<PinId>,
) -> Result<RecommendationSet> {
    if queries.is_empty() || index.is_empty() || budget < queries.len() {
        return Ok(RecommendationSet::default());
    }
    let per = budget / queries.len();
    let lists = queries
        .iter()
        .map(|q| index.query(q.as_ref(), per))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecommendationSet {
        medoids: Vec::new(),
        pins: merge(&lists, acted),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diversity {
    pub value: f64,
    /// `false` when the set has fewer than two pins; `value` is then 0.
    pub defined: bool,
}

/// Mean pairwise cosine distance over the set.
pub fn diversity(set: &RecommendationSet, pins: &PinStore) -> Result<Diversity> {
    let units = set
        .pins
        .iter()
        .map(|r| normalized(pins.embedding(r.pin).ok_or(Error::UnknownPin(r.pin))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_pairwise_distance(&units))
}

/// Mean of `1 − cos` over unordered pairs of unit vectors, via
/// `Σ_{i<j} u_i·u_j = (‖Σu‖² − Σ‖u‖²) / 2`.
pub fn mean_pairwise_distance<V: AsRef<[f32]>>(units: &[V]) -> Diversity {
    let n = units.len();
    if n < 2 {
        return Diversity {
            value: 0.0,
            defined: false,
        };
    }
    let dim = units[0].as_ref().len();
    let mut sum = vec![0f64; dim];
    let mut self_dots = 0.0;
    for u in units {
        let u = u.as_ref();
        for (s, &x) in sum.iter_mut().zip(u) {
            *s += x as f64;
        }
        self_dots += dot(u, u);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let cross = (sum.iter().map(|x| x * x).sum::<f64>() - self_dots) / 2.0;
    Diversity {
        value: (1.0 - cross / pairs).clamp(0.0, 2.0),
        defined: true,
    }
}
