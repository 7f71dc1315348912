//! Approximate nearest-neighbor search over pin embeddings under cosine
//! distance: candidate-pool refinement, a layered navigable small-world graph,
//! a medoid-keyed result cache and a brute-force oracle.

mod cache;
mod hnsw;
mod refine;

pub use cache::MedoidCache;
pub use hnsw::{AnnIndex, INDEX_MAGIC, INDEX_FORMAT_VERSION};
pub use refine::{refine_pool, Refinement};

use crate::distance::normalized;
use crate::error::{Error, Result};
use crate::types::{PinId, PinStore};

/// `(pin, cosine distance)`, ascending by distance then pin id.
pub type Neighbor = (PinId, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    /// `M`: links per node on upper layers; layer 0 keeps up to `2M`.
    pub max_neighbors: usize,
    pub build_beam: usize,
    pub query_beam: usize,
    pub dedup_threshold: f64,
    pub quality_floor: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            max_neighbors: 16,
            build_beam: 200,
            query_beam: 100,
            dedup_threshold: 0.99,
            quality_floor: 0.0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_neighbors < 2 {
            return Err(Error::invalid("max_neighbors", format!("must be at least 2, got {}", self.max_neighbors)));
        }
        if self.build_beam == 0 {
            return Err(Error::invalid("build_beam", "must be positive"));
        }
        if self.query_beam == 0 {
            return Err(Error::invalid("query_beam", "must be positive"));
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(Error::invalid("dedup_threshold", format!("must lie in (0, 1], got {}", self.dedup_threshold)));
        }
        if !(0.0..=1.0).contains(&self.quality_floor) {
            return Err(Error::invalid("quality_floor", format!("must lie in [0, 1], got {}", self.quality_floor)));
        }
        Ok(())
    }
}

/// Cosine distance between two unit vectors, computed in `f64`.
#[inline]
pub(crate) fn unit_distance(a: &[f32], b: &[f32]) -> f64 {
    (1.0 - crate::distance::dot(a, b)).clamp(0.0, 2.0)
}

pub(crate) fn sort_neighbors(list: &mut [Neighbor]) {
    list.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

/// Exhaustive k-NN over `accepted`; ground truth for recall measurements.
///
/// Unknown ids in `accepted` are ignored.
pub fn exact_knn(store: &PinStore, accepted: &[PinId], q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    if q.len() != store.dimension() {
        return Err(Error::DimensionMismatch {
            expected: store.dimension(),
            actual: q.len(),
        });
    }
    let qn = normalized(q)?;
    let mut out = Vec::with_capacity(accepted.len());
    for &pin in accepted {
        if let Some(v) = store.embedding(pin) {
            out.push((pin, unit_distance(&qn, &normalized(v)?)));
        }
    }
    sort_neighbors(&mut out);
    out.truncate(k);
    Ok(out)
}

/// Neighbors of a medoid pin, served from `cache` when possible.
///
/// The medoid itself never appears in its own result list. The embedding is
/// looked up in `pins`, so medoids dropped by refinement still work.
pub fn query_by_medoid(
    index: &AnnIndex,
    cache: Option<&MedoidCache>,
    pins: &PinStore,
    medoid: PinId,
    k: usize,
) -> Result<Vec<Neighbor>> {
    let embedding = pins.embedding(medoid).ok_or(Error::UnknownPin(medoid))?;
    let compute = || -> Result<Vec<Neighbor>> {
        let mut list = index.query(embedding, k + 1)?;
        list.retain(|&(p, _)| p != medoid);
        list.truncate(k);
        Ok(list)
    };
    match cache {
        Some(c) => c.get_or_compute(index.version(), medoid, k, compute),
        None => compute(),
    }
}

/// Fraction of `truth` found in `found`; `1` when `truth` is empty.
pub fn recall(found: &[Neighbor], truth: &[Neighbor]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth.iter().filter(|t| found.iter().any(|f| f.0 == t.0)).count();
    hits as f64 / truth.len() as f64
}
