//! Python bindings: Ward clustering, medoids, importance, profile building,
//! the synthetic generator and the nearest-neighbor index.

use std::collections::HashSet;

use multisage_core::ann::{AnnIndex, IndexConfig};
use multisage_core::representation::{self, ProfileParams};
use multisage_core::retrieval::{self, RetrievalConfig};
use multisage_core::synth::{self, WorldConfig};
use multisage_core::ward::Ward;
use multisage_core::{ActionKind, ActionLog, ActionRecord, PinId, PinStore, Rng, UserId};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: multisage_core::Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_kind(kind: &str) -> PyResult<ActionKind> {
    match kind {
        "repin" => Ok(ActionKind::Repin),
        "click" => Ok(ActionKind::Click),
        "impression" => Ok(ActionKind::Impression),
        other => Err(PyValueError::new_err(format!("unknown action kind {other:?}"))),
    }
}

fn kind_name(kind: ActionKind) -> &'static str {
    match kind {
        ActionKind::Repin => "repin",
        ActionKind::Click => "click",
        ActionKind::Impression => "impression",
    }
}

/// Ward clustering with merge threshold `alpha`.
///
/// Returns a dict with `clusters` (lists of point indices), `merges`
/// (`(absorber, absorbed, distance, size)` tuples in merge order) and the
/// chain counters.
#[pyfunction]
fn ward_cluster<'py>(py: Python<'py>, points: Vec<Vec<f32>>, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    let out = Ward::new(alpha)
        .map_err(to_py)?
        .with_cap(usize::MAX)
        .cluster(&points)
        .map_err(to_py)?;
    let merges: Vec<(usize, usize, f64, usize)> = out
        .history
        .events()
        .iter()
        .map(|e| (e.absorber, e.absorbed, e.distance, e.resulting_size))
        .collect();
    let d = PyDict::new(py);
    d.set_item("clusters", out.clusters.clusters().to_vec())?;
    d.set_item("merges", merges)?;
    d.set_item("pushes", out.stats.pushes)?;
    d.set_item("episodes", out.stats.episodes)?;
    d.set_item("reducibility_violations", out.stats.reducibility_violations)?;
    Ok(d)
}

/// Pin of the member minimizing the summed squared distance to the others.
#[pyfunction]
fn compute_medoid(points: Vec<Vec<f32>>, pins: Vec<PinId>) -> PyResult<PinId> {
    if points.len() != pins.len() {
        return Err(PyValueError::new_err("points and pins differ in length"));
    }
    let members: Vec<usize> = (0..points.len()).collect();
    representation::compute_medoid(&members, &pins, &points).map_err(to_py)
}

/// `Σ exp(−λ · age_days)` over the timestamps, ages measured from `now`.
#[pyfunction]
#[pyo3(name = "compute_importance")]
fn importance(timestamps: Vec<u64>, lam: f64, now: u64) -> f64 {
    representation::compute_importance(timestamps, lam, now)
}

/// A fixed pin embedding table.
#[pyclass(frozen)]
struct Pins {
    store: PinStore,
}

#[pymethods]
impl Pins {
    #[new]
    #[pyo3(signature = (ids, embeddings, quality=None))]
    fn new(ids: Vec<PinId>, embeddings: Vec<Vec<f32>>, quality: Option<Vec<f32>>) -> PyResult<Self> {
        if ids.len() != embeddings.len() {
            return Err(PyValueError::new_err("ids and embeddings differ in length"));
        }
        let quality = quality.unwrap_or_else(|| vec![1.0; ids.len()]);
        if quality.len() != ids.len() {
            return Err(PyValueError::new_err("ids and quality differ in length"));
        }
        let dimension = embeddings.first().map_or(0, Vec::len);
        let entries = ids.into_iter().zip(embeddings).zip(quality).map(|((p, e), q)| (p, e, q));
        Ok(Pins {
            store: PinStore::from_entries(dimension, entries).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.store.len()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.store.dimension()
    }

    #[getter]
    fn ids(&self) -> Vec<PinId> {
        self.store.ids().to_vec()
    }

    fn embedding(&self, pin: PinId) -> Option<Vec<f32>> {
        self.store.embedding(pin).map(<[f32]>::to_vec)
    }
}

/// Builds one user's profile as of `now` from `(pin, timestamp, kind)` actions.
///
/// Returns `(medoid, importance, count)` tuples, most important first.
#[pyfunction]
#[pyo3(signature = (pins, actions, now, alpha=None, lam=None))]
fn build_profile(
    pins: &Pins,
    actions: Vec<(PinId, u64, String)>,
    now: u64,
    alpha: Option<f64>,
    lam: Option<f64>,
) -> PyResult<Vec<(PinId, f64, u32)>> {
    let defaults = ProfileParams::default();
    let params = ProfileParams::new(alpha.unwrap_or(defaults.alpha), lam.unwrap_or(defaults.lambda)).map_err(to_py)?;
    let records = actions
        .into_iter()
        .map(|(pin, ts, kind)| Ok(ActionRecord::new(pin, ts, parse_kind(&kind)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let log = ActionLog::new(0, records);
    let built = representation::build_profile(&log, &pins.store, &params, now).map_err(to_py)?;
    Ok(built
        .profile
        .summaries
        .iter()
        .map(|s| (s.medoid, s.importance, s.member_count))
        .collect())
}

/// A generated corpus: pins plus every user's action log.
#[pyclass(frozen)]
struct World {
    pins: Py<Pins>,
    logs: Vec<ActionLog>,
    interests: Vec<Vec<u32>>,
}

#[pymethods]
impl World {
    #[getter]
    fn pins(&self, py: Python<'_>) -> Py<Pins> {
        self.pins.clone_ref(py)
    }

    #[getter]
    fn users(&self) -> Vec<UserId> {
        self.logs.iter().map(ActionLog::user).collect()
    }

    /// `(pin, timestamp, kind)` for every record of `user`, in time order.
    fn actions(&self, user: UserId) -> PyResult<Vec<(PinId, u64, &'static str)>> {
        let log = self
            .logs
            .iter()
            .find(|l| l.user() == user)
            .ok_or_else(|| PyValueError::new_err(format!("no user {user}")))?;
        Ok(log.records().iter().map(|r| (r.pin, r.timestamp, kind_name(r.kind))).collect())
    }

    /// Ground-truth subtopics of `user`.
    fn interests(&self, user: UserId) -> PyResult<Vec<u32>> {
        let i = self
            .logs
            .iter()
            .position(|l| l.user() == user)
            .ok_or_else(|| PyValueError::new_err(format!("no user {user}")))?;
        Ok(self.interests[i].clone())
    }
}

/// Generates a synthetic world. Keyword arguments override the defaults.
#[pyfunction]
#[pyo3(signature = (seed=7, n_users=None, n_topics=None, pins_per_topic=None, background_pins=None, days=None))]
fn generate_world(
    py: Python<'_>,
    seed: u64,
    n_users: Option<usize>,
    n_topics: Option<usize>,
    pins_per_topic: Option<usize>,
    background_pins: Option<usize>,
    days: Option<usize>,
) -> PyResult<World> {
    let mut cfg = WorldConfig {
        seed,
        ..Default::default()
    };
    if let Some(v) = n_users {
        cfg.n_users = v;
    }
    if let Some(v) = n_topics {
        cfg.n_topics = v;
    }
    if let Some(v) = pins_per_topic {
        cfg.pins_per_topic = v;
    }
    if let Some(v) = background_pins {
        cfg.background_pins = v;
    }
    if let Some(v) = days {
        cfg.days = v;
    }
    let world = py.detach(|| synth::generate_world(&cfg)).map_err(to_py)?;
    let interests = world
        .truth
        .iter()
        .map(|t| t.interests.iter().map(|i| i.subtopic).collect())
        .collect();
    Ok(World {
        pins: Py::new(py, Pins { store: world.pins })?,
        logs: world.logs,
        interests,
    })
}

/// HNSW index over a set of pins.
#[pyclass(frozen)]
struct Index {
    index: AnnIndex,
    pins: Py<Pins>,
}

#[pymethods]
impl Index {
    #[new]
    #[pyo3(signature = (pins, seed=7, m=None, build_beam=None))]
    fn new(py: Python<'_>, pins: Py<Pins>, seed: u64, m: Option<usize>, build_beam: Option<usize>) -> PyResult<Self> {
        let mut cfg = IndexConfig::default();
        if let Some(m) = m {
            cfg.max_neighbors = m;
        }
        if let Some(b) = build_beam {
            cfg.build_beam = b;
        }
        let store = &pins.get().store;
        let index = py
            .detach(|| AnnIndex::build(store, store.ids(), &cfg, &mut Rng::new(seed)))
            .map_err(to_py)?;
        Ok(Index { index, pins })
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }

    /// `(pin, distance)` pairs for the `k` nearest pins to `vector`.
    #[pyo3(signature = (vector, k=10))]
    fn query(&self, vector: Vec<f32>, k: usize) -> PyResult<Vec<(PinId, f64)>> {
        self.index.query(&vector, k).map_err(to_py)
    }

    /// Recommendations for a profile given as `(medoid, importance, count)`
    /// tuples, as `(pin, similarity)` pairs.
    #[pyo3(signature = (profile, e=3, budget=400, seed=7))]
    fn recommend(&self, profile: Vec<(PinId, f64, u32)>, e: usize, budget: usize, seed: u64) -> PyResult<Vec<(PinId, f64)>> {
        let cfg = RetrievalConfig::new(e, budget).map_err(to_py)?;
        let mut user = representation::UserProfile::empty(0, representation::ProfileVersion {
            date: representation::date_of(0),
            source: representation::ProfileSource::Batch,
        });
        user.summaries = profile
            .into_iter()
            .map(|(medoid, importance, member_count)| representation::ClusterSummary {
                medoid,
                importance,
                member_count,
            })
            .collect();
        let set = retrieval::recommend(
            &user,
            &self.index,
            None,
            &self.pins.get().store,
            &cfg,
            &HashSet::new(),
            &mut Rng::new(seed),
        )
        .map_err(to_py)?;
        Ok(set.pins.iter().map(|r| (r.pin, r.similarity)).collect())
    }
}

#[pymodule]
fn multisage(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ward_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(compute_medoid, m)?)?;
    m.add_function(wrap_pyfunction!(importance, m)?)?;
    m.add_function(wrap_pyfunction!(build_profile, m)?)?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_class::<Pins>()?;
    m.add_class::<World>()?;
    m.add_class::<Index>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
