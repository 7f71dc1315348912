//! Ward agglomerative clustering of a single user's action pins.
//!
//! The clustering runs the stack-based nearest-neighbor chain over a condensed
//! distance matrix, merging two clusters as soon as they are each other's
//! nearest neighbor. Distances start as plain squared Euclidean distances
//! (no halving) and are maintained with the Lance–Williams recurrence for the
//! minimum-variance criterion. Ward's linkage is reducible, so the chain
//! produces the same dendrogram as greedy closest-pair merging in `O(m²)`
//! time and `O(m²)` memory.
//!
//! Flat clusters are read off the merge history by scanning merges from the
//! most to the least expensive and keeping every merged cluster whose cost is
//! within the threshold and which does not overlap a cluster already kept.
//! Points left uncovered become singleton clusters.

use crate::distance::sq_dist;
use crate::error::{Error, Result};

/// Threshold suited to unit-normalized embeddings (squared L2 range `[0, 4]`).
pub const DEFAULT_ALPHA: f64 = 1.0;

/// Largest action count clustered for one user.
pub const DEFAULT_POINT_CAP: usize = 5000;

/// Largest input accepted by [`naive_ward_oracle`].
pub const ORACLE_POINT_CAP: usize = 256;

const LEMMA_TOLERANCE: f64 = 1e-9;

/// Cluster `absorbed` merged into cluster `absorber` at Ward cost `distance`.
/// The absorber keeps its id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub absorber: usize,
    pub absorbed: usize,
    pub distance: f64,
    pub resulting_size: usize,
}

/// Merge events in the order they were performed.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeHistory {
    initial_count: usize,
    events: Vec<MergeEvent>,
}

impl MergeHistory {
    /// Validates that the events describe a forest over `initial_count` points:
    /// ids in range, nothing absorbed twice, nothing used after being absorbed,
    /// and sizes that add up.
    pub fn new(initial_count: usize, events: Vec<MergeEvent>) -> Result<Self> {
        let mut size = vec![1usize; initial_count];
        let mut alive = vec![true; initial_count];
        for (n, e) in events.iter().enumerate() {
            let bad = |reason: String| Err(Error::format("merge history", format!("event {n}: {reason}")));
            if e.absorber >= initial_count || e.absorbed >= initial_count {
                return bad("cluster id out of range".into());
            }
            if e.absorber == e.absorbed {
                return bad("cluster merged with itself".into());
            }
            if !alive[e.absorber] || !alive[e.absorbed] {
                return bad("cluster used after being absorbed".into());
            }
            if !(e.distance >= 0.0) || !e.distance.is_finite() {
                return bad(format!("invalid distance {}", e.distance));
            }
            let merged = size[e.absorber] + size[e.absorbed];
            if merged != e.resulting_size {
                return bad(format!("size {} != {merged}", e.resulting_size));
            }
            size[e.absorber] = merged;
            alive[e.absorbed] = false;
        }
        Ok(MergeHistory {
            initial_count,
            events,
        })
    }

    pub fn initial_count(&self) -> usize {
        self.initial_count
    }

    pub fn events(&self) -> &[MergeEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// A full dendrogram has exactly `m − 1` merges.
    pub fn is_complete(&self) -> bool {
        self.events.len() + 1 == self.initial_count.max(1)
    }

    /// Merge costs sorted ascending.
    pub fn sorted_costs(&self) -> Vec<f64> {
        let mut costs: Vec<f64> = self.events.iter().map(|e| e.distance).collect();
        costs.sort_by(f64::total_cmp);
        costs
    }
}

/// A partition of point indices `0..m`.
///
/// Stored canonically (members ascending, clusters ordered by smallest member)
/// so two partitions compare equal exactly when they group the same points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    clusters: Vec<Vec<usize>>,
    assignment: Vec<usize>,
}

impl ClusterSet {
    /// Builds a partition; every index in `0..point_count` must appear exactly once.
    pub fn from_clusters(point_count: usize, mut clusters: Vec<Vec<usize>>) -> Result<Self> {
        clusters.retain(|c| !c.is_empty());
        for c in clusters.iter_mut() {
            c.sort_unstable();
        }
        clusters.sort_unstable_by_key(|c| c[0]);
        let mut assignment = vec![usize::MAX; point_count];
        for (ordinal, c) in clusters.iter().enumerate() {
            for &p in c {
                if p >= point_count || assignment[p] != usize::MAX {
                    return Err(Error::format("cluster set", format!("point {p} missing or repeated")));
                }
                assignment[p] = ordinal;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(Error::format("cluster set", "partition does not cover every point"));
        }
        Ok(ClusterSet {
            clusters,
            assignment,
        })
    }

    /// Groups points by label.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (p, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(p);
        }
        ClusterSet::from_clusters(labels.len(), groups.into_values().collect())
            .expect("labels always form a partition")
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    /// Cluster ordinal of each point.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.assignment.len()
    }
}

/// Counters collected while running the chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChainStats {
    /// Outer-loop iterations, each starting from an empty stack.
    pub episodes: usize,
    pub pushes: usize,
    pub merges: usize,
    pub lance_williams_updates: usize,
    /// Updates that fell below the smaller child distance while the merge
    /// precondition held.
    pub reducibility_violations: usize,
    /// Pushes of a cluster that was already on the stack.
    pub double_pushes: usize,
}

impl ChainStats {
    /// Upper bound on pushes for `m` points: each merge pops two clusters, and
    /// every cluster is pushed at most once per episode.
    pub fn push_bound(m: usize) -> usize {
        2 * m.saturating_sub(1) + m
    }
}

#[derive(Debug, Clone)]
pub struct WardOutput {
    pub history: MergeHistory,
    pub clusters: ClusterSet,
    pub stats: ChainStats,
}

/// Ward distance between `C_i ∪ C_j` and `C_k` from the children's distances.
pub fn lance_williams_update(
    d_ik: f64,
    d_jk: f64,
    d_ij: f64,
    n_i: usize,
    n_j: usize,
    n_k: usize,
) -> f64 {
    let (ni, nj, nk) = (n_i as f64, n_j as f64, n_k as f64);
    ((ni + nk) * d_ik + (nj + nk) * d_jk - nk * d_ij) / (ni + nj + nk)
}

/// Ward clustering with a merge threshold and an input cap.
#[derive(Debug, Clone, Copy)]
pub struct Ward {
    alpha: f64,
    cap: usize,
}

impl Ward {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {alpha}")));
        }
        Ok(Ward {
            alpha,
            cap: DEFAULT_POINT_CAP,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cluster<P: AsRef<[f32]>>(&self, points: &[P]) -> Result<WardOutput> {
        let m = points.len();
        if m > self.cap {
            return Err(Error::TooManyPoints { count: m, cap: self.cap });
        }
        check_points(points)?;
        let (history, stats) = nn_chain(points);
        let clusters = extract_clusters(&history, self.alpha);
        Ok(WardOutput {
            history,
            clusters,
            stats,
        })
    }
}

/// Clusters `points` with the default input cap and cuts at `alpha`.
pub fn ward_cluster<P: AsRef<[f32]>>(points: &[P], alpha: f64) -> Result<WardOutput> {
    Ward::new(alpha)?.cluster(points)
}

fn check_points<P: AsRef<[f32]>>(points: &[P]) -> Result<()> {
    if let Some(first) = points.first() {
        let d = first.as_ref().len();
        for p in points {
            let p = p.as_ref();
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: p.len(),
                });
            }
            if let Some(pos) = p.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(pos));
            }
        }
    }
    Ok(())
}

/// Upper-triangular distances between clusters, indexed by original point id.
struct Condensed {
    m: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn new<P: AsRef<[f32]>>(points: &[P]) -> Self {
        let m = points.len();
        let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                d.push(sq_dist(points[i].as_ref(), points[j].as_ref()));
            }
        }
        Condensed { m, d }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * self.m - a - 1) / 2 + (b - a - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.slot(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.d[s] = v;
    }
}

fn nn_chain<P: AsRef<[f32]>>(points: &[P]) -> (MergeHistory, ChainStats) {
    let m = points.len();
    let mut stats = ChainStats::default();
    let mut events = Vec::with_capacity(m.saturating_sub(1));
    if m < 2 {
        return (MergeHistory::new(m, events).expect("empty history"), stats);
    }

    let mut dist = Condensed::new(points);
    let mut size = vec![1usize; m];
    // Live cluster ids, ascending; the first entry is the chain's seed.
    let mut live: Vec<usize> = (0..m).collect();
    let mut on_stack = vec![false; m];
    let mut stack: Vec<usize> = Vec::with_capacity(m);

    while live.len() > 1 {
        stats.episodes += 1;
        let seed = live[0];
        stack.push(seed);
        on_stack[seed] = true;
        stats.pushes += 1;

        while let Some(&i) = stack.last() {
            // Nearest live neighbor of the top; strict `<` keeps the lowest id on ties.
            let mut best = f64::INFINITY;
            let mut nearest = usize::MAX;
            for &k in &live {
                if k != i {
                    let d = dist.get(i, k);
                    if d < best {
                        best = d;
                        nearest = k;
                    }
                }
            }
            debug_assert!(nearest != usize::MAX);

            if stack.len() >= 2 {
                let j = stack[stack.len() - 2];
                let d_ij = dist.get(i, j);
                if d_ij == best {
                    stack.pop();
                    stack.pop();
                    on_stack[i] = false;
                    on_stack[j] = false;
                    merge(&mut dist, &mut size, &mut live, i, j, d_ij, &mut stats);
                    events.push(MergeEvent {
                        absorber: i,
                        absorbed: j,
                        distance: d_ij,
                        resulting_size: size[i],
                    });
                    stats.merges += 1;
                    continue;
                }
            }

            if on_stack[nearest] {
                stats.double_pushes += 1;
                debug_assert!(false, "cluster {nearest} pushed twice onto the chain");
                // Collapse the cycle so release builds still terminate.
                while let Some(&top) = stack.last() {
                    if top == nearest {
                        break;
                    }
                    on_stack[top] = false;
                    stack.pop();
                }
                continue;
            }
            stack.push(nearest);
            on_stack[nearest] = true;
            stats.pushes += 1;
        }
    }

    let history = MergeHistory::new(m, events).expect("chain produces a valid history");
    (history, stats)
}

fn merge(
    dist: &mut Condensed,
    size: &mut [usize],
    live: &mut Vec<usize>,
    i: usize,
    j: usize,
    d_ij: f64,
    stats: &mut ChainStats,
) {
    let (n_i, n_j) = (size[i], size[j]);
    for &k in live.iter() {
        if k == i || k == j {
            continue;
        }
        let d_ik = dist.get(i, k);
        let d_jk = dist.get(j, k);
        let updated = lance_williams_update(d_ik, d_jk, d_ij, n_i, n_j, size[k]);
        stats.lance_williams_updates += 1;
        let floor = d_ik.min(d_jk);
        if d_ij <= floor && updated < floor - LEMMA_TOLERANCE {
            stats.reducibility_violations += 1;
        }
        dist.set(i, k, updated);
    }
    size[i] = n_i + n_j;
    let pos = live.binary_search(&j).expect("absorbed cluster is live");
    live.remove(pos);
}

/// Cuts a merge history at `alpha`.
///
/// Merges are visited by decreasing cost (ties: larger merged cluster first,
/// then lower absorber id), and a merged cluster is kept when its cost is at
/// most `alpha` and it is disjoint from every cluster kept so far. Points that
/// end up in no kept cluster become singletons.
pub fn extract_clusters(history: &MergeHistory, alpha: f64) -> ClusterSet {
    let m = history.initial_count();
    let events = history.events();

    // Dendrogram nodes: 0..m are points, m + e is the cluster formed by event e.
    let mut children = Vec::with_capacity(events.len());
    let mut current: Vec<usize> = (0..m).collect();
    for (e, ev) in events.iter().enumerate() {
        children.push((current[ev.absorber], current[ev.absorbed]));
        current[ev.absorber] = m + e;
    }

    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&events[a], &events[b]);
        eb.distance
            .total_cmp(&ea.distance)
            .then(eb.resulting_size.cmp(&ea.resulting_size))
            .then(ea.absorber.cmp(&eb.absorber))
            .then(a.cmp(&b))
    });

    let mut covered = vec![false; m];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut scratch = Vec::new();
    for e in order {
        if events[e].distance > alpha {
            continue;
        }
        let mut members = Vec::with_capacity(events[e].resulting_size);
        scratch.clear();
        scratch.push(m + e);
        let mut overlaps = false;
        while let Some(node) = scratch.pop() {
            if node < m {
                if covered[node] {
                    overlaps = true;
                    break;
                }
                members.push(node);
            } else {
                let (a, b) = children[node - m];
                scratch.push(a);
                scratch.push(b);
            }
        }
        if overlaps {
            continue;
        }
        for &p in &members {
            covered[p] = true;
        }
        clusters.push(members);
    }
    clusters.extend((0..m).filter(|&p| !covered[p]).map(|p| vec![p]));
    ClusterSet::from_clusters(m, clusters).expect("dendrogram cut is a partition")
}

/// Greedy `O(m³)` Ward: repeatedly merge the globally closest pair, with ties
/// going to the lexicographically smallest `(i, j)`. Test-scale reference for
/// the chain.
pub fn naive_ward_oracle<P: AsRef<[f32]>>(points: &[P]) -> Result<MergeHistory> {
    let m = points.len();
    if m > ORACLE_POINT_CAP {
        return Err(Error::TooManyPoints {
            count: m,
            cap: ORACLE_POINT_CAP,
        });
    }
    check_points(points)?;
    let mut d = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let v = sq_dist(points[i].as_ref(), points[j].as_ref());
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut size = vec![1usize; m];
    let mut live: Vec<usize> = (0..m).collect();
    let mut events = Vec::with_capacity(m.saturating_sub(1));
    while live.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (a, &i) in live.iter().enumerate() {
            for &j in &live[a + 1..] {
                if d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (d_ij, i, j) = best;
        for &k in &live {
            if k != i && k != j {
                let v = lance_williams_update(d[i][k], d[j][k], d_ij, size[i], size[j], size[k]);
                d[i][k] = v;
                d[k][i] = v;
            }
        }
        size[i] += size[j];
        live.retain(|&k| k != j);
        events.push(MergeEvent {
            absorber: i,
            absorbed: j,
            distance: d_ij,
            resulting_size: size[i],
        });
    }
    MergeHistory::new(m, events)
}
