//! Hierarchical navigable small-world graph.
//!
//! Vectors are L2-normalized once at build time. Graph traversal ranks by
//! single-precision dot products; reported distances are recomputed in `f64`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use super::{sort_neighbors, unit_distance, IndexConfig, Neighbor};
use crate::distance::{dot_f32, normalized};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::rng::Rng;
use crate::types::{PinId, PinStore};

pub const INDEX_MAGIC: &[u8; 4] = b"MSGI";
pub const INDEX_FORMAT_VERSION: u32 = 1;

const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Cand {
    dist: f32,
    node: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.node.cmp(&other.node))
    }
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Visited(vec![0; n.div_ceil(64)])
    }

    /// Returns `true` if `i` was not yet marked.
    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let fresh = self.0[w] & (1 << b) == 0;
        self.0[w] |= 1 << b;
        fresh
    }
}

/// Frozen after build: queries take `&self` and may run concurrently.
pub struct AnnIndex {
    config: IndexConfig,
    dim: usize,
    ids: Vec<PinId>,
    vectors: Vec<f32>,
    /// node → level → neighbor nodes.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
    version: u64,
    traversals: AtomicU64,
}

impl std::fmt::Debug for AnnIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnIndex")
            .field("len", &self.ids.len())
            .field("dim", &self.dim)
            .field("max_level", &self.max_level)
            .field("version", &self.version)
            .finish()
    }
}

impl AnnIndex {
    /// Indexes exactly the pins in `accepted` (duplicates ignored).
    pub fn build(store: &PinStore, accepted: &[PinId], cfg: &IndexConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ids = accepted.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let dim = store.dimension();
        let mut vectors = Vec::with_capacity(ids.len() * dim);
        for &pin in &ids {
            let v = store.embedding(pin).ok_or(Error::UnknownPin(pin))?;
            vectors.extend(normalized(v)?);
        }
        if ids.len() > u32::MAX as usize {
            return Err(Error::TooManyPoints {
                count: ids.len(),
                cap: u32::MAX as usize,
            });
        }
        let mut index = AnnIndex {
            config: *cfg,
            dim,
            links: Vec::with_capacity(ids.len()),
            ids,
            vectors,
            entry: 0,
            max_level: 0,
            version: 0,
            traversals: AtomicU64::new(0),
        };
        let ml = 1.0 / (cfg.max_neighbors as f64).ln();
        for node in 0..index.ids.len() {
            let u = rng.uniform();
            let level = ((-(1.0 - u).ln() * ml).floor() as usize).min(MAX_LEVEL);
            index.insert(node as u32, level);
        }
        index.repair_symmetry();
        index.version = index.fingerprint();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    /// Indexed pins in ascending id order.
    pub fn ids(&self) -> &[PinId] {
        &self.ids
    }

    pub fn contains(&self, pin: PinId) -> bool {
        self.ids.binary_search(&pin).is_ok()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Content fingerprint; changes whenever the graph or its pins change.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of graph searches run so far.
    pub fn traversals(&self) -> u64 {
        self.traversals.load(AtomicOrdering::Relaxed)
    }

    /// Neighbor lists of `pin` on `level`, as pin ids.
    pub fn neighbors(&self, pin: PinId, level: usize) -> Option<Vec<PinId>> {
        let node = self.ids.binary_search(&pin).ok()?;
        let links = self.links[node].get(level)?;
        Some(links.iter().map(|&n| self.ids[n as usize]).collect())
    }

    #[inline]
    fn vector(&self, node: u32) -> &[f32] {
        let s = node as usize * self.dim;
        &self.vectors[s..s + self.dim]
    }

    #[inline]
    fn dist_to(&self, q: &[f32], node: u32) -> f32 {
        1.0 - dot_f32(q, self.vector(node))
    }

    fn cap(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.config.max_neighbors
        } else {
            self.config.max_neighbors
        }
    }

    fn search_layer(&self, q: &[f32], entries: &[Cand], ef: usize, level: usize) -> Vec<Cand> {
        let mut visited = Visited::new(self.ids.len());
        let mut candidates: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut results: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.node) {
                candidates.push(Reverse(e));
                results.push(e);
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if results.len() >= ef && c.dist > results.peek().map_or(f32::INFINITY, |w| w.dist) {
                break;
            }
            for &nb in &self.links[c.node as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let d = self.dist_to(q, nb);
                if results.len() < ef || d < results.peek().map_or(f32::INFINITY, |w| w.dist) {
                    let cand = Cand { dist: d, node: nb };
                    candidates.push(Reverse(cand));
                    results.push(cand);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out = results.into_vec();
        out.sort();
        out
    }

    fn greedy_descend(&self, q: &[f32], top: usize, bottom: usize) -> Cand {
        let mut ep = Cand {
            dist: self.dist_to(q, self.entry),
            node: self.entry,
        };
        for level in (bottom..=top).rev() {
            ep = self.search_layer(q, &[ep], 1, level)[0];
        }
        ep
    }

    /// Keeps candidates that are closer to the base than to any neighbor
    /// already selected, then tops up with the pruned ones.
    fn select_neighbors(&self, sorted: &[Cand], m: usize) -> Vec<u32> {
        let mut chosen: Vec<Cand> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in sorted {
            if chosen.len() >= m {
                break;
            }
            let v = self.vector(c.node);
            if chosen.iter().all(|s| 1.0 - dot_f32(v, self.vector(s.node)) > c.dist) {
                chosen.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if chosen.len() >= m {
                break;
            }
            chosen.push(c);
        }
        chosen.into_iter().map(|c| c.node).collect()
    }

    fn insert(&mut self, node: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        if node == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let q = self.vector(node).to_vec();
        let mut eps = if level < self.max_level {
            vec![self.greedy_descend(&q, self.max_level, level + 1)]
        } else {
            vec![Cand {
                dist: self.dist_to(&q, self.entry),
                node: self.entry,
            }]
        };
        for lev in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&q, &eps, self.config.build_beam, lev);
            let chosen = self.select_neighbors(&found, self.config.max_neighbors);
            for &nb in &chosen {
                self.links[nb as usize][lev].push(node);
                if self.links[nb as usize][lev].len() > self.cap(lev) {
                    self.shrink(nb, lev);
                }
            }
            self.links[node as usize][lev] = chosen;
            eps = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    fn shrink(&mut self, node: u32, level: usize) {
        let v = self.vector(node);
        let mut cands: Vec<Cand> = self.links[node as usize][level]
            .iter()
            .map(|&n| Cand {
                dist: 1.0 - dot_f32(v, self.vector(n)),
                node: n,
            })
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, self.cap(level));
        self.links[node as usize][level] = kept;
    }

    /// Adds the reverse of every directed edge so each layer is undirected.
    fn repair_symmetry(&mut self) {
        for level in 0..=self.max_level {
            let mut missing = Vec::new();
            for (u, per_level) in self.links.iter().enumerate() {
                let Some(list) = per_level.get(level) else { continue };
                for &v in list {
                    if !self.links[v as usize][level].contains(&(u as u32)) {
                        missing.push((v, u as u32));
                    }
                }
            }
            for (v, u) in missing {
                let list = &mut self.links[v as usize][level];
                if !list.contains(&u) {
                    list.push(u);
                }
            }
        }
    }

    fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(&(self.dim as u64).to_le_bytes());
        feed(&(self.ids.len() as u64).to_le_bytes());
        feed(&self.entry.to_le_bytes());
        for (node, &pin) in self.ids.iter().enumerate() {
            feed(&pin.to_le_bytes());
            for x in self.vector(node as u32) {
                feed(&x.to_le_bytes());
            }
            for level in &self.links[node] {
                feed(&(level.len() as u32).to_le_bytes());
                for n in level {
                    feed(&n.to_le_bytes());
                }
            }
        }
        h
    }

    /// Up to `k` nearest pins under cosine distance using the configured
    /// query beam (raised to `k` when smaller).
    pub fn query(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.query_with_beam(q, k, self.config.query_beam)
    }

    pub fn query_with_beam(&self, q: &[f32], k: usize, beam: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: q.len(),
            });
        }
        if self.ids.is_empty() {
            return Ok(Vec::new());
        }
        let qn = normalized(q)?;
        self.traversals.fetch_add(1, AtomicOrdering::Relaxed);
        let ep = if self.max_level > 0 {
            self.greedy_descend(&qn, self.max_level, 1)
        } else {
            Cand {
                dist: self.dist_to(&qn, self.entry),
                node: self.entry,
            }
        };
        let found = self.search_layer(&qn, &[ep], beam.max(k), 0);
        let mut out: Vec<Neighbor> = found
            .iter()
            .map(|c| (self.ids[c.node as usize], unit_distance(&qn, self.vector(c.node))))
            .collect();
        sort_neighbors(&mut out);
        out.truncate(k);
        Ok(out)
    }

    /// Exhaustive scan over the indexed vectors.
    pub fn brute_force(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: q.len(),
            });
        }
        let qn = normalized(q)?;
        // Screen in single precision, then rank the survivors exactly.
        let mut screen: Vec<Cand> = (0..self.ids.len() as u32)
            .map(|n| Cand {
                dist: self.dist_to(&qn, n),
                node: n,
            })
            .collect();
        let keep = (2 * k + 16).min(screen.len());
        if keep < screen.len() {
            screen.select_nth_unstable(keep);
            let cutoff = screen[keep].dist + 1e-4;
            screen.retain(|c| c.dist <= cutoff);
        }
        let mut out: Vec<Neighbor> = screen
            .iter()
            .map(|c| (self.ids[c.node as usize], unit_distance(&qn, self.vector(c.node))))
            .collect();
        sort_neighbors(&mut out);
        out.truncate(k);
        Ok(out)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.max_neighbors as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.build_beam as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.query_beam as u32).to_le_bytes());
        out.extend_from_slice(&self.config.dedup_threshold.to_le_bytes());
        out.extend_from_slice(&self.config.quality_floor.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.entry.to_le_bytes());
        out.extend_from_slice(&(self.max_level as u32).to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        for (node, &pin) in self.ids.iter().enumerate() {
            out.extend_from_slice(&pin.to_le_bytes());
            for x in self.vector(node as u32) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&(self.links[node].len() as u32).to_le_bytes());
            for level in &self.links[node] {
                out.extend_from_slice(&(level.len() as u32).to_le_bytes());
                for n in level {
                    out.extend_from_slice(&n.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        if r.array::<4>()? != *INDEX_MAGIC {
            return Err(Error::format("index", "bad magic"));
        }
        let format = r.u32()?;
        if format != INDEX_FORMAT_VERSION {
            return Err(Error::format("index", format!("unsupported format version {format}")));
        }
        let dim = r.u32()? as usize;
        let config = IndexConfig {
            max_neighbors: r.u32()? as usize,
            build_beam: r.u32()? as usize,
            query_beam: r.u32()? as usize,
            dedup_threshold: f64::from_le_bytes(r.array()?),
            quality_floor: f64::from_le_bytes(r.array()?),
        };
        config.validate()?;
        let n = r.u64()? as usize;
        let entry = r.u32()?;
        let max_level = r.u32()? as usize;
        let version = r.u64()?;
        if n > bytes.len() {
            return Err(Error::format("index", "node count exceeds file size"));
        }
        let mut ids = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        let mut links = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.u64()?);
            for _ in 0..dim {
                vectors.push(f32::from_le_bytes(r.array()?));
            }
            let levels = r.u32()? as usize;
            if levels == 0 || levels > MAX_LEVEL + 1 {
                return Err(Error::format("index", "bad level count"));
            }
            let mut per = Vec::with_capacity(levels);
            for _ in 0..levels {
                let len = r.u32()? as usize;
                if len > r.0.len() / 4 {
                    return Err(Error::format("index", "truncated"));
                }
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    let nb = r.u32()?;
                    if nb as usize >= n {
                        return Err(Error::format("index", "neighbor out of range"));
                    }
                    list.push(nb);
                }
                per.push(list);
            }
            links.push(per);
        }
        if !r.0.is_empty() {
            return Err(Error::format("index", "trailing bytes"));
        }
        if !ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::format("index", "pin ids not strictly ascending"));
        }
        if n > 0 && (entry as usize >= n || links[entry as usize].len() != max_level + 1) {
            return Err(Error::format("index", "bad entry point"));
        }
        let index = AnnIndex {
            config,
            dim,
            ids,
            vectors,
            links,
            entry,
            max_level,
            version,
            traversals: AtomicU64::new(0),
        };
        if index.fingerprint() != version {
            return Err(Error::format("index", "fingerprint mismatch"));
        }
        Ok(index)
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

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::format("index", "truncated"));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}
