//! Baseline clusterers: Lloyd's k-means and complete-linkage agglomeration.
//! Distances are squared Euclidean, the same scale as the Ward threshold.

use crate::distance::sq_dist;
use crate::error::Result;
use crate::rng::Rng;
use crate::ward::ClusterSet;

pub const KMEANS_MAX_ITERATIONS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub clusters: ClusterSet,
    /// One centroid per cluster in `clusters`, same order.
    pub centroids: Vec<Vec<f32>>,
    pub iterations: usize,
}

fn nearest(point: &[f32], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.iter().enumerate() {
        let d: f64 = point.iter().zip(centroid).map(|(&x, &y)| (x as f64 - y).powi(2)).sum();
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Lloyd iterations from `k` seeded distinct points (fewer if the input has
/// fewer distinct points). `k` larger than the point count is reduced.
/// Stops after [`KMEANS_MAX_ITERATIONS`] or once no centroid moves more than
/// [`KMEANS_TOLERANCE`]. A centroid that loses all members stays in place.
pub fn kmeans_cluster<P: AsRef<[f32]>>(points: &[P], k: usize, rng: &mut Rng) -> Result<KMeans> {
    let m = points.len();
    if m == 0 || k == 0 {
        return Ok(KMeans {
            clusters: ClusterSet::from_labels(&[]),
            centroids: Vec::new(),
            iterations: 0,
        });
    }
    let dim = points[0].as_ref().len();
    for p in points {
        if p.as_ref().len() != dim {
            return Err(crate::Error::DimensionMismatch {
                expected: dim,
                actual: p.as_ref().len(),
            });
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    rng.shuffle(&mut order);
    let mut seeds: Vec<usize> = Vec::with_capacity(k.min(m));
    for &i in &order {
        if seeds.len() == k {
            break;
        }
        if seeds.iter().all(|&s| points[s].as_ref() != points[i].as_ref()) {
            seeds.push(i);
        }
    }
    let mut centroids: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&s| points[s].as_ref().iter().map(|&x| x as f64).collect())
        .collect();

    let mut labels = vec![0usize; m];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p.as_ref(), &centroids);
        }
        let mut sums = vec![vec![0f64; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &x) in sums[labels[i]].iter_mut().zip(p.as_ref()) {
                *s += x as f64;
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..centroids.len() {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            let shift: f64 = next.iter().zip(&centroids[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            moved = moved.max(shift);
            centroids[c] = next;
        }
        if moved < KMEANS_TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest(p.as_ref(), &centroids);
    }
    let clusters = ClusterSet::from_labels(&labels);
    // Canonical cluster order is by first member; map back to centroids.
    let out_centroids = clusters
        .clusters()
        .iter()
        .map(|c| centroids[labels[c[0]]].iter().map(|&x| x as f32).collect())
        .collect();
    Ok(KMeans {
        clusters,
        centroids: out_centroids,
        iterations,
    })
}

/// Agglomerates under maximum pairwise distance while the closest pair of
/// clusters is within `alpha`. Ties go to the lexicographically smallest pair
/// of cluster representatives.
pub fn complete_linkage_cluster<P: AsRef<[f32]>>(points: &[P], alpha: f64) -> ClusterSet {
    let m = points.len();
    let mut d = vec![0f64; m * m];
    for i in 0..m {
        for j in 0..i {
            let v = sq_dist(points[i].as_ref(), points[j].as_ref());
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    let mut active = vec![true; m];
    let mut label: Vec<usize> = (0..m).collect();
    // Row minima over higher-indexed active clusters.
    let row_min = |i: usize, d: &[f64], active: &[bool]| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in i + 1..m {
            if active[j] && d[i * m + j] < best.0 {
                best = (d[i * m + j], j);
            }
        }
        best
    };
    let mut mins: Vec<(f64, usize)> = (0..m).map(|i| row_min(i, &d, &active)).collect();
    loop {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..m {
            if active[i] && mins[i].0 < best.0 {
                best = (mins[i].0, i, mins[i].1);
            }
        }
        let (dist, i, j) = best;
        if i == usize::MAX || dist > alpha {
            break;
        }
        // Merge j into i; complete linkage keeps the larger distance.
        active[j] = false;
        for l in label.iter_mut() {
            if *l == j {
                *l = i;
            }
        }
        for k in 0..m {
            if active[k] && k != i {
                let v = d[i * m + k].max(d[j * m + k]);
                d[i * m + k] = v;
                d[k * m + i] = v;
            }
        }
        for r in 0..m {
            if !active[r] {
                continue;
            }
            // Distances only grew; rows pointing at i or j, plus row i itself,
            // may have a stale minimum.
            if r == i || mins[r].1 == i || mins[r].1 == j {
                mins[r] = row_min(r, &d, &active);
            } else if r < i && d[r * m + i] < mins[r].0 {
                mins[r] = (d[r * m + i], i);
            }
        }
    }
    ClusterSet::from_labels(&label)
}
