//! Seeded k-means over hidden-neuron activation profiles.
//!
//! Each hidden neuron becomes one point whose coordinates are its activations
//! across the evaluation batch (a row of `A_l^T`). Clustering is Lloyd's
//! algorithm with k-means++ seeding on a [`SplitMix64`] stream; everything is
//! deterministic given `(points, k, seed)`.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Cluster assignment for one hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerClustering {
    /// Hidden-layer index in `[1, d]`.
    pub layer: usize,
    /// Number of clusters.
    pub k: usize,
    /// Cluster id in `[0, k)` for every neuron of the layer.
    pub labels: Vec<usize>,
}

impl LayerClustering {
    /// Member neuron indices per cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut used = vec![false; self.k];
        for &c in &self.labels {
            if c >= self.k {
                return Err(Error::Invalid(format!(
                    "cluster id {c} out of range for k = {}",
                    self.k
                )));
            }
            used[c] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::Invalid("empty cluster in layer clustering".into()));
        }
        Ok(())
    }
}

/// Result of one k-means run.
#[derive(Debug, Clone)]
pub struct KmeansOutput {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
}

fn dist2(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => {
            let mut s = 0.0;
            for i in 0..x.len() {
                let d = x[i] - y[i];
                s += d * d;
            }
            s
        }
        _ => a
            .iter()
            .zip(b.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum(),
    }
}

/// k-means++ seeding: first centroid uniform, the rest sampled proportional
/// to squared distance from the nearest chosen centroid. If every remaining
/// distance is zero (fewer distinct points than k) the lowest-index unchosen
/// point is taken.
fn seed_centroids(points: &Array2<f64>, k: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let m = points.nrows();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut is_chosen = vec![false; m];
    let first = rng.next_index(m);
    chosen.push(first);
    is_chosen[first] = true;

    let mut d2: Vec<f64> = (0..m)
        .map(|i| dist2(&points.row(i), &points.row(first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= r {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            (0..m).find(|&i| !is_chosen[i]).expect("k <= m")
        };
        chosen.push(next);
        is_chosen[next] = true;
        for i in 0..m {
            let d = dist2(&points.row(i), &points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

struct LloydRun {
    labels: Vec<usize>,
    centroids: Array2<f64>,
    inertia: f64,
    iterations: usize,
    /// Inertia after each assignment step, for the monotonicity check.
    #[cfg_attr(not(test), allow(dead_code))]
    trace: Vec<f64>,
}

fn assign(points: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> f64 {
    let k = centroids.nrows();
    let mut inertia = 0.0;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = dist2(&p, &centroids.row(0));
        for c in 1..k {
            let d = dist2(&p, &centroids.row(c));
            // Strict comparison keeps the lowest centroid index on ties.
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        inertia += best_d;
    }
    inertia
}

/// Moves the point farthest from its own centroid into each empty cluster,
/// never emptying a donor cluster.
fn repair_empty(points: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &c in labels.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut donor: Option<(usize, f64)> = None;
        for (i, p) in points.rows().into_iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = dist2(&p, &centroids.row(labels[i]));
            let better = match donor {
                None => true,
                Some((_, best)) => d > best,
            };
            if better {
                donor = Some((i, d));
            }
        }
        if let Some((i, _)) = donor {
            counts[labels[i]] -= 1;
            labels[i] = empty;
            counts[empty] = 1;
        }
    }
}

fn update_centroids(points: &Array2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let dim = points.ncols();
    let mut sums = Array2::<f64>::zeros((k, dim));
    let mut counts = vec![0usize; k];
    for (i, p) in points.rows().into_iter().enumerate() {
        let c = labels[i];
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        for (s, v) in row.iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).mapv_inplace(|v| v * inv);
        }
    }
    sums
}

const MAX_ITERATIONS: usize = 300;

fn lloyd(points: &Array2<f64>, initial: &[usize]) -> LloydRun {
    let m = points.nrows();
    let k = initial.len();
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &i) in initial.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }

    let mut labels = vec![0usize; m];
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let mut trace = Vec::new();
    loop {
        iterations += 1;
        let inertia = assign(points, &centroids, &mut labels);
        trace.push(inertia);
        repair_empty(points, &centroids, &mut labels, k);
        if prev.as_deref() == Some(labels.as_slice()) || iterations >= MAX_ITERATIONS {
            break;
        }
        centroids = update_centroids(points, &labels, k);
        prev = Some(labels.clone());
    }
    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| dist2(&points.row(i), &centroids.row(c)))
        .sum();
    LloydRun {
        labels,
        centroids,
        inertia,
        iterations,
        trace,
    }
}

/// Seeded k-means over the rows of `points`.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<KmeansOutput> {
    let m = points.nrows();
    if k < 1 || k > m {
        return Err(Error::Invalid(format!(
            "k must be in [1, {m}], got {k}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("points contain non-finite values".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let initial = seed_centroids(points, k, &mut rng);
    let run = lloyd(points, &initial);
    Ok(KmeansOutput {
        labels: run.labels,
        centroids: run.centroids,
        inertia: run.inertia,
        iterations: run.iterations,
    })
}

/// Clusters one hidden layer from its activation matrix (`n_samples x n_neurons`).
///
/// The number of clusters is `max(1, round(gamma * n_neurons))`. Cluster ids
/// are renumbered in order of first appearance, so id 0 always contains
/// neuron 0.
pub fn cluster_layer(
    layer: usize,
    activations: &Array2<f64>,
    gamma: f64,
    seed: u64,
) -> Result<LayerClustering> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Invalid(format!("gamma must be in (0, 1], got {gamma}")));
    }
    let v = activations.ncols();
    if v == 0 {
        return Err(Error::Invalid("layer has no neurons".into()));
    }
    let k = ((gamma * v as f64).round() as usize).max(1);
    let points = activations.t().to_owned();
    let result = kmeans(&points, k, seed)?;
    let labels = canonical_relabel(&result.labels, k);
    let clustering = LayerClustering { layer, k, labels };
    clustering.validate()?;
    Ok(clustering)
}

/// Renumbers cluster ids in order of first appearance.
fn canonical_relabel(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0usize;
    let mut out = Vec::with_capacity(labels.len());
    for &c in labels {
        if map[c] == usize::MAX {
            map[c] = next;
            next += 1;
        }
        out.push(map[c]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gaussian_blobs() -> Array2<f64> {
        // 40 points around three well-separated 2-D centers.
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        let mut rng = SplitMix64::new(99);
        let mut pts = Vec::new();
        for i in 0..40 {
            let (cx, cy) = centers[i % 3];
            pts.push(cx + 0.5 * rng.next_gaussian());
            pts.push(cy + 0.5 * rng.next_gaussian());
        }
        Array2::from_shape_vec((40, 2), pts).unwrap()
    }

    #[test]
    fn separates_well_separated_pairs() {
        let pts = array![[0.0], [0.1], [10.0], [10.1]];
        let out = kmeans(&pts, 2, 0).unwrap();
        assert_eq!(out.labels[0], out.labels[1]);
        assert_eq!(out.labels[2], out.labels[3]);
        assert_ne!(out.labels[0], out.labels[2]);
    }

    #[test]
    fn k_equals_m_gives_singletons() {
        let pts = array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]];
        let out = kmeans(&pts, 3, 5).unwrap();
        let mut sorted = out.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(out.inertia, 0.0);
    }

    #[test]
    fn k_bounds_are_enforced() {
        let pts = array![[0.0], [1.0]];
        assert!(kmeans(&pts, 0, 0).is_err());
        assert!(kmeans(&pts, 3, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = gaussian_blobs();
        let a = kmeans(&pts, 3, 12).unwrap();
        let b = kmeans(&pts, 3, 12).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia, b.inertia);
    }

    // Oracle: best inertia over 50 fresh seeds.
    #[test]
    fn inertia_close_to_multi_restart_oracle() {
        let pts = gaussian_blobs();
        let single = kmeans(&pts, 3, 0).unwrap();
        let best = (0..50)
            .map(|s| kmeans(&pts, 3, s).unwrap().inertia)
            .fold(f64::INFINITY, f64::min);
        assert!(
            single.inertia <= best * 1.01,
            "inertia {} vs oracle {best}",
            single.inertia
        );
    }

    #[test]
    fn inertia_trace_is_non_increasing() {
        let pts = gaussian_blobs();
        let mut rng = SplitMix64::new(4);
        let initial = seed_centroids(&pts, 3, &mut rng);
        let run = lloyd(&pts, &initial);
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace increased: {:?}", run.trace);
        }
    }

    #[test]
    fn identical_points_share_a_cluster() {
        // 4 neurons, two with identical activation vectors; gamma 0.5 -> k = 2.
        let acts = array![
            [1.0, 1.0, 5.0, -2.0],
            [0.5, 0.5, 4.0, -1.0],
            [2.0, 2.0, 6.0, -3.0]
        ];
        let c = cluster_layer(1, &acts, 0.5, 3).unwrap();
        assert_eq!(c.k, 2);
        assert_eq!(c.labels[0], c.labels[1]);
    }

    #[test]
    fn cluster_count_formula() {
        let mut rng = SplitMix64::new(8);
        let acts = Array2::from_shape_fn((5, 100), |_| rng.next_gaussian());
        let c = cluster_layer(2, &acts, 0.2, 0).unwrap();
        assert_eq!(c.k, 20);
        assert_eq!(c.labels.len(), 100);
        c.validate().unwrap();
    }

    #[test]
    fn gamma_one_is_identity_partition() {
        let mut rng = SplitMix64::new(8);
        let acts = Array2::from_shape_fn((6, 9), |_| rng.next_gaussian());
        let c = cluster_layer(1, &acts, 1.0, 0).unwrap();
        assert_eq!(c.k, 9);
        assert_eq!(c.labels, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn all_identical_points_still_fill_k_clusters() {
        let acts = Array2::<f64>::zeros((4, 6));
        let c = cluster_layer(1, &acts, 0.5, 0).unwrap();
        assert_eq!(c.k, 3);
        c.validate().unwrap();
    }
}
