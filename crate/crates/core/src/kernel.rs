//! Distance-kernel weighting for local (anchor-centered) aggregation and
//! metrics: `pi(x') = exp(-D(x', x)^2 / sigma^2)`, normalized to sum to one
//! over the neighborhood.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

fn euclidean2(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

/// Normalized kernel weights of every row of `delta` relative to the anchor.
pub fn anchor_weights(delta: &Array2<f64>, x: &Array1<f64>, sigma: f64) -> Result<Array1<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if delta.nrows() == 0 {
        return Err(Error::Invalid("empty neighborhood".into()));
    }
    if delta.ncols() != x.len() {
        return Err(Error::Dimension(format!(
            "anchor has {} features, neighborhood rows have {}",
            x.len(),
            delta.ncols()
        )));
    }
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut weights = Array1::zeros(delta.nrows());
    for (i, row) in delta.rows().into_iter().enumerate() {
        weights[i] = (-euclidean2(&row, &x.view()) * inv_s2).exp();
    }
    let total: f64 = weights.sum();
    if !(total > 0.0) {
        return Err(Error::Invalid(
            "kernel weights underflowed to zero; increase sigma".into(),
        ));
    }
    weights.mapv_inplace(|w| w / total);
    Ok(weights)
}

/// Median pairwise Euclidean distance between rows, the default kernel width
/// when none is given. `None` for fewer than two rows.
pub fn median_pairwise_distance(points: &Array2<f64>) -> Option<f64> {
    let n = points.nrows();
    if n < 2 {
        return None;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(euclidean2(&points.row(i), &points.row(j)).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(dists[dists.len() / 2])
}
