use ndarray::{s, Array2, ArrayView1};
use rand::Rng as _;

use super::eigen::Spectrum;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T: Scalar = f32> {
    /// Canonical: cluster ids appear in order of first occurrence.
    pub labels: Vec<usize>,
    pub centroids: Array2<T>,
    pub inertia: T,
}

fn sq_dist<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Closest centroid; `current` wins ties, then the lowest index.
fn nearest<T: Scalar>(x: ArrayView1<T>, centroids: &Array2<T>, current: Option<usize>) -> usize {
    let start = current.unwrap_or(0);
    let mut best = (start, sq_dist(x, centroids.row(start)));
    for c in 0..centroids.nrows() {
        let d = sq_dist(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Moves the worst-fitting point of a cluster with at least two members
/// into each empty cluster.
fn refill<T: Scalar>(data: &Array2<T>, labels: &mut [usize], centroids: &mut Array2<T>) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] >= 2)
            .map(|i| (i, sq_dist(data.row(i), centroids.row(labels[i]))))
            .fold(None::<(usize, T)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else { return };
        labels[i] = empty;
        centroids.row_mut(empty).assign(&data.row(i));
    }
}

fn update_centroids<T: Scalar>(data: &Array2<T>, labels: &[usize], centroids: &mut Array2<T>) {
    let k = centroids.nrows();
    let mut sums = Array2::<T>::zeros((k, data.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let mut row = sums.row_mut(l);
        row += &data.row(i);
    }
    for (c, &count) in counts.iter().enumerate().take(k) {
        if count > 0 {
            let inv = T::one() / T::from_count(count);
            centroids.row_mut(c).assign(&sums.row(c).mapv(|v| v * inv));
        }
    }
}

fn plus_plus<T: Scalar>(data: &Array2<T>, k: usize, rng: &mut crate::rng::Rng) -> Array2<T> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), data.row(first)).to_f64_lossless())
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&w| {
                    acc += w;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(pick)).to_f64_lossless());
        }
    }
    centroids
}

fn lloyd<T: Scalar>(data: &Array2<T>, mut centroids: Array2<T>, max_iter: usize) -> KMeans<T> {
    let n = data.nrows();
    let mut labels: Vec<usize> = (0..n)
        .map(|i| nearest(data.row(i), &centroids, None))
        .collect();
    for _ in 0..max_iter {
        refill(data, &mut labels, &mut centroids);
        update_centroids(data, &labels, &mut centroids);
        let next: Vec<usize> = (0..n)
            .map(|i| nearest(data.row(i), &centroids, Some(labels[i])))
            .collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    refill(data, &mut labels, &mut centroids);
    update_centroids(data, &labels, &mut centroids);
    let inertia = (0..n)
        .map(|i| sq_dist(data.row(i), centroids.row(labels[i])))
        .sum();
    KMeans {
        labels,
        centroids,
        inertia,
    }
}

/// Relabels clusters in order of first appearance.
pub fn canonicalize<T: Scalar>(km: KMeans<T>) -> KMeans<T> {
    let k = km.centroids.nrows();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &km.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = next;
        next += 1;
    }
    let mut centroids = km.centroids.clone();
    for (old, &new) in map.iter().enumerate() {
        centroids.row_mut(new).assign(&km.centroids.row(old));
    }
    KMeans {
        labels: km.labels.iter().map(|&l| map[l]).collect(),
        centroids,
        inertia: km.inertia,
    }
}

/// k-means++ seeding and Lloyd iterations, best of `cfg.restarts` by
/// inertia.
pub fn kmeans<T: Scalar>(data: &Array2<T>, k: usize, cfg: &KMeansConfig) -> Result<KMeans<T>> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let seeds = SeedTree::new(cfg.seed).child("kmeans");
    let mut best: Option<KMeans<T>> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = seeds.index(r as u64).rng();
        let init = plus_plus(data, k, &mut rng);
        let run = lloyd(data, init, cfg.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(canonicalize(best.unwrap()))
}

/// Clusters the rows of the first `k` eigenvectors. With
/// `normalize_rows` each row is scaled to unit length first.
pub fn spectral_cluster<T: Scalar>(
    spectrum: &Spectrum<T>,
    k: usize,
    normalize_rows: bool,
    cfg: &KMeansConfig,
) -> Result<Vec<usize>> {
    let n = spectrum.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cluster count {k} must be in 1..={n}"
        )));
    }
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let mut u = spectrum.vectors.slice(s![.., ..k]).to_owned();
    if normalize_rows {
        for mut row in u.rows_mut() {
            let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if norm > T::zero() {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }
    Ok(kmeans(&u, k, cfg)?.labels)
}
