use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::HeatmapMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stabilizer in the affinity-to-distance transform.
pub const DISTANCE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    /// `w_ij = 1` for kNN pairs.
    #[default]
    Binary,
    /// `w_ij = ||s_i - s_j||` for kNN pairs.
    Distance,
}

impl fmt::Display for AffinityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AffinityMode::Binary => "binary",
            AffinityMode::Distance => "distance",
        })
    }
}

impl FromStr for AffinityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(AffinityMode::Binary),
            "distance" => Ok(AffinityMode::Distance),
            _ => Err(Error::invalid(format!("unknown affinity mode `{s}`"))),
        }
    }
}

/// Symmetric kNN similarity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph<T: Scalar = f32> {
    pub weights: Array2<T>,
    pub k: usize,
    pub mode: AffinityMode,
}

impl<T: Scalar> AffinityGraph<T> {
    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }
}

/// `ceil(ln n)`, at least 1.
pub fn default_k(n: usize) -> usize {
    ((n as f64).ln().ceil() as usize).max(1)
}

/// Pairwise squared Euclidean distances between rows.
pub fn squared_distances<T: Scalar>(rows: &Array2<T>) -> Array2<T> {
    let n = rows.nrows();
    let flat: Vec<T> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ri = rows.row(i);
            (0..n)
                .map(move |j| {
                    ri.iter()
                        .zip(rows.row(j))
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum::<T>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Array2::from_shape_vec((n, n), flat).expect("n×n")
}

/// Directed kNN relation symmetrized with `w_ij = max(w_ij, w_ji)`.
/// Ties at equal distance go to the lower index.
pub fn knn_affinity<T: Scalar>(
    hm: &HeatmapMatrix<T>,
    k: usize,
    mode: AffinityMode,
) -> Result<AffinityGraph<T>> {
    let n = hm.len();
    if n < 2 {
        return Err(Error::invalid("affinity graph needs at least 2 samples"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must be in 1..{n}")));
    }
    let dist = squared_distances(&hm.rows);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            // stable sort keeps index order among equal distances
            order.sort_by(|&a, &b| dist[(i, a)].partial_cmp(&dist[(i, b)]).unwrap());
            order.truncate(k);
            order
        })
        .collect();
    let mut weights = Array2::zeros((n, n));
    for (i, nbrs) in neighbors.iter().enumerate() {
        for &j in nbrs {
            let w = match mode {
                AffinityMode::Binary => T::one(),
                AffinityMode::Distance => dist[(i, j)].sqrt(),
            };
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    Ok(AffinityGraph { weights, k, mode })
}

/// `1 / (w + eps)` elementwise with a zero diagonal.
pub fn affinity_to_distance<T: Scalar>(weights: &Array2<T>, eps: T) -> Result<Array2<T>> {
    if !(eps > T::zero()) {
        return Err(Error::invalid("distance epsilon must be > 0"));
    }
    let mut d = weights.mapv(|w| T::one() / (w + eps));
    for i in 0..d.nrows().min(d.ncols()) {
        d[(i, i)] = T::zero();
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> HeatmapMatrix<f64> {
        let n = rows.len();
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        HeatmapMatrix {
            rows: Array2::from_shape_vec((n, d), flat).unwrap(),
            ids: (0..n).map(|i| i.to_string()).collect(),
            grid: (1, d),
        }
    }

    #[test]
    fn collinear_points_k1() {
        let g = knn_affinity(&matrix(&[&[0.0], &[1.0], &[10.0]]), 1, AffinityMode::Binary).unwrap();
        // 0->1, 1->0, 2->1 (distance 9 < 10): edges {0-1, 1-2}
        let expected = ndarray::array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        assert_eq!(g.weights, expected);
    }

    #[test]
    fn identical_rows_break_ties_by_index() {
        let g = knn_affinity(
            &matrix(&[&[1.0], &[1.0], &[1.0], &[1.0], &[1.0]]),
            2,
            AffinityMode::Binary,
        )
        .unwrap();
        assert_eq!(g.weights, g.weights.t());
        for i in 0..5 {
            assert_eq!(g.weights[(i, i)], 0.0);
        }
        // node 4 picks 0 and 1
        assert_eq!(g.weights[(4, 0)], 1.0);
        assert_eq!(g.weights[(4, 1)], 1.0);
        assert_eq!(g.weights[(4, 2)], 0.0);
    }

    #[test]
    fn k_n_minus_one_is_complete() {
        let g = knn_affinity(
            &matrix(&[&[0.0], &[3.0], &[7.0], &[8.0]]),
            3,
            AffinityMode::Binary,
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.weights[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let m = matrix(&[&[0.0], &[1.0]]);
        assert!(knn_affinity(&m, 0, AffinityMode::Binary).is_err());
        assert!(knn_affinity(&m, 2, AffinityMode::Binary).is_err());
    }

    #[test]
    fn distance_mode_stores_euclidean_lengths() {
        let g = knn_affinity(
            &matrix(&[&[0.0, 0.0], &[3.0, 4.0], &[30.0, 40.0]]),
            1,
            AffinityMode::Distance,
        )
        .unwrap();
        assert_eq!(g.weights[(0, 1)], 5.0);
        assert_eq!(g.weights[(1, 2)], 45.0);
    }

    #[test]
    fn default_k_is_ceil_ln() {
        assert_eq!(default_k(100), 5);
        assert_eq!(default_k(400), 6);
        assert_eq!(default_k(2), 1);
    }

    #[test]
    fn reciprocal_distances() {
        let w = ndarray::array![[0.0, 1.0], [1.0, 0.0f64]];
        let d = affinity_to_distance(&w, 1e-6).unwrap();
        assert!((d[(0, 1)] - 1.0).abs() < 1e-5);
        assert_eq!(d[(0, 0)], 0.0);
        let z = affinity_to_distance(&ndarray::array![[0.0, 0.0], [0.0, 0.0f64]], 1e-6).unwrap();
        assert!((z[(0, 1)] - 1e6).abs() < 1e-3);
        assert!(affinity_to_distance(&w, 0.0).is_err());
    }
}
