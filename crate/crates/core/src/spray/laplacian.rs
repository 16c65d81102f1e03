use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianKind {
    /// `L = D - W`
    Unnormalized,
    /// `D^{-1/2} L D^{-1/2}`
    #[default]
    Symmetric,
}

impl fmt::Display for LaplacianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LaplacianKind::Unnormalized => "unnormalized",
            LaplacianKind::Symmetric => "symmetric",
        })
    }
}

impl FromStr for LaplacianKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unnormalized" | "l" => Ok(LaplacianKind::Unnormalized),
            "symmetric" | "sym" => Ok(LaplacianKind::Symmetric),
            _ => Err(Error::invalid(format!("unknown laplacian `{s}`"))),
        }
    }
}

fn check_square<T: Scalar>(w: &Array2<T>) -> Result<usize> {
    let (r, c) = w.dim();
    if r != c || r == 0 {
        return Err(Error::InvalidShape {
            shape: vec![r, c],
            reason: "affinity must be a non-empty square matrix".into(),
        });
    }
    Ok(r)
}

/// Row sums of `w`.
pub fn degrees<T: Scalar>(w: &Array2<T>) -> Vec<T> {
    w.rows()
        .into_iter()
        .map(|r| r.iter().copied().sum())
        .collect()
}

/// `L = D - W`; returns the degrees alongside.
pub fn laplacian<T: Scalar>(w: &Array2<T>) -> Result<(Vec<T>, Array2<T>)> {
    check_square(w)?;
    let d = degrees(w);
    let mut l = w.mapv(|v| -v);
    for (i, &di) in d.iter().enumerate() {
        l[(i, i)] = di - w[(i, i)];
    }
    Ok((d, l))
}

/// `I - D^{-1/2} W D^{-1/2}` with `D^{-1/2}` set to 0 on isolated
/// vertices.
pub fn normalized_laplacian<T: Scalar>(w: &Array2<T>) -> Result<Array2<T>> {
    let (d, l) = laplacian(w)?;
    let inv: Vec<T> = d
        .iter()
        .map(|&v| {
            if v > T::zero() {
                T::one() / v.sqrt()
            } else {
                T::zero()
            }
        })
        .collect();
    let mut out = l;
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = inv[i] * *v * inv[j];
    }
    Ok(out)
}

pub fn build_laplacian<T: Scalar>(w: &Array2<T>, kind: LaplacianKind) -> Result<Array2<T>> {
    match kind {
        LaplacianKind::Unnormalized => laplacian(w).map(|(_, l)| l),
        LaplacianKind::Symmetric => normalized_laplacian(w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn path_graph() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0f64]];
        let (d, l) = laplacian(&w).unwrap();
        assert_eq!(d, vec![1.0, 2.0, 1.0]);
        assert_eq!(
            l,
            array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
        );
        for r in l.rows() {
            assert_eq!(r.sum(), 0.0);
        }
    }

    #[test]
    fn symmetric_has_unit_diagonal() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0f64]];
        let l = normalized_laplacian(&w).unwrap();
        for i in 0..3 {
            assert!((l[(i, i)] - 1.0).abs() < 1e-12);
        }
        assert!((l[(0, 1)] + 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn isolated_vertex_is_zero_row() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0f64]];
        let l = normalized_laplacian(&w).unwrap();
        assert!(l.row(2).iter().all(|v| *v == 0.0));
        assert!(l.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_non_square() {
        assert!(laplacian(&Array2::<f64>::zeros((2, 3))).is_err());
    }
}
