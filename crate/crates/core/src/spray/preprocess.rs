//! Downsizing and normalization of relevance maps into one feature row
//! per sample.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row normalization applied after pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    /// Divide by the sum of absolute values; sign is kept.
    #[default]
    L1,
    /// Divide by the largest absolute value.
    MaxAbs,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::L1 => "l1",
            Normalization::MaxAbs => "max-abs",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "l1" => Ok(Normalization::L1),
            "max-abs" | "maxabs" => Ok(Normalization::MaxAbs),
            _ => Err(Error::invalid(format!("unknown normalization `{s}`"))),
        }
    }
}

/// What to do when source maps differ in shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapePolicy {
    /// Reject mixed shapes.
    #[default]
    RequireUniform,
    /// Sum-pool every map to the grid on its own.
    PoolEach,
}

/// Preprocessed relevance vectors, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMatrix<T: Scalar = f32> {
    pub rows: Array2<T>,
    pub ids: Vec<String>,
    pub grid: (usize, usize),
}

impl<T: Scalar> HeatmapMatrix<T> {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Block boundaries splitting `n` into `parts` contiguous near-equal
/// blocks; trailing pixels are absorbed by the later blocks.
fn edges(n: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|i| i * n / parts).collect()
}

/// Sums an `H × W` map over a `gh × gw` grid of contiguous blocks.
/// Total mass is preserved.
pub fn downsize_sum_pool<T: Scalar>(map: &Tensor<T>, grid: (usize, usize)) -> Result<Vec<T>> {
    let [h, w] = map.shape() else {
        return Err(Error::InvalidShape {
            shape: map.shape().to_vec(),
            reason: "sum pooling needs an H×W map".into(),
        });
    };
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || gh > *h || gw > *w {
        return Err(Error::invalid(format!(
            "grid {gh}×{gw} does not fit a {h}×{w} map"
        )));
    }
    let ys = edges(*h, gh);
    let xs = edges(*w, gw);
    let data = map.data();
    let mut out = vec![T::zero(); gh * gw];
    for gy in 0..gh {
        for y in ys[gy]..ys[gy + 1] {
            let row = &data[y * w..(y + 1) * w];
            for gx in 0..gw {
                out[gy * gw + gx] += row[xs[gx]..xs[gx + 1]].iter().copied().sum();
            }
        }
    }
    Ok(out)
}

pub fn normalize_row<T: Scalar>(row: &mut [T], mode: Normalization) {
    let denom = match mode {
        Normalization::None => return,
        Normalization::L1 => row.iter().map(|v| v.abs()).sum(),
        Normalization::MaxAbs => row.iter().fold(T::zero(), |m, v| m.max(v.abs())),
    };
    if denom > T::zero() {
        row.iter_mut().for_each(|v| *v /= denom);
    }
}

/// Pools every `H × W` map onto `grid` and normalizes the rows.
pub fn preprocess_dataset<T: Scalar>(
    maps: &[Tensor<T>],
    ids: Option<&[String]>,
    grid: (usize, usize),
    normalization: Normalization,
    policy: ShapePolicy,
) -> Result<HeatmapMatrix<T>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no relevance maps to preprocess"))?;
    if policy == ShapePolicy::RequireUniform {
        if let Some(m) = maps.iter().find(|m| m.shape() != first.shape()) {
            return Err(Error::ShapeMismatch {
                expected: first.shape().to_vec(),
                actual: m.shape().to_vec(),
            });
        }
    }
    if let Some(ids) = ids {
        if ids.len() != maps.len() {
            return Err(Error::invalid(format!(
                "{} ids for {} maps",
                ids.len(),
                maps.len()
            )));
        }
    }
    let d = grid.0 * grid.1;
    let mut rows = Array2::zeros((maps.len(), d));
    for (i, m) in maps.iter().enumerate() {
        let mut row = downsize_sum_pool(m, grid)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("relevance map {i}")));
        }
        normalize_row(&mut row, normalization);
        rows.row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(dst, v)| *dst = v);
    }
    let ids = match ids {
        Some(ids) => ids.to_vec(),
        None => (0..maps.len()).map(|i| i.to_string()).collect(),
    };
    Ok(HeatmapMatrix { rows, ids, grid })
}
