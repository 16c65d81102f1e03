//! Exact t-SNE on a precomputed distance matrix.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 7.0,
            early_exaggeration: 6.0,
            exaggeration_iters: 100,
            iterations: 1000,
            learning_rate: 100.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T: Scalar = f32> {
    /// `N × 2`.
    pub coords: Array2<T>,
    /// KL(P‖Q) at the random initialization.
    pub initial_kl: T,
    pub final_kl: T,
}

const ENTROPY_TOL: f64 = 1e-5;
const SEARCH_STEPS: usize = 200;
const P_FLOOR: f64 = 1e-12;

/// Conditional probabilities `p_{j|i}` with per-row precision found by
/// bisection so each row's perplexity matches the target.
fn conditional_p<T: Scalar>(d2: &Array2<T>, perplexity: f64) -> Array2<T> {
    let n = d2.nrows();
    let target = T::from_f64_lossy(perplexity.ln());
    let tol = T::from_f64_lossy(ENTROPY_TOL);
    let mut p = Array2::zeros((n, n));
    let mut row = vec![T::zero(); n];
    for i in 0..n {
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d2[(i, j)])
            .fold(T::infinity(), |m, v| m.min(v));
        let mut beta = T::one();
        let mut lo = T::zero();
        let mut hi = T::infinity();
        let two = lit::<T>(2.0);
        for _ in 0..SEARCH_STEPS {
            let mut sum = T::zero();
            let mut weighted = T::zero();
            for j in 0..n {
                row[j] = if j == i {
                    T::zero()
                } else {
                    let shifted = d2[(i, j)] - dmin;
                    let w = (-beta * shifted).exp();
                    weighted += shifted * w;
                    w
                };
                sum += row[j];
            }
            // H = ln Σ + β Σ d w / Σ over shifted distances
            let h = sum.ln() + beta * weighted / sum;
            let diff = h - target;
            if diff.abs() < tol {
                break;
            }
            if diff > T::zero() {
                lo = beta;
                beta = if hi.is_infinite() {
                    beta * two
                } else {
                    (beta + hi) / two
                };
            } else {
                hi = beta;
                beta = (beta + lo) / two;
            }
        }
        let sum: T = row.iter().copied().sum();
        for j in 0..n {
            p[(i, j)] = row[j] / sum;
        }
    }
    p
}

fn joint_p<T: Scalar>(d2: &Array2<T>, perplexity: f64) -> Array2<T> {
    let n = d2.nrows();
    let cond = conditional_p(d2, perplexity);
    let denom = T::from_count(2 * n);
    let floor = T::from_f64_lossy(P_FLOOR);
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[(i, j)] = ((cond[(i, j)] + cond[(j, i)]) / denom).max(floor);
            }
        }
    }
    p
}

/// Student-t kernel values `(1 + |y_i - y_j|²)^{-1}` and their
/// off-diagonal sum.
fn kernel<T: Scalar>(y: &Array2<T>) -> (Array2<T>, T) {
    let n = y.nrows();
    let mut num = Array2::zeros((n, n));
    let mut z = T::zero();
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[(i, 0)] - y[(j, 0)];
            let dy = y[(i, 1)] - y[(j, 1)];
            let v = T::one() / (T::one() + dx * dx + dy * dy);
            num[(i, j)] = v;
            num[(j, i)] = v;
            z += v + v;
        }
    }
    (num, z)
}

fn kl<T: Scalar>(p: &Array2<T>, y: &Array2<T>) -> T {
    let (num, z) = kernel(y);
    let floor = T::from_f64_lossy(P_FLOOR);
    let mut total = T::zero();
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j && pij > T::zero() {
            let q = (num[(i, j)] / z).max(floor);
            total += pij * (pij / q).ln();
        }
    }
    total
}

/// Embeds `n` points given their pairwise distances into the plane.
///
/// The gradient omits the constant factor 4 of the KL derivative, so
/// `learning_rate` uses the step scale of the reference t-SNE code.
pub fn tsne_embed<T: Scalar>(distances: &Array2<T>, cfg: &TsneConfig) -> Result<Embedding<T>> {
    let (n, c) = distances.dim();
    if n != c {
        return Err(Error::InvalidShape {
            shape: vec![n, c],
            reason: "t-SNE needs a square distance matrix".into(),
        });
    }
    if n < 4 {
        return Err(Error::invalid(format!(
            "t-SNE needs at least 4 points, got {n}"
        )));
    }
    if !(cfg.perplexity > 0.0) || cfg.perplexity * 3.0 >= n as f64 {
        return Err(Error::invalid(format!(
            "perplexity {} must be positive and below n/3 = {:.3}",
            cfg.perplexity,
            n as f64 / 3.0
        )));
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.early_exaggeration >= 1.0) {
        return Err(Error::invalid(
            "t-SNE learning rate must be > 0 and exaggeration >= 1",
        ));
    }
    if distances.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }

    let d2 = distances.mapv(|v| v * v);
    let p = joint_p(&d2, cfg.perplexity);

    let mut rng = SeedTree::new(cfg.seed).child("tsne").rng();
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((n, 2), |_| T::from_f64_lossy(init.sample(&mut rng)));
    let initial_kl = kl(&p, &y);

    let lr = T::from_f64_lossy(cfg.learning_rate);
    let gain_up = lit::<T>(0.2);
    let gain_down = lit::<T>(0.8);
    let gain_min = lit::<T>(0.01);
    let mut update = Array2::<T>::zeros((n, 2));
    let mut gains = Array2::<T>::from_elem((n, 2), T::one());
    let mut grad = Array2::<T>::zeros((n, 2));
    for it in 0..cfg.iterations {
        let exag = T::from_f64_lossy(if it < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        });
        let momentum = T::from_f64_lossy(if it < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        });
        let (num, z) = kernel(&y);
        grad.fill(T::zero());
        for i in 0..n {
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mult = (exag * p[(i, j)] - num[(i, j)] / z) * num[(i, j)];
                gx += mult * (y[(i, 0)] - y[(j, 0)]);
                gy += mult * (y[(i, 1)] - y[(j, 1)]);
            }
            grad[(i, 0)] = gx;
            grad[(i, 1)] = gy;
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            let same_sign = (*g > T::zero()) == (*u > T::zero());
            *gain = if same_sign {
                *gain * gain_down
            } else {
                *gain + gain_up
            }
            .max(gain_min);
            *u = momentum * *u - lr * *gain * *g;
        }
        y += &update;
        for col in 0..2 {
            let mean = y.column(col).sum() / T::from_count(n);
            y.column_mut(col).mapv_inplace(|v| v - mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("t-SNE iteration {it}")));
        }
    }
    let final_kl = kl(&p, &y);
    Ok(Embedding {
        coords: y,
        initial_kl,
        final_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn two_groups(seed: u64, per: usize) -> Array2<f64> {
        let mut rng = SeedTree::new(seed).rng();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let pts: Vec<(f64, f64, f64)> = (0..2 * per)
            .map(|i| {
                let c = if i < per { 0.0 } else { 20.0 };
                (
                    c + noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                )
            })
            .collect();
        Array2::from_shape_fn((2 * per, 2 * per), |(i, j)| {
            let (a, b) = (pts[i], pts[j]);
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt()
        })
    }

    fn fast() -> TsneConfig {
        TsneConfig {
            perplexity: 5.0,
            iterations: 300,
            ..TsneConfig::default()
        }
    }

    #[test]
    fn rows_hit_target_perplexity() {
        let d = two_groups(1, 15);
        let p = conditional_p(&d.mapv(|v| v * v), 5.0);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
            let h: f64 = r.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
            assert!((h.exp() - 5.0).abs() < 1e-2, "perplexity {}", h.exp());
        }
    }

    #[test]
    fn kl_decreases_and_groups_separate() {
        let d = two_groups(2, 15);
        let e = tsne_embed(&d, &fast()).unwrap();
        assert!(e.final_kl < e.initial_kl);
        let centroid = |r: std::ops::Range<usize>| {
            let k = r.len() as f64;
            r.fold((0.0, 0.0), |(x, y), i| {
                (x + e.coords[(i, 0)] / k, y + e.coords[(i, 1)] / k)
            })
        };
        let (a, b) = (centroid(0..15), centroid(15..30));
        let between = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let spread = (0..15)
            .map(|i| ((e.coords[(i, 0)] - a.0).powi(2) + (e.coords[(i, 1)] - a.1).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(between > spread, "between {between} spread {spread}");
    }

    fn pair_dist(c: &Array2<f64>, i: usize, j: usize) -> f64 {
        ((c[(i, 0)] - c[(j, 0)]).powi(2) + (c[(i, 1)] - c[(j, 1)]).powi(2)).sqrt()
    }

    #[test]
    fn far_tight_groups_separate_by_3x() {
        let d = two_groups(5, 12);
        let cfg = TsneConfig {
            perplexity: 5.0,
            ..TsneConfig::default()
        };
        let e = tsne_embed(&d, &cfg).unwrap();
        let (mut intra, mut inter) = (0.0f64, f64::INFINITY);
        for i in 0..24 {
            for j in i + 1..24 {
                let dd = pair_dist(&e.coords, i, j);
                if (i < 12) == (j < 12) {
                    intra = intra.max(dd);
                } else {
                    inter = inter.min(dd);
                }
            }
        }
        assert!(inter > 3.0 * intra, "inter {inter} intra {intra}");
    }

    #[test]
    fn duplicated_pair_lands_among_closest() {
        let mut rng = SeedTree::new(6).rng();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts: Vec<[f64; 3]> = (0..99)
            .map(|_| {
                [
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                ]
            })
            .collect();
        pts.push(pts[7]);
        let n = pts.len();
        let d = Array2::from_shape_fn((n, n), |(i, j)| {
            (0..3)
                .map(|k| (pts[i][k] - pts[j][k]).powi(2))
                .sum::<f64>()
                .sqrt()
        });
        let e = tsne_embed(&d, &TsneConfig::default()).unwrap();
        let mut all: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| pair_dist(&e.coords, i, j))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cutoff = all[all.len() / 100];
        let dup = pair_dist(&e.coords, 7, n - 1);
        assert!(dup <= cutoff);
    }

    #[test]
    fn deterministic() {
        let d = two_groups(3, 8);
        let cfg = TsneConfig {
            perplexity: 3.0,
            iterations: 50,
            ..TsneConfig::default()
        };
        assert_eq!(tsne_embed(&d, &cfg).unwrap(), tsne_embed(&d, &cfg).unwrap());
    }

    #[test]
    fn rejects_large_perplexity() {
        let d = two_groups(4, 6);
        let cfg = TsneConfig {
            perplexity: 4.0,
            ..TsneConfig::default()
        };
        assert!(tsne_embed(&d, &cfg).is_err());
    }
}
