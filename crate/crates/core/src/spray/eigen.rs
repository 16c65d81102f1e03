//! Dense symmetric eigensolver: Householder reduction to tridiagonal
//! form followed by implicit QL iterations.

use ndarray::Array2;

use super::laplacian::{build_laplacian, LaplacianKind};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T: Scalar = f32> {
    /// Ascending.
    pub values: Vec<T>,
    /// Column `i` is the unit eigenvector for `values[i]`, signed so its
    /// first non-negligible component is positive.
    pub vectors: Array2<T>,
    /// Set when the matrix was a graph Laplacian.
    pub kind: Option<LaplacianKind>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest `m` eigenvalues.
    pub fn prefix(&self, m: usize) -> &[T] {
        &self.values[..m.min(self.values.len())]
    }
}

fn symmetry_tolerance<T: Scalar>(a: &Array2<T>) -> T {
    let scale = a.iter().fold(T::one(), |m, v| m.max(v.abs()));
    T::epsilon() * lit(100.0) * scale
}

pub fn eigendecompose<T: Scalar>(a: &Array2<T>) -> Result<Spectrum<T>> {
    let (n, c) = a.dim();
    if n != c || n == 0 {
        return Err(Error::InvalidShape {
            shape: vec![n, c],
            reason: "eigendecomposition needs a non-empty square matrix".into(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to decompose".into()));
    }
    let tol = symmetry_tolerance(a);
    for i in 0..n {
        for j in i + 1..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }

    let mut v: Vec<T> = a.iter().copied().collect();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).unwrap());
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let max = (0..n).fold(T::zero(), |m, r| m.max(v[r * n + src].abs()));
        let thresh = max * T::epsilon().sqrt();
        let flip = (0..n)
            .map(|r| v[r * n + src])
            .find(|x| x.abs() > thresh)
            .is_some_and(|x| x < T::zero());
        for r in 0..n {
            let x = v[r * n + src];
            vectors[(r, col)] = if flip { -x } else { x };
        }
    }
    Ok(Spectrum {
        values,
        vectors,
        kind: None,
    })
}

/// Spectrum of the Laplacian of affinity matrix `w`.
pub fn laplacian_spectrum<T: Scalar>(w: &Array2<T>, kind: LaplacianKind) -> Result<Spectrum<T>> {
    let l = build_laplacian(w, kind)?;
    let mut s = eigendecompose(&l)?;
    s.kind = Some(kind);
    Ok(s)
}

/// Householder tridiagonalization. On return `v` holds the orthogonal
/// transform, `d` the diagonal and `e[1..]` the sub-diagonal.
fn tred2<T: Scalar>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) {
    let zero = T::zero();
    let at = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = zero;
                v[at(j, i)] = zero;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = zero;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = zero;
    }
    v[at(n - 1, n - 1)] = T::one();
    e[0] = zero;
}

/// Implicit QL on the tridiagonal form, accumulating rotations into `v`.
fn tql2<T: Scalar>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) -> Result<()> {
    let zero = T::zero();
    let one = T::one();
    let two = one + one;
    let at = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;
    let mut f = zero;
    let mut tst1 = zero;
    let eps = T::epsilon();
    let max_sweeps = 30 * n.max(1);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > max_sweeps {
                    return Err(Error::invalid("eigensolver did not converge"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * hk;
                        v[at(k, i)] = c * v[at(k, i)] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
    Ok(())
}

/// Largest gap among the first `m` eigenvalues: returns the 1-based
/// index `g` maximizing `λ_{g+1} - λ_g` (ties to the smallest `g`) and
/// the gap list.
pub fn eigengap<T: Scalar>(values: &[T], m: usize) -> Result<(usize, Vec<T>)> {
    let m = m.min(values.len());
    if m < 2 {
        return Err(Error::invalid("eigengap needs at least 2 eigenvalues"));
    }
    let prefix = &values[..m];
    let gaps: Vec<T> = prefix.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = prefix.iter().fold(T::one(), |a, v| a.max(v.abs()));
    let tie = T::epsilon() * lit(64.0) * scale;
    let mut best = 0;
    for (i, &g) in gaps.iter().enumerate().skip(1) {
        if g > gaps[best] + tie {
            best = i;
        }
    }
    Ok((best + 1, gaps))
}
