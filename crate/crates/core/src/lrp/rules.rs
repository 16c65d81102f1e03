//! Relevance redistribution rules for a single neuron.
//!
//! Each function splits the relevance `R_j` of one upper-layer neuron into
//! messages `R_{i<-j}` for its inputs, with `z_ij = x_i * w_ij`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::netcore::Network;
use crate::scalar::{lit, Scalar};

/// Stabilizer used when none is configured.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// How far `alpha + beta` may stray from 1.
const ALPHA_BETA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule<T: Scalar = f32> {
    /// Excitatory/inhibitory split with `alpha + beta == 1`.
    AlphaBeta { alpha: T, beta: T },
    /// Proportional split with stabilized denominator `t + eps * sign(t)`.
    Epsilon { epsilon: T },
    /// Split by squared weights, independent of the input.
    WSquare,
    /// Uniform split over the receptive field.
    Flat,
}

impl<T: Scalar> Rule<T> {
    pub fn alpha_beta(alpha: T, beta: T) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::RuleConfig("alpha and beta must be finite".into()));
        }
        if (alpha + beta - T::one()).abs().to_f64_lossless() > ALPHA_BETA_TOL {
            return Err(Error::RuleConfig(format!(
                "alpha + beta must equal 1 (got alpha={alpha}, beta={beta})"
            )));
        }
        Ok(Rule::AlphaBeta { alpha, beta })
    }

    pub fn epsilon(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::RuleConfig(format!(
                "epsilon must be > 0 (got {epsilon})"
            )));
        }
        Ok(Rule::Epsilon { epsilon })
    }

    /// `alpha = 1, beta = 0`: positive contributions only.
    pub fn alpha1_beta0() -> Self {
        Rule::AlphaBeta {
            alpha: T::one(),
            beta: T::zero(),
        }
    }

    /// `alpha = 2, beta = -1`.
    pub fn alpha2_beta1() -> Self {
        Rule::AlphaBeta {
            alpha: lit(2.0),
            beta: lit(-1.0),
        }
    }

    pub fn default_epsilon() -> Self {
        Rule::Epsilon {
            epsilon: lit(DEFAULT_EPSILON),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Rule::AlphaBeta { alpha, beta } => Self::alpha_beta(alpha, beta).map(|_| ()),
            Rule::Epsilon { epsilon } => Self::epsilon(epsilon).map(|_| ()),
            Rule::WSquare | Rule::Flat => Ok(()),
        }
    }

    /// Messages for one neuron. `bias` acts as an extra input whose share
    /// is dropped.
    pub(crate) fn messages_into(
        &self,
        inputs: &[T],
        weights: &[T],
        bias: T,
        relevance: T,
        out: &mut Vec<T>,
    ) {
        out.clear();
        out.resize(weights.len(), T::zero());
        if relevance.is_zero() {
            return;
        }
        match *self {
            Rule::AlphaBeta { alpha, beta } => {
                alpha_beta_into(inputs, weights, bias, relevance, alpha, beta, out)
            }
            Rule::Epsilon { epsilon } => {
                epsilon_into(inputs, weights, bias, relevance, epsilon, out)
            }
            Rule::WSquare => w_square_into(weights, relevance, out),
            Rule::Flat => flat_into(relevance, out),
        }
    }
}

impl<T: Scalar> fmt::Display for Rule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::AlphaBeta { alpha, beta } => write!(f, "alpha-beta(alpha={alpha}, beta={beta})"),
            Rule::Epsilon { epsilon } => write!(f, "epsilon({epsilon})"),
            Rule::WSquare => f.write_str("w-square"),
            Rule::Flat => f.write_str("flat"),
        }
    }
}

/// Which rule each weighted layer uses.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleAssignment<T: Scalar = f32> {
    default: Rule<T>,
    bottom: Option<Rule<T>>,
    overrides: BTreeMap<usize, Rule<T>>,
}

impl<T: Scalar> RuleAssignment<T> {
    pub fn uniform(rule: Rule<T>) -> Self {
        Self {
            default: rule,
            bottom: None,
            overrides: BTreeMap::new(),
        }
    }

    /// Rule for the first Dense/Conv2d layer (the one touching the input).
    pub fn with_bottom(mut self, rule: Rule<T>) -> Self {
        self.bottom = Some(rule);
        self
    }

    /// Rule for layer `index`; takes precedence over the bottom rule.
    pub fn with_override(mut self, index: usize, rule: Rule<T>) -> Self {
        self.overrides.insert(index, rule);
        self
    }

    pub fn default_rule(&self) -> Rule<T> {
        self.default
    }

    /// Checks rule parameters and that every override names a weighted
    /// layer of `net`.
    pub fn validate(&self, net: &Network<T>) -> Result<()> {
        self.default.validate()?;
        if let Some(b) = &self.bottom {
            b.validate()?;
        }
        for (&k, rule) in &self.overrides {
            rule.validate()?;
            let Some(layer) = net.layers().get(k) else {
                return Err(Error::RuleConfig(format!(
                    "override for layer {k}, but the network has {} layers",
                    net.len()
                )));
            };
            if !layer.kind().is_linear() {
                return Err(Error::RuleConfig(format!(
                    "rule {rule} is not applicable to {} layer {k}",
                    layer.kind()
                )));
            }
        }
        Ok(())
    }

    /// Rule used at layer `index` of `net`.
    pub fn rule_for(&self, net: &Network<T>, index: usize) -> Rule<T> {
        if let Some(r) = self.overrides.get(&index) {
            return *r;
        }
        if let Some(b) = self.bottom {
            let first = net.layers().iter().position(|l| l.kind().is_linear());
            if first == Some(index) {
                return b;
            }
        }
        self.default
    }

    pub fn describe(&self) -> String {
        let mut s = self.default.to_string();
        if let Some(b) = &self.bottom {
            s.push_str(&format!("; bottom: {b}"));
        }
        for (k, r) in &self.overrides {
            s.push_str(&format!("; layer {k}: {r}"));
        }
        s
    }
}

fn alpha_beta_into<T: Scalar>(
    inputs: &[T],
    weights: &[T],
    bias: T,
    relevance: T,
    alpha: T,
    beta: T,
    out: &mut [T],
) {
    let zero = T::zero();
    let mut pos = bias.max(zero);
    let mut neg = bias.min(zero);
    for (&x, &w) in inputs.iter().zip(weights) {
        let z = x * w;
        if z > zero {
            pos += z;
        } else {
            neg += z;
        }
    }
    // An empty part hands its share to the other part, so the messages
    // still sum to R_j.
    let (a, b) = match (pos > zero, neg < zero) {
        (true, true) => (alpha, beta),
        (true, false) => (T::one(), zero),
        (false, true) => (zero, T::one()),
        (false, false) => {
            flat_into(relevance, out);
            return;
        }
    };
    let pos_scale = if pos > zero {
        a * relevance / pos
    } else {
        zero
    };
    let neg_scale = if neg < zero {
        b * relevance / neg
    } else {
        zero
    };
    for ((m, &x), &w) in out.iter_mut().zip(inputs).zip(weights) {
        let z = x * w;
        *m = if z > zero {
            z * pos_scale
        } else if z < zero {
            z * neg_scale
        } else {
            zero
        };
    }
}

fn epsilon_into<T: Scalar>(
    inputs: &[T],
    weights: &[T],
    bias: T,
    relevance: T,
    epsilon: T,
    out: &mut [T],
) {
    let total = inputs
        .iter()
        .zip(weights)
        .fold(bias, |acc, (&x, &w)| acc + x * w);
    let scale = relevance / stabilize(total, epsilon);
    for ((m, &x), &w) in out.iter_mut().zip(inputs).zip(weights) {
        *m = x * w * scale;
    }
}

/// `t + eps * sign(t)` with `sign(0) = +1`.
pub(crate) fn stabilize<T: Scalar>(t: T, epsilon: T) -> T {
    if t >= T::zero() {
        t + epsilon
    } else {
        t - epsilon
    }
}

fn w_square_into<T: Scalar>(weights: &[T], relevance: T, out: &mut [T]) {
    let total: T = weights.iter().map(|&w| w * w).sum();
    if total.is_zero() {
        flat_into(relevance, out);
        return;
    }
    let scale = relevance / total;
    for (m, &w) in out.iter_mut().zip(weights) {
        *m = w * w * scale;
    }
}

fn flat_into<T: Scalar>(relevance: T, out: &mut [T]) {
    if out.is_empty() {
        return;
    }
    let share = relevance / T::from_count(out.len());
    out.iter_mut().for_each(|m| *m = share);
}

/// Alpha-beta messages: `(alpha z+/sum z+ + beta z-/sum z-) R_j`.
///
/// When one of the two parts is empty the other part carries all of
/// `R_j`; when both are empty the split is uniform.
pub fn alpha_beta_messages<T: Scalar>(
    inputs: &[T],
    weights: &[T],
    relevance: T,
    alpha: T,
    beta: T,
) -> Result<Vec<T>> {
    let rule = Rule::alpha_beta(alpha, beta)?;
    let mut out = Vec::new();
    rule.messages_into(inputs, weights, T::zero(), relevance, &mut out);
    Ok(out)
}

/// Epsilon messages: `z_ij / (sum_i z_ij + eps sign(.)) * R_j`.
pub fn epsilon_messages<T: Scalar>(
    inputs: &[T],
    weights: &[T],
    relevance: T,
    epsilon: T,
) -> Result<Vec<T>> {
    let rule = Rule::epsilon(epsilon)?;
    let mut out = Vec::new();
    rule.messages_into(inputs, weights, T::zero(), relevance, &mut out);
    Ok(out)
}

/// Squared-weight messages `w_ij^2 / sum_i w_ij^2 * R_j`; an all-zero
/// weight row falls back to the flat split.
pub fn w_square_messages<T: Scalar>(weights: &[T], relevance: T) -> Vec<T> {
    let mut out = vec![T::zero(); weights.len()];
    if !relevance.is_zero() {
        w_square_into(weights, relevance, &mut out);
    }
    out
}

/// Uniform split of `R_j` over `fan_in` inputs.
pub fn flat_messages<T: Scalar>(fan_in: usize, relevance: T) -> Result<Vec<T>> {
    if fan_in == 0 {
        return Err(Error::invalid("fan-in must be >= 1"));
    }
    let mut out = vec![T::zero(); fan_in];
    flat_into(relevance, &mut out);
    Ok(out)
}

/// Winner-takes-all split for a max-pooling window; ties go to the
/// lowest index.
pub fn maxpool_redistribute<T: Scalar>(pool: &[T], relevance: T) -> Result<Vec<T>> {
    if pool.is_empty() {
        return Err(Error::invalid("empty pooling window"));
    }
    let idx: Vec<usize> = (0..pool.len()).collect();
    let mut out = vec![T::zero(); pool.len()];
    out[crate::netcore::argmax_first(pool, &idx)] = relevance;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn alpha_beta_positive_only_is_proportional() {
        let m = alpha_beta_messages(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 6.0, 1.0, 0.0).unwrap();
        assert!(close(&m, &[1.0, 2.0, 3.0], 1e-12));
    }

    #[test]
    fn alpha_beta_equal_contributions() {
        let m = alpha_beta_messages(&[0.5; 3], &[2.0; 3], 0.9, 1.0, 0.0).unwrap();
        assert!(close(&m, &[0.3, 0.3, 0.3], 1e-12));
    }

    #[test]
    fn alpha2_beta1_mixed_signs() {
        // z = (+2, -2): alpha part 2*1, beta part -1*1
        let m = alpha_beta_messages(&[1.0, 1.0], &[2.0, -2.0], 1.0, 2.0, -1.0).unwrap();
        assert!(close(&m, &[2.0, -1.0], 1e-12));
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_beta_empty_negative_part_conserves() {
        let m = alpha_beta_messages(&[1.0, 3.0], &[1.0, 1.0], 1.0, 2.0, -1.0).unwrap();
        assert!(close(&m, &[0.25, 0.75], 1e-12));
    }

    #[test]
    fn alpha_beta_zero_relevance() {
        let m = alpha_beta_messages(&[1.0, -1.0], &[1.0, 1.0], 0.0, 2.0, -1.0).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
    }

    #[test]
    fn alpha_beta_requires_unit_sum() {
        assert!(alpha_beta_messages(&[1.0], &[1.0], 1.0, 1.0, 1.0).is_err());
        assert!(Rule::alpha_beta(2.0f32, -1.0).is_ok());
    }

    #[test]
    fn epsilon_zero_sum_uses_positive_branch() {
        // sigma(0) = 0 + 0.01
        let m = epsilon_messages(&[1.0, 1.0], &[1.0, -1.0], 1.0, 0.01).unwrap();
        assert!(close(&m, &[100.0, -100.0], 1e-9));
    }

    #[test]
    fn epsilon_single_input() {
        let m = epsilon_messages(&[5.0f64], &[1.0], 2.0, 1e-9).unwrap();
        assert!(((m[0] - 2.0) / 2.0).abs() < 1e-8);
    }

    #[test]
    fn epsilon_zero_relevance_and_bad_eps() {
        assert_eq!(
            epsilon_messages(&[1.0, 2.0], &[1.0, 1.0], 0.0, 0.1).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(epsilon_messages(&[1.0], &[1.0], 1.0, 0.0).is_err());
        assert!(epsilon_messages(&[1.0], &[1.0], 1.0, -1.0).is_err());
    }

    #[test]
    fn w_square_cases() {
        assert!(close(
            &w_square_messages(&[1.0, -1.0], 1.0),
            &[0.5, 0.5],
            1e-12
        ));
        assert!(close(
            &w_square_messages(&[3.0, 4.0], 1.0),
            &[9.0 / 25.0, 16.0 / 25.0],
            1e-12
        ));
        assert!(close(
            &w_square_messages(&[0.0, 0.0], 1.0),
            &[0.5, 0.5],
            1e-12
        ));
    }

    #[test]
    fn flat_cases() {
        assert_eq!(flat_messages(4, 1.0).unwrap(), vec![0.25; 4]);
        assert_eq!(flat_messages(1, 0.7).unwrap(), vec![0.7]);
        assert_eq!(flat_messages(2, -0.8).unwrap(), vec![-0.4, -0.4]);
        assert!(flat_messages::<f64>(0, 1.0).is_err());
    }

    #[test]
    fn maxpool_cases() {
        assert_eq!(
            maxpool_redistribute(&[1.0, 5.0, 3.0], 2.0).unwrap(),
            vec![0.0, 2.0, 0.0]
        );
        assert_eq!(
            maxpool_redistribute(&[4.0, 4.0], 1.0).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            maxpool_redistribute(&[1.0, 2.0], 0.0).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(maxpool_redistribute::<f32>(&[], 1.0).is_err());
    }

    #[test]
    fn stabilizer_sign_convention() {
        assert_eq!(stabilize(0.0, 0.5), 0.5);
        assert_eq!(stabilize(-1.0, 0.5), -1.5);
        assert_eq!(stabilize(2.0, 0.5), 2.5);
    }
}
