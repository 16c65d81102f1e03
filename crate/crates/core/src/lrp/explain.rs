use crate::error::{Error, Result};
use crate::netcore::{
    argmax_first, for_each_neuron, for_each_window, ForwardTrace, Layer, LayerKind, Network,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::rules::RuleAssignment;

/// Per-input relevance for one explained output.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap<T: Scalar = f32> {
    pub values: Tensor<T>,
    pub output_index: usize,
    /// The explained score `f(x)`.
    pub score: T,
    /// `sum(values) - score`; `None` for maps that do not decompose the
    /// score (e.g. sensitivity maps).
    pub residual: Option<T>,
    pub sample_id: Option<String>,
}

impl<T: Scalar> RelevanceMap<T> {
    pub fn total(&self) -> T {
        self.values.sum()
    }

    /// `|residual| / max(|score|, 1e-6)`.
    pub fn relative_residual(&self) -> Option<T> {
        let floor = T::from_f64_lossy(1e-6);
        self.residual.map(|r| r.abs() / self.score.abs().max(floor))
    }

    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = Some(id.into());
        self
    }
}

/// Conservation bookkeeping for one layer transition.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAudit<T: Scalar = f32> {
    pub layer: usize,
    pub kind: LayerKind,
    /// Total relevance arriving at the layer output.
    pub relevance_out: T,
    /// Total relevance passed to the layer input.
    pub relevance_in: T,
    /// Largest `|sum_i R_{i<-j} - R_j|` over the layer's neurons.
    pub max_neuron_residual: T,
}

/// Propagates the score of `output_index` back to the input.
pub fn lrp_explain<T: Scalar>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    output_index: usize,
    rules: &RuleAssignment<T>,
) -> Result<RelevanceMap<T>> {
    propagate(net, trace, output_index, rules, None)
}

/// Like [`lrp_explain`], also returning one audit entry per layer in
/// forward order.
pub fn lrp_explain_audited<T: Scalar>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    output_index: usize,
    rules: &RuleAssignment<T>,
) -> Result<(RelevanceMap<T>, Vec<LayerAudit<T>>)> {
    let mut audits = Vec::with_capacity(net.len());
    let map = propagate(net, trace, output_index, rules, Some(&mut audits))?;
    audits.reverse();
    Ok((map, audits))
}

fn propagate<T: Scalar>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    output_index: usize,
    rules: &RuleAssignment<T>,
    mut audits: Option<&mut Vec<LayerAudit<T>>>,
) -> Result<RelevanceMap<T>> {
    if output_index >= net.output_size() {
        return Err(Error::OutOfBounds {
            index: output_index,
            len: net.output_size(),
        });
    }
    if trace.len() != net.len() || trace.input().shape() != net.input_shape() {
        return Err(Error::invalid("trace was not produced by this network"));
    }
    rules.validate(net)?;

    let score = trace.scores().data()[output_index];
    let mut relevance = vec![T::zero(); net.output_size()];
    relevance[output_index] = score;
    let mut buf = Vec::new();
    let mut gathered = Vec::new();

    for (k, layer) in net.layers().iter().enumerate().rev() {
        let input = trace.layer_input(k);
        let x = input.data();
        let mut lower = vec![T::zero(); x.len()];
        let mut worst = T::zero();
        match layer {
            Layer::Dense(_) | Layer::Conv2d(_) => {
                let rule = rules.rule_for(net, k);
                for_each_neuron(layer, input.shape(), |j, idx, w, b| {
                    let r = relevance[j];
                    if r.is_zero() {
                        return;
                    }
                    gathered.clear();
                    gathered.extend(idx.iter().map(|&i| x[i]));
                    rule.messages_into(&gathered, w, b, r, &mut buf);
                    let mut sum = T::zero();
                    for (&i, &m) in idx.iter().zip(&buf) {
                        lower[i] += m;
                        sum += m;
                    }
                    worst = worst.max((sum - r).abs());
                });
            }
            Layer::MaxPool2d(p) => {
                for_each_window(p, input.shape(), |j, idx| {
                    lower[idx[argmax_first(x, idx)]] += relevance[j];
                });
            }
            Layer::Relu | Layer::Flatten => lower.copy_from_slice(&relevance),
        }
        if let Some(a) = audits.as_deref_mut() {
            a.push(LayerAudit {
                layer: k,
                kind: layer.kind(),
                relevance_out: relevance.iter().copied().sum(),
                relevance_in: lower.iter().copied().sum(),
                max_neuron_residual: worst,
            });
        }
        if lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("relevance at input of layer {k}")));
        }
        relevance = lower;
    }

    let values = Tensor::new(net.input_shape().to_vec(), relevance)?;
    let residual = values.sum() - score;
    Ok(RelevanceMap {
        values,
        output_index,
        score,
        residual: Some(residual),
        sample_id: None,
    })
}
