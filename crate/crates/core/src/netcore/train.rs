//! Mini-batch SGD with softmax cross-entropy for Dense/ReLU/Flatten
//! networks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::backward_input;
use super::layer::Layer;
use super::network::{Architecture, Network};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LabeledSample<T: Scalar = f32> {
    pub input: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep biases at their current values.
    #[serde(default)]
    pub freeze_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            freeze_bias: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained<T: Scalar = f32> {
    pub network: Network<T>,
    /// Mean cross-entropy over the training set: entry 0 before any
    /// update, entry `e` after epoch `e`.
    pub losses: Vec<f64>,
}

impl<T: Scalar> Trained<T> {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

/// Initializes `arch` from `cfg.seed` and trains it on `data`. Biases
/// stay at zero when `arch.bias` is false.
pub fn train_toy<T: Scalar>(
    data: &[LabeledSample<T>],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    let seed = SeedTree::new(cfg.seed);
    let net = arch.initialize(seed)?;
    let cfg = TrainConfig {
        freeze_bias: cfg.freeze_bias || !arch.bias,
        ..*cfg
    };
    train_network(net, data, &cfg)
}

/// Trains an already-initialized network.
pub fn train_network<T: Scalar>(
    mut net: Network<T>,
    data: &[LabeledSample<T>],
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::invalid("learning rate must be finite and >= 0"));
    }
    for (k, layer) in net.layers().iter().enumerate() {
        if matches!(layer, Layer::Conv2d(_) | Layer::MaxPool2d(_)) {
            return Err(Error::InvalidLayer {
                layer: k,
                reason: format!("{} layers are inference-only", layer.kind()),
            });
        }
    }
    let classes = net.output_size();
    for (i, s) in data.iter().enumerate() {
        if s.input.shape() != net.input_shape() {
            return Err(Error::Dataset(format!(
                "sample {i} has shape {:?} but the network expects {:?}",
                s.input.shape(),
                net.input_shape()
            )));
        }
        if s.label >= classes {
            return Err(Error::Dataset(format!(
                "sample {i} has label {} but the network has {classes} outputs",
                s.label
            )));
        }
    }

    let mut losses = vec![mean_loss(&net, data).map_err(|_| Error::Diverged { epoch: 0 })?];
    if !losses[0].is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    let mut rng = SeedTree::new(cfg.seed).child("shuffle").rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let lr = T::from_f64_lossy(cfg.learning_rate);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grads =
                batch_gradients(&net, data, batch).map_err(|_| Error::Diverged { epoch })?;
            let scale = lr / T::from_count(batch.len());
            for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
                if let (Layer::Dense(d), Some((gw, gb))) = (layer, g) {
                    for (w, dw) in d.weights.data_mut().iter_mut().zip(gw) {
                        *w -= scale * dw;
                    }
                    if !cfg.freeze_bias {
                        for (b, db) in d.bias.data_mut().iter_mut().zip(gb) {
                            *b -= scale * db;
                        }
                    }
                }
            }
        }
        let loss = mean_loss(&net, data).map_err(|_| Error::Diverged { epoch })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(loss);
    }
    Ok(Trained {
        network: net,
        losses,
    })
}

type LayerGrad<T> = Option<(Vec<T>, Vec<T>)>;

fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    data: &[LabeledSample<T>],
    batch: &[usize],
) -> Result<Vec<LayerGrad<T>>> {
    let mut acc: Vec<LayerGrad<T>> = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => Some((
                vec![T::zero(); d.weights.len()],
                vec![T::zero(); d.outputs()],
            )),
            _ => None,
        })
        .collect();
    for &i in batch {
        let s = &data[i];
        let trace = net.forward(&s.input)?;
        let mut g = softmax(trace.scores().data());
        g[s.label] -= T::one();
        for (k, layer) in net.layers().iter().enumerate().rev() {
            let input = trace.layer_input(k);
            if let (Layer::Dense(d), Some((gw, gb))) = (layer, acc[k].as_mut()) {
                let n = d.inputs();
                for (j, &go) in g.iter().enumerate() {
                    gb[j] += go;
                    for (dw, &x) in gw[j * n..(j + 1) * n].iter_mut().zip(input.data()) {
                        *dw += go * x;
                    }
                }
            }
            if k > 0 {
                g = backward_input(layer, input, &g);
            }
        }
    }
    Ok(acc)
}

pub(crate) fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let max = scores.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = scores.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean softmax cross-entropy of `net` over `data`, accumulated in f64.
pub fn mean_loss<T: Scalar>(net: &Network<T>, data: &[LabeledSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let scores = net.predict(&s.input)?;
        let z: Vec<f64> = scores.data().iter().map(|v| v.to_f64_lossless()).collect();
        let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[s.label];
    }
    Ok(total / data.len() as f64)
}

/// Fraction of samples whose arg-max score equals the label.
pub fn accuracy<T: Scalar>(net: &Network<T>, data: &[LabeledSample<T>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut hits = 0usize;
    for s in data {
        if net.classify(&s.input)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Two Gaussian blobs in the plane centred at (-2,-2) and (2,2).
    pub(crate) fn blobs(seed: u64, per_class: usize) -> Vec<LabeledSample<f64>> {
        let mut rng = SeedTree::new(seed).child("blobs").rng();
        let noise = Normal::new(0.0, 0.6).unwrap();
        let mut out = Vec::new();
        for label in 0..2 {
            let c = if label == 0 { -2.0 } else { 2.0 };
            for _ in 0..per_class {
                let p = [c + noise.sample(&mut rng), c + noise.sample(&mut rng)];
                out.push(LabeledSample {
                    input: Tensor::from_f64(vec![2], &p).unwrap(),
                    label,
                });
            }
        }
        out
    }

    /// Perceptron oracle: converges iff the blobs are linearly separable.
    fn perceptron_separates(data: &[LabeledSample<f64>]) -> bool {
        let mut w = [0.0f64; 3];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for s in data {
                let x = s.input.data();
                let y = if s.label == 1 { 1.0 } else { -1.0 };
                if y * (w[0] * x[0] + w[1] * x[1] + w[2]) <= 0.0 {
                    w[0] += y * x[0];
                    w[1] += y * x[1];
                    w[2] += y;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    fn cfg(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size: 8,
            seed: 11,
            freeze_bias: false,
        }
    }

    #[test]
    fn bias_free_architecture_stays_bias_free() {
        let data = blobs(6, 20);
        let arch = Architecture::mlp(vec![2], &[4], 2).without_bias();
        let trained: Trained<f64> = train_toy(&data, &arch, &cfg(0.1, 3)).unwrap();
        assert!(!trained.network.has_bias());
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = blobs(5, 100);
        assert!(perceptron_separates(&data));
        let arch = Architecture::mlp(vec![2], &[], 2);
        let trained = train_toy(&data, &arch, &cfg(0.1, 20)).unwrap();
        assert!(trained.final_loss() < trained.initial_loss());
        assert!(accuracy(&trained.network, &data).unwrap() >= 0.95);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = blobs(1, 10);
        let arch = Architecture::mlp(vec![2], &[4], 2);
        let trained: Trained<f64> = train_toy(&data, &arch, &cfg(0.1, 0)).unwrap();
        let init: Network<f64> = arch.initialize(SeedTree::new(11)).unwrap();
        assert_eq!(trained.network, init);
        assert_eq!(trained.losses.len(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_loss() {
        let data = blobs(2, 20);
        let arch = Architecture::mlp(vec![2], &[4], 2);
        let trained: Trained<f64> = train_toy(&data, &arch, &cfg(0.0, 3)).unwrap();
        assert!((trained.final_loss() - trained.initial_loss()).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(3, 20);
        let arch = Architecture::mlp(vec![2], &[6], 2);
        let a: Trained<f32> = train_toy(&cast(&data), &arch, &cfg(0.05, 4)).unwrap();
        let b: Trained<f32> = train_toy(&cast(&data), &arch, &cfg(0.05, 4)).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn divergence_reports_epoch() {
        // f32 with huge inputs and a huge step: weights overflow after
        // the first update on a misclassified sample
        let mut data = cast(&blobs(4, 20));
        let mut rng = SeedTree::new(1).rng();
        for s in &mut data {
            for v in s.input.data_mut() {
                *v *= 1e30 * (1.0 + rng.random::<f32>());
            }
            s.label = 1 - s.label;
        }
        let arch = Architecture::mlp(vec![2], &[4], 2);
        let err = train_toy(&data, &arch, &cfg(1e10, 5)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn rejects_out_of_range_label() {
        let mut data = blobs(4, 2);
        data[0].label = 5;
        let arch = Architecture::mlp(vec![2], &[], 2);
        assert!(matches!(
            train_toy(&data, &arch, &cfg(0.1, 1)),
            Err(Error::Dataset(_))
        ));
    }

    fn cast(d: &[LabeledSample<f64>]) -> Vec<LabeledSample<f32>> {
        d.iter()
            .map(|s| LabeledSample {
                input: s.input.cast(),
                label: s.label,
            })
            .collect()
    }
}
