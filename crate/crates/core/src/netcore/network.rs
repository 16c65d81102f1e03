use rand::Rng as _;

use super::layer::{Conv2d, Dense, Layer, MaxPool2d};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// A sequential chain of layers with a validated shape chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    // shapes[k] is the input shape of layer k; shapes[len] the output
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::NoLayers);
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: input_shape,
                reason: "input extents must be positive".into(),
            });
        }
        let mut shapes = vec![input_shape.clone()];
        for (k, layer) in layers.iter().enumerate() {
            for p in layer.parameters() {
                if !p.is_finite() {
                    return Err(Error::InvalidLayer {
                        layer: k,
                        reason: "non-finite parameter".into(),
                    });
                }
            }
            let out = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|reason| Error::ShapeChain { layer: k, reason })?;
            shapes.push(out);
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(Error::ShapeChain {
                layer: layers.len() - 1,
                reason: format!(
                    "last layer must produce a score vector, got shape {:?}",
                    shapes.last().unwrap()
                ),
            });
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_size(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Input shape of layer `k`; `k == len()` gives the output shape.
    pub fn shape_at(&self, k: usize) -> &[usize] {
        &self.shapes[k]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| match l {
            Layer::Dense(d) => d.bias.data().iter().any(|b| !b.is_zero()),
            Layer::Conv2d(c) => c.bias.data().iter().any(|b| !b.is_zero()),
            _ => false,
        })
    }

    /// Runs the network and records every intermediate activation.
    pub fn forward(&self, x: &Tensor<T>) -> Result<ForwardTrace<T>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        x.ensure_finite("network input")?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&activations[k], &self.shapes[k + 1])?;
            if !out.is_finite() {
                return Err(Error::NonFinite(format!("activation of layer {k}")));
            }
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Scores only.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.activations.pop().unwrap())
    }

    /// Index of the highest score, ties to the lowest index.
    pub fn classify(&self, x: &Tensor<T>) -> Result<usize> {
        let scores = self.predict(x)?;
        let idx: Vec<usize> = (0..scores.len()).collect();
        Ok(super::layer::argmax_first(scores.data(), &idx))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => Layer::Dense(Dense {
                    weights: d.weights.cast(),
                    bias: d.bias.cast(),
                }),
                Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                    kernel: c.kernel.cast(),
                    bias: c.bias.cast(),
                    stride: c.stride,
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2d(p) => Layer::MaxPool2d(*p),
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        Network {
            input_shape: self.input_shape.clone(),
            layers,
            shapes: self.shapes.clone(),
        }
    }
}

/// Activations recorded by [`Network::forward`]: the network input
/// followed by the output of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T: Scalar = f32> {
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Number of layers traced.
    pub fn len(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.activations[0]
    }

    pub fn layer_input(&self, k: usize) -> &Tensor<T> {
        &self.activations[k]
    }

    pub fn layer_output(&self, k: usize) -> &Tensor<T> {
        &self.activations[k + 1]
    }

    pub fn scores(&self) -> &Tensor<T> {
        self.activations.last().unwrap()
    }

    /// Recomputes the scores by running each layer on its recorded input.
    pub fn replay(&self, net: &Network<T>) -> Result<Tensor<T>> {
        if net.len() != self.len() {
            return Err(Error::invalid("trace does not belong to this network"));
        }
        let mut last = None;
        for (k, layer) in net.layers().iter().enumerate() {
            last = Some(layer.forward(&self.activations[k], net.shape_at(k + 1))?);
        }
        Ok(last.unwrap())
    }
}

/// Parameter-free layer description used to initialize a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerTemplate {
    Dense {
        outputs: usize,
    },
    Conv2d {
        out_channels: usize,
        window: (usize, usize),
        stride: (usize, usize),
    },
    Relu,
    MaxPool2d {
        window: (usize, usize),
        stride: (usize, usize),
    },
    Flatten,
}

/// Network topology without parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerTemplate>,
    pub bias: bool,
}

impl Architecture {
    /// `Flatten → (Dense → ReLU)* → Dense` multilayer perceptron.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        if input_shape.len() != 1 {
            layers.push(LayerTemplate::Flatten);
        }
        for &h in hidden {
            layers.push(LayerTemplate::Dense { outputs: h });
            layers.push(LayerTemplate::Relu);
        }
        layers.push(LayerTemplate::Dense { outputs: classes });
        Self {
            input_shape,
            layers,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// He-uniform weights, zero biases, drawn from `seed`.
    pub fn initialize<T: Scalar>(&self, seed: SeedTree) -> Result<Network<T>> {
        let mut rng = seed.child("init").rng();
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut uniform = |n: usize, fan_in: usize| -> Vec<T> {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| lit(rng.random_range(-bound..bound)))
                .collect()
        };
        for (k, t) in self.layers.iter().enumerate() {
            let layer = match *t {
                LayerTemplate::Dense { outputs } => {
                    let fan_in: usize = shape.iter().product();
                    let w = Tensor::new(vec![outputs, fan_in], uniform(outputs * fan_in, fan_in))?;
                    Layer::Dense(Dense::new(w, Tensor::zeros(&[outputs])?)?)
                }
                LayerTemplate::Conv2d {
                    out_channels,
                    window,
                    stride,
                } => {
                    let ic = *shape.first().ok_or(Error::NoLayers)?;
                    let fan_in = ic * window.0 * window.1;
                    let k = Tensor::new(
                        vec![out_channels, ic, window.0, window.1],
                        uniform(out_channels * fan_in, fan_in),
                    )?;
                    Layer::Conv2d(Conv2d::new(k, Tensor::zeros(&[out_channels])?, stride)?)
                }
                LayerTemplate::Relu => Layer::Relu,
                LayerTemplate::MaxPool2d { window, stride } => {
                    Layer::MaxPool2d(MaxPool2d::new(window, stride)?)
                }
                LayerTemplate::Flatten => Layer::Flatten,
            };
            shape = layer
                .output_shape(&shape)
                .map_err(|reason| Error::ShapeChain { layer: k, reason })?;
            layers.push(layer);
        }
        Network::new(self.input_shape.clone(), layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(out: usize, inp: usize, w: &[f64]) -> Layer<f64> {
        Layer::Dense(Dense::without_bias(Tensor::from_f64(vec![out, inp], w).unwrap()).unwrap())
    }

    #[test]
    fn empty_layer_list() {
        let err = Network::<f32>::new(vec![3], vec![]).unwrap_err();
        assert_eq!(err.to_string(), "no layers");
    }

    #[test]
    fn shape_chain_error_names_layer() {
        let l0 = dense(2, 3, &[0.0; 6]);
        let l1 = dense(1, 4, &[0.0; 4]);
        match Network::new(vec![3], vec![l0, l1]).unwrap_err() {
            Error::ShapeChain { layer, .. } => assert_eq!(layer, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn identity_dense() {
        let net = Network::new(
            vec![3],
            vec![dense(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.])],
        )
        .unwrap();
        let x = Tensor::from_f64(vec![3], &[1., 2., 3.]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[1., 2., 3.]);
    }

    #[test]
    fn input_shape_mismatch() {
        let net = Network::new(vec![3], vec![dense(1, 3, &[1., 1., 1.])]).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[4]).unwrap()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let l = dense(1, 2, &[1., f64::NAN]);
        assert!(matches!(
            Network::new(vec![2], vec![l]),
            Err(Error::InvalidLayer { layer: 0, .. })
        ));
    }

    #[test]
    fn trace_replay_is_bitwise() {
        let arch = Architecture::mlp(vec![1, 4, 4], &[8, 5], 3);
        let net: Network<f32> = arch.initialize(SeedTree::new(3)).unwrap();
        let x = Tensor::filled(&[1, 4, 4], 0.25f32).unwrap();
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.len(), net.len());
        assert_eq!(&trace.replay(&net).unwrap(), trace.scores());
        assert_eq!(net.forward(&x).unwrap(), trace);
    }
}
