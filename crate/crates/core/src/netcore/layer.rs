use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer discriminant, used in error messages and file manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Dense and Conv2d: layers with weights that relevance rules apply to.
    pub fn is_linear(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv2d)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully connected layer, `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let bad = |reason: String| Error::InvalidShape {
            shape: weights.shape().to_vec(),
            reason,
        };
        if weights.rank() != 2 {
            return Err(bad("dense weights must be rank 2 (out × in)".into()));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(bad(format!(
                "bias shape {:?} does not match {} outputs",
                bias.shape(),
                weights.shape()[0]
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Bias-free layer.
    pub fn without_bias(weights: Tensor<T>) -> Result<Self> {
        let out = *weights.shape().first().unwrap_or(&0);
        let bias = Tensor::zeros(&[out.max(1)])?;
        Self::new(weights, bias)
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn row(&self, j: usize) -> &[T] {
        let n = self.inputs();
        &self.weights.data()[j * n..(j + 1) * n]
    }
}

/// Valid (unpadded) 2-D convolution over `C × H × W` inputs.
/// `kernel` is `out_channels × in_channels × kh × kw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Scalar = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, stride: (usize, usize)) -> Result<Self> {
        if kernel.rank() != 4 {
            return Err(Error::InvalidShape {
                shape: kernel.shape().to_vec(),
                reason: "conv kernel must be rank 4 (out × in × kh × kw)".into(),
            });
        }
        if bias.shape() != [kernel.shape()[0]] {
            return Err(Error::InvalidShape {
                shape: bias.shape().to_vec(),
                reason: format!("bias must have {} entries", kernel.shape()[0]),
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv stride must be >= 1"));
        }
        Ok(Self {
            kernel,
            bias,
            stride,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn window(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    fn filter(&self, o: usize) -> &[T] {
        let n = self.kernel.len() / self.out_channels();
        &self.kernel.data()[o * n..(o + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl MaxPool2d {
    pub fn new(window: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("pool window and stride must be >= 1"));
        }
        Ok(Self { window, stride })
    }
}

/// One stage of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Scalar = f32> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
}

fn sliding_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    (input >= window).then(|| (input - window) / stride + 1)
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    /// Output shape for a given input shape, or the reason the input is
    /// not accepted.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(format!(
                        "dense expects input [{}], got {input:?}",
                        d.inputs()
                    ));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Conv2d(c) => {
                let [ch, h, w] = input else {
                    return Err(format!("conv2d expects a C×H×W input, got {input:?}"));
                };
                if *ch != c.in_channels() {
                    return Err(format!(
                        "conv2d expects {} input channels, got {ch}",
                        c.in_channels()
                    ));
                }
                let (kh, kw) = c.window();
                match (
                    sliding_extent(*h, kh, c.stride.0),
                    sliding_extent(*w, kw, c.stride.1),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![c.out_channels(), oh, ow]),
                    _ => Err(format!("kernel {kh}×{kw} larger than input {h}×{w}")),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d(p) => {
                let [ch, h, w] = input else {
                    return Err(format!("maxpool2d expects a C×H×W input, got {input:?}"));
                };
                match (
                    sliding_extent(*h, p.window.0, p.stride.0),
                    sliding_extent(*w, p.window.1, p.stride.1),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![*ch, oh, ow]),
                    _ => Err(format!(
                        "pool window {:?} larger than input {h}×{w}",
                        p.window
                    )),
                }
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Conv2d(c) => vec![&c.kernel, &c.bias],
            _ => Vec::new(),
        }
    }

    /// Forward pass; the input shape must already be validated against
    /// the network's shape chain.
    pub fn forward(&self, input: &Tensor<T>, out_shape: &[usize]) -> Result<Tensor<T>> {
        let x = input.data();
        let data = match self {
            Layer::Dense(d) => (0..d.outputs())
                .map(|j| {
                    d.row(j)
                        .iter()
                        .zip(x)
                        .fold(d.bias.data()[j], |acc, (&w, &xi)| acc + w * xi)
                })
                .collect(),
            Layer::Conv2d(_) => {
                let mut out = vec![T::zero(); out_shape.iter().product()];
                for_each_neuron(self, input.shape(), |j, idx, w, b| {
                    out[j] = idx.iter().zip(w).fold(b, |acc, (&i, &wi)| acc + wi * x[i]);
                });
                out
            }
            Layer::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            Layer::MaxPool2d(p) => {
                let mut out = vec![T::zero(); out_shape.iter().product()];
                for_each_window(p, input.shape(), |j, idx| {
                    out[j] = x[idx[argmax_first(x, idx)]];
                });
                out
            }
            Layer::Flatten => x.to_vec(),
        };
        Tensor::new(out_shape.to_vec(), data)
    }
}

/// Position (within `idx`) of the largest `x[idx[k]]`; ties go to the
/// earliest position, i.e. the lowest flat input index.
pub(crate) fn argmax_first<T: Scalar>(x: &[T], idx: &[usize]) -> usize {
    let mut best = 0;
    for (k, &i) in idx.iter().enumerate().skip(1) {
        if x[i] > x[idx[best]] {
            best = k;
        }
    }
    best
}

/// Visits every output neuron of a Dense or Conv2d layer with the flat
/// indices of its inputs, the matching weights and its bias.
/// Other layer kinds are not visited.
pub(crate) fn for_each_neuron<T: Scalar>(
    layer: &Layer<T>,
    in_shape: &[usize],
    mut f: impl FnMut(usize, &[usize], &[T], T),
) {
    match layer {
        Layer::Dense(d) => {
            let idx: Vec<usize> = (0..d.inputs()).collect();
            for j in 0..d.outputs() {
                f(j, &idx, d.row(j), d.bias.data()[j]);
            }
        }
        Layer::Conv2d(c) => {
            let (ic, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (kh, kw) = c.window();
            let (sh, sw) = c.stride;
            let oh = (h - kh) / sh + 1;
            let ow = (w - kw) / sw + 1;
            let mut idx = Vec::with_capacity(ic * kh * kw);
            for y in 0..oh {
                for x in 0..ow {
                    idx.clear();
                    for ch in 0..ic {
                        for ky in 0..kh {
                            let row = ch * h * w + (y * sh + ky) * w + x * sw;
                            idx.extend(row..row + kw);
                        }
                    }
                    for o in 0..c.out_channels() {
                        f((o * oh + y) * ow + x, &idx, c.filter(o), c.bias.data()[o]);
                    }
                }
            }
        }
        _ => {}
    }
}

/// Visits every pooling window with its output index and the flat input
/// indices in row-major order.
pub(crate) fn for_each_window(
    pool: &MaxPool2d,
    in_shape: &[usize],
    mut f: impl FnMut(usize, &[usize]),
) {
    let (ch, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = pool.window;
    let (sh, sw) = pool.stride;
    let oh = (h - kh) / sh + 1;
    let ow = (w - kw) / sw + 1;
    let mut idx = Vec::with_capacity(kh * kw);
    for c in 0..ch {
        for y in 0..oh {
            for x in 0..ow {
                idx.clear();
                for ky in 0..kh {
                    let row = c * h * w + (y * sh + ky) * w + x * sw;
                    idx.extend(row..row + kw);
                }
                f((c * oh + y) * ow + x, &idx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shape_matches_atari_first_layer() {
        let kernel = Tensor::<f32>::zeros(&[32, 4, 8, 8]).unwrap();
        let conv =
            Layer::Conv2d(Conv2d::new(kernel, Tensor::zeros(&[32]).unwrap(), (4, 4)).unwrap());
        assert_eq!(conv.output_shape(&[4, 84, 84]).unwrap(), vec![32, 20, 20]);
        assert!(conv.output_shape(&[3, 84, 84]).is_err());
    }

    #[test]
    fn conv_forward_matches_direct_sum() {
        // one 2×2 filter, stride 1, over a 1×3×3 ramp
        let kernel = Tensor::<f64>::from_f64(vec![1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let conv = Layer::Conv2d(
            Conv2d::new(kernel, Tensor::from_f64(vec![1], &[0.5]).unwrap(), (1, 1)).unwrap(),
        );
        let x = Tensor::from_f64(vec![1, 3, 3], &[0., 1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let y = conv.forward(&x, &[1, 2, 2]).unwrap();
        // top-left window (0,1,3,4): 0+2+9+16 = 27
        assert_eq!(y.data(), &[27.5, 37.5, 57.5, 67.5]);
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::<f32>::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        let y = Layer::Relu.forward(&x, &[3]).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let p = Layer::<f32>::MaxPool2d(MaxPool2d::new((2, 2), (2, 2)).unwrap());
        let x = Tensor::new(vec![1, 2, 4], vec![1., 5., 0., 0., 3., 2., 7., 1.]).unwrap();
        let y = p.forward(&x, &[1, 1, 2]).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
    }
}
