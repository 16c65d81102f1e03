use super::layer::{argmax_first, for_each_neuron, for_each_window, Layer};
use super::network::{ForwardTrace, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pulls a gradient on the output of `layer` back onto its input.
/// ReLU uses derivative 0 at 0; max-pooling routes to the first maximum.
pub(crate) fn backward_input<T: Scalar>(
    layer: &Layer<T>,
    input: &Tensor<T>,
    grad_out: &[T],
) -> Vec<T> {
    let x = input.data();
    match layer {
        Layer::Dense(d) => {
            let mut g = vec![T::zero(); d.inputs()];
            for (j, &go) in grad_out.iter().enumerate() {
                if go.is_zero() {
                    continue;
                }
                for (gi, &w) in g.iter_mut().zip(d.row(j)) {
                    *gi += w * go;
                }
            }
            g
        }
        Layer::Conv2d(_) => {
            let mut g = vec![T::zero(); x.len()];
            for_each_neuron(layer, input.shape(), |j, idx, w, _| {
                let go = grad_out[j];
                if !go.is_zero() {
                    for (&i, &wi) in idx.iter().zip(w) {
                        g[i] += wi * go;
                    }
                }
            });
            g
        }
        Layer::Relu => x
            .iter()
            .zip(grad_out)
            .map(|(&v, &go)| if v > T::zero() { go } else { T::zero() })
            .collect(),
        Layer::MaxPool2d(p) => {
            let mut g = vec![T::zero(); x.len()];
            for_each_window(p, input.shape(), |j, idx| {
                g[idx[argmax_first(x, idx)]] += grad_out[j];
            });
            g
        }
        Layer::Flatten => grad_out.to_vec(),
    }
}

/// Gradient of score `output_index` with respect to the network input.
pub fn input_gradient<T: Scalar>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    output_index: usize,
) -> Result<Tensor<T>> {
    if output_index >= net.output_size() {
        return Err(Error::OutOfBounds {
            index: output_index,
            len: net.output_size(),
        });
    }
    if trace.len() != net.len() {
        return Err(Error::invalid("trace does not belong to this network"));
    }
    let mut g = vec![T::zero(); net.output_size()];
    g[output_index] = T::one();
    for (k, layer) in net.layers().iter().enumerate().rev() {
        g = backward_input(layer, trace.layer_input(k), &g);
    }
    Tensor::new(net.input_shape().to_vec(), g)
}
