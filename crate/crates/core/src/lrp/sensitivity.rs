use crate::error::Result;
use crate::netcore::{input_gradient, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::explain::RelevanceMap;

/// Gradient-magnitude baseline: the gradient of score `output_index` with
/// respect to the input, reduced per pixel by the l2-norm over channels
/// for `C × H × W` inputs and by absolute value otherwise.
pub fn sensitivity_map<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    output_index: usize,
) -> Result<RelevanceMap<T>> {
    let trace = net.forward(x)?;
    let grad = input_gradient(net, &trace, output_index)?;
    let values = match grad.shape() {
        [c, h, w] => {
            let plane = h * w;
            let norms = (0..plane)
                .map(|p| {
                    (0..*c)
                        .map(|ch| {
                            let g = grad.data()[ch * plane + p];
                            g * g
                        })
                        .sum::<T>()
                        .sqrt()
                })
                .collect();
            Tensor::new(vec![*h, *w], norms)?
        }
        _ => grad.map(|g| g.abs()),
    };
    Ok(RelevanceMap {
        values,
        output_index,
        score: trace.scores().data()[output_index],
        residual: None,
        sample_id: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Dense, Layer};

    #[test]
    fn linear_model_gives_channel_norm_of_weights() {
        // f(x) = w · x over a 2×1×2 input
        let w = [3.0, -1.0, 4.0, 2.0];
        let net: Network<f64> = Network::new(
            vec![2, 1, 2],
            vec![
                Layer::Flatten,
                Layer::Dense(
                    Dense::without_bias(Tensor::from_f64(vec![1, 4], &w).unwrap()).unwrap(),
                ),
            ],
        )
        .unwrap();
        let expected = [5.0, 5.0f64.sqrt()];
        for x in [[0.1, 0.2, 0.3, 0.4], [-5.0, 2.0, 7.0, 1.0]] {
            let m =
                sensitivity_map(&net, &Tensor::from_f64(vec![2, 1, 2], &x).unwrap(), 0).unwrap();
            assert_eq!(m.values.shape(), &[1, 2]);
            for (a, b) in m.values.data().iter().zip(expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let net = Network::new(
            vec![3],
            vec![
                Layer::Dense(Dense::without_bias(Tensor::<f64>::zeros(&[4, 3]).unwrap()).unwrap()),
                Layer::Relu,
                Layer::Dense(Dense::without_bias(Tensor::zeros(&[2, 4]).unwrap()).unwrap()),
            ],
        )
        .unwrap();
        let m = sensitivity_map(
            &net,
            &Tensor::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap(),
            1,
        )
        .unwrap();
        assert!(m.values.data().iter().all(|v| *v == 0.0));
    }
}
