//! Fully connected layer with hand-written forward and backward passes.

use crate::error::{Error, Result};
use crate::mat::{Mat, Scalar};
use crate::neural::params::{ParamBlockMut, Parameterized};
use rand::Rng;

/// y = x W^T + b, weight stored as (output_dim x input_dim).
#[derive(Debug, Clone)]
pub struct LinearLayer<T: Scalar> {
    pub weight: Mat<T>,
    pub bias: Vec<T>,
    grad_weight: Mat<T>,
    grad_bias: Vec<T>,
}

impl<T: Scalar> LinearLayer<T> {
    /// Xavier-uniform initialization over [-sqrt(6/(in+out)), +sqrt(6/(in+out))].
    pub fn new(input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weight = Mat::from_fn(output_dim, input_dim, |_, _| {
            T::from_f64_lossy(rng.gen_range(-limit..limit))
        });
        LinearLayer {
            weight,
            bias: vec![T::zero(); output_dim],
            grad_weight: Mat::zeros(output_dim, input_dim),
            grad_bias: vec![T::zero(); output_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, input: &Mat<T>) -> Result<Mat<T>> {
        if input.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "linear forward",
                detail: format!(
                    "input has {} columns, layer expects {}",
                    input.cols(),
                    self.input_dim()
                ),
            });
        }
        let mut out = input.matmul_transb(&self.weight);
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// `input` must be the same matrix the forward pass saw.
    pub fn backward(&mut self, input: &Mat<T>, upstream: &Mat<T>) -> Result<Mat<T>> {
        if input.cols() != self.input_dim() || upstream.cols() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                op: "linear backward",
                detail: format!(
                    "input {}x{}, upstream {}x{}, layer is {}x{}",
                    input.rows(),
                    input.cols(),
                    upstream.rows(),
                    upstream.cols(),
                    self.output_dim(),
                    self.input_dim()
                ),
            });
        }
        if input.rows() != upstream.rows() {
            return Err(Error::ShapeMismatch {
                op: "linear backward",
                detail: format!(
                    "input has {} rows but upstream has {}",
                    input.rows(),
                    upstream.rows()
                ),
            });
        }
        // dW = dY^T X, db = column sums of dY, dX = dY W.
        self.grad_weight
            .add_scaled(&upstream.matmul_transa(input), T::one());
        for r in 0..upstream.rows() {
            for (gb, &u) in self.grad_bias.iter_mut().zip(upstream.row(r)) {
                *gb += u;
            }
        }
        Ok(upstream.matmul(&self.weight))
    }
}

impl<T: Scalar> Parameterized<T> for LinearLayer<T> {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, T>> {
        let wdims = vec![self.weight.rows(), self.weight.cols()];
        let bdims = vec![self.bias.len()];
        vec![
            ParamBlockMut {
                name: "weight".into(),
                dims: wdims,
                value: self.weight.data_mut(),
                grad: self.grad_weight.data_mut(),
            },
            ParamBlockMut {
                name: "bias".into(),
                dims: bdims,
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_hand_computation() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
        let mut layer = LinearLayer::<f64>::new(3, 2, &mut rng);
        layer.weight = Mat::from_vec(2, 3, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
        layer.bias = vec![0.1, -0.2];

        let x = Mat::from_vec(1, 3, vec![2.0, 3.0, 4.0]);
        let y = layer.forward(&x).unwrap();
        // row . w0 + b0 = 2 - 4 + 0.1, row . w1 + b1 = 4.5 - 0.2
        assert!((y.get(0, 0) - (-1.9)).abs() < 1e-12);
        assert!((y.get(0, 1) - 4.3).abs() < 1e-12);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let mut layer = LinearLayer::<f64>::new(2, 2, &mut rng);
        let x = Mat::from_vec(1, 2, vec![1.0, 2.0]);
        let up = Mat::from_vec(1, 2, vec![1.0, 1.0]);
        layer.backward(&x, &up).unwrap();
        layer.backward(&x, &up).unwrap();
        let blocks = layer.param_blocks();
        // dW for one call is [[1,2],[1,2]]; two calls double it.
        assert_eq!(blocks[0].grad[0], 2.0);
        assert_eq!(blocks[0].grad[1], 4.0);
        assert_eq!(blocks[1].grad[0], 2.0);
        layer.zero_grad();
        assert!(layer.param_blocks()[0].grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(2);
        let layer = LinearLayer::<f32>::new(3, 2, &mut rng);
        let bad = Mat::zeros(1, 4);
        assert!(matches!(
            layer.forward(&bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
