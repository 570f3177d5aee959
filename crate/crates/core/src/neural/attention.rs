//! Multi-head self-attention over frame sequences, forward and backward
//! written out by hand so every gradient can be checked numerically.

use crate::error::{Error, Result};
use crate::mat::{Mat, Scalar};
use crate::neural::params::{ParamBlockMut, Parameterized};
use crate::neural::stable_softmax_row;
use rand::Rng;

/// Q/K/V/output projections are square (model_dim x model_dim) and bias-free.
/// Heads operate on disjoint column ranges of width model_dim / heads.
#[derive(Debug, Clone)]
pub struct AttentionBlock<T: Scalar> {
    pub model_dim: usize,
    pub heads: usize,
    pub residual: bool,
    w_q: Mat<T>,
    w_k: Mat<T>,
    w_v: Mat<T>,
    w_o: Mat<T>,
    g_q: Mat<T>,
    g_k: Mat<T>,
    g_v: Mat<T>,
    g_o: Mat<T>,
}

/// Intermediates held between a forward and the matching backward call.
pub struct AttentionCache<T: Scalar> {
    input: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    /// Post-softmax weights, one (n x n) matrix per head.
    attn: Vec<Mat<T>>,
    concat: Mat<T>,
}

impl<T: Scalar> AttentionCache<T> {
    /// Attention weights for inspection; rows each sum to one.
    pub fn attention_weights(&self) -> &[Mat<T>] {
        &self.attn
    }
}

impl<T: Scalar> AttentionBlock<T> {
    pub fn new(model_dim: usize, heads: usize, residual: bool, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || model_dim == 0 {
            return Err(Error::BadConfig(
                "attention needs at least one head and one dimension".into(),
            ));
        }
        if !model_dim.is_multiple_of(heads) {
            return Err(Error::BadConfig(format!(
                "model_dim {model_dim} is not divisible by {heads} heads"
            )));
        }
        let limit = (6.0 / (2 * model_dim) as f64).sqrt();
        let init = |rng: &mut dyn rand::RngCore| {
            Mat::from_fn(model_dim, model_dim, |_, _| {
                T::from_f64_lossy(rng.gen_range(-limit..limit))
            })
        };
        Ok(AttentionBlock {
            model_dim,
            heads,
            residual,
            w_q: init(rng),
            w_k: init(rng),
            w_v: init(rng),
            w_o: init(rng),
            g_q: Mat::zeros(model_dim, model_dim),
            g_k: Mat::zeros(model_dim, model_dim),
            g_v: Mat::zeros(model_dim, model_dim),
            g_o: Mat::zeros(model_dim, model_dim),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn forward(&self, input: &Mat<T>) -> Result<Mat<T>> {
        self.forward_cached(input).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, input: &Mat<T>) -> Result<(Mat<T>, AttentionCache<T>)> {
        if input.rows() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if input.cols() != self.model_dim {
            return Err(Error::ShapeMismatch {
                op: "attention forward",
                detail: format!(
                    "input has {} columns, block expects {}",
                    input.cols(),
                    self.model_dim
                ),
            });
        }

        let n = input.rows();
        let dh = self.head_dim();
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());

        let q = input.matmul_transb(&self.w_q);
        let k = input.matmul_transb(&self.w_k);
        let v = input.matmul_transb(&self.w_v);

        let mut attn = Vec::with_capacity(self.heads);
        let mut concat = Mat::zeros(n, self.model_dim);
        for h in 0..self.heads {
            let q_h = q.col_slice(h * dh, dh);
            let k_h = k.col_slice(h * dh, dh);
            let v_h = v.col_slice(h * dh, dh);

            let mut scores = q_h.matmul_transb(&k_h);
            for s in scores.data_mut() {
                *s *= scale;
            }
            for r in 0..n {
                stable_softmax_row(scores.row_mut(r));
            }
            let o_h = scores.matmul(&v_h);
            concat.add_into_cols(h * dh, &o_h);
            attn.push(scores);
        }

        let mut out = concat.matmul_transb(&self.w_o);
        if self.residual {
            out.add_scaled(input, T::one());
        }

        let cache = AttentionCache {
            input: input.clone(),
            q,
            k,
            v,
            attn,
            concat,
        };
        Ok((out, cache))
    }

    /// Accumulates projection gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &AttentionCache<T>, upstream: &Mat<T>) -> Result<Mat<T>> {
        let n = cache.input.rows();
        if upstream.rows() != n || upstream.cols() != self.model_dim {
            return Err(Error::ShapeMismatch {
                op: "attention backward",
                detail: format!(
                    "upstream is {}x{}, expected {}x{}",
                    upstream.rows(),
                    upstream.cols(),
                    n,
                    self.model_dim
                ),
            });
        }

        let dh = self.head_dim();
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());

        // out = concat W_o^T (+ input)
        self.g_o
            .add_scaled(&upstream.matmul_transa(&cache.concat), T::one());
        let d_concat = upstream.matmul(&self.w_o);

        let mut d_q = Mat::zeros(n, self.model_dim);
        let mut d_k = Mat::zeros(n, self.model_dim);
        let mut d_v = Mat::zeros(n, self.model_dim);
        for h in 0..self.heads {
            let q_h = cache.q.col_slice(h * dh, dh);
            let k_h = cache.k.col_slice(h * dh, dh);
            let v_h = cache.v.col_slice(h * dh, dh);
            let a_h = &cache.attn[h];
            let d_o_h = d_concat.col_slice(h * dh, dh);

            let d_attn = d_o_h.matmul_transb(&v_h);
            let d_v_h = a_h.matmul_transa(&d_o_h);

            // Softmax backward per row: ds = a * (da - sum(da * a)).
            let mut d_scores = Mat::zeros(n, n);
            for r in 0..n {
                let a_row = a_h.row(r);
                let da_row = d_attn.row(r);
                let mut dot = T::zero();
                for (&a, &da) in a_row.iter().zip(da_row) {
                    dot += a * da;
                }
                let ds_row = d_scores.row_mut(r);
                for ((ds, &a), &da) in ds_row.iter_mut().zip(a_row).zip(da_row) {
                    *ds = a * (da - dot) * scale;
                }
            }

            let d_q_h = d_scores.matmul(&k_h);
            let d_k_h = d_scores.matmul_transa(&q_h);
            d_q.add_into_cols(h * dh, &d_q_h);
            d_k.add_into_cols(h * dh, &d_k_h);
            d_v.add_into_cols(h * dh, &d_v_h);
        }

        self.g_q
            .add_scaled(&d_q.matmul_transa(&cache.input), T::one());
        self.g_k
            .add_scaled(&d_k.matmul_transa(&cache.input), T::one());
        self.g_v
            .add_scaled(&d_v.matmul_transa(&cache.input), T::one());

        let mut d_input = d_q.matmul(&self.w_q);
        d_input.add_scaled(&d_k.matmul(&self.w_k), T::one());
        d_input.add_scaled(&d_v.matmul(&self.w_v), T::one());
        if self.residual {
            d_input.add_scaled(upstream, T::one());
        }
        Ok(d_input)
    }

    /// Test hook: overwrite the projections directly.
    pub fn set_weights(&mut self, w_q: Mat<T>, w_k: Mat<T>, w_v: Mat<T>, w_o: Mat<T>) {
        self.w_q = w_q;
        self.w_k = w_k;
        self.w_v = w_v;
        self.w_o = w_o;
    }
}

impl<T: Scalar> Parameterized<T> for AttentionBlock<T> {
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, T>> {
        let d = self.model_dim;
        let names = ["w_q", "w_k", "w_v", "w_o"];
        let pairs = [
            (&mut self.w_q, &mut self.g_q),
            (&mut self.w_k, &mut self.g_k),
            (&mut self.w_v, &mut self.g_v),
            (&mut self.w_o, &mut self.g_o),
        ];
        pairs
            .into_iter()
            .zip(names)
            .map(|((w, g), name)| ParamBlockMut {
                name: name.into(),
                dims: vec![d, d],
                value: w.data_mut(),
                grad: g.data_mut(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat<f64> {
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_row_reduces_to_value_and_output_projection() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        let block = AttentionBlock::<f64>::new(4, 2, false, &mut rng).unwrap();
        let x = random_mat(1, 4, &mut rng);

        let y = block.forward(&x).unwrap();
        let v = x.matmul_transb(&block.w_v);
        let expected = v.matmul_transb(&block.w_o);
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!(
                (a - b).abs() < 1e-12,
                "single-row attention must be v w_o^T"
            );
        }

        let mut res_block = block.clone();
        res_block.residual = true;
        let y_res = res_block.forward(&x).unwrap();
        for ((a, b), &xi) in y_res.data().iter().zip(expected.data()).zip(x.data()) {
            assert!((a - (b + xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(10);
        let block = AttentionBlock::<f64>::new(8, 4, true, &mut rng).unwrap();
        let x = random_mat(6, 8, &mut rng);
        let (_, cache) = block.forward_cached(&x).unwrap();
        for head in cache.attention_weights() {
            for r in 0..head.rows() {
                let s: f64 = head.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            }
        }
    }

    #[test]
    fn duplicated_rows_get_identical_outputs() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let block = AttentionBlock::<f64>::new(6, 3, true, &mut rng).unwrap();
        let row: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut data = row.clone();
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
        let x = Mat::from_vec(3, 6, data);
        let y = block.forward(&x).unwrap();
        for r in 1..3 {
            for c in 0..6 {
                assert!((y.get(0, c) - y.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(12);
        let mut block = AttentionBlock::<f64>::new(4, 1, false, &mut rng).unwrap();
        let big = 400.0;
        block.set_weights(
            Mat::from_fn(4, 4, |r, c| if r == c { big } else { 0.0 }),
            Mat::from_fn(4, 4, |r, c| if r == c { big } else { 0.0 }),
            random_mat(4, 4, &mut rng),
            random_mat(4, 4, &mut rng),
        );
        let x = random_mat(5, 4, &mut rng);
        let y = block.forward(&x).unwrap();
        assert!(y.is_finite(), "softmax must survive huge score magnitudes");
    }

    #[test]
    fn rejects_empty_input_and_bad_dims() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(13);
        assert!(matches!(
            AttentionBlock::<f32>::new(10, 4, true, &mut rng),
            Err(Error::BadConfig(_))
        ));
        let block = AttentionBlock::<f32>::new(8, 4, true, &mut rng).unwrap();
        assert!(matches!(
            block.forward(&Mat::zeros(0, 8)),
            Err(Error::EmptyMatrix)
        ));
        assert!(matches!(
            block.forward(&Mat::zeros(3, 7)),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
