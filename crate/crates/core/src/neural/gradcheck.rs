//! Central finite-difference verification of analytic gradients.
//!
//! Runs in f64: perturb one parameter at a time by +/- epsilon, difference
//! the loss, and compare against the backward pass.

use crate::error::{Error, Result};
use crate::neural::params::Parameterized;

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_error: f64,
    pub params: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative error with a small absolute stabilizer, so exactly-zero
/// gradients compared against finite-difference noise do not blow up.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Checks every parameter of `model`.
///
/// `compute_grads` must zero the accumulators, run forward and backward on a
/// fixed input, and return the loss. `loss_only` must run the same forward
/// and return the loss without touching gradients. Both see the model with
/// whatever parameter perturbation is currently applied.
pub fn check_gradients<M, G, L>(
    model: &mut M,
    mut compute_grads: G,
    mut loss_only: L,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    G: FnMut(&mut M) -> Result<f64>,
    L: FnMut(&mut M) -> Result<f64>,
{
    compute_grads(model)?;

    let analytic: Vec<(String, Vec<f64>)> = model
        .param_blocks()
        .iter()
        .map(|b| (b.name.clone(), b.grad.to_vec()))
        .collect();
    for (name, grads) in &analytic {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }

    let mut blocks = Vec::with_capacity(analytic.len());
    let mut overall: f64 = 0.0;
    for (block_idx, (name, grads)) in analytic.iter().enumerate() {
        let mut block_max: f64 = 0.0;
        for (i, &analytic_grad) in grads.iter().enumerate() {
            let original = model.param_blocks()[block_idx].value[i];

            model.param_blocks()[block_idx].value[i] = original + epsilon;
            let loss_plus = loss_only(model)?;
            model.param_blocks()[block_idx].value[i] = original - epsilon;
            let loss_minus = loss_only(model)?;
            model.param_blocks()[block_idx].value[i] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient(format!(
                    "{name}[{i}] (finite difference)"
                )));
            }
            block_max = block_max.max(relative_error(analytic_grad, numeric));
        }
        overall = overall.max(block_max);
        blocks.push(BlockReport {
            name: name.clone(),
            max_rel_error: block_max,
            params: grads.len(),
        });
    }

    Ok(GradCheckReport {
        blocks,
        max_rel_error: overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::neural::linear::LinearLayer;
    use crate::neural::loss::weighted_cross_entropy;
    use crate::neural::params::ParamBlockMut;
    use rand::SeedableRng;

    struct TinyNet {
        layer: LinearLayer<f64>,
        input: Mat<f64>,
        labels: Vec<usize>,
        weights: Vec<f64>,
    }

    impl Parameterized<f64> for TinyNet {
        fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, f64>> {
            self.layer.param_blocks()
        }
    }

    fn loss_of(net: &mut TinyNet) -> crate::error::Result<f64> {
        let logits = net.layer.forward(&net.input)?;
        Ok(weighted_cross_entropy(&logits, &net.labels, &net.weights)?.loss)
    }

    fn grads_of(net: &mut TinyNet) -> crate::error::Result<f64> {
        net.zero_grad();
        let logits = net.layer.forward(&net.input)?;
        let out = weighted_cross_entropy(&logits, &net.labels, &net.weights)?;
        net.layer.backward(&net.input.clone(), &out.grad)?;
        Ok(out.loss)
    }

    #[test]
    fn linear_plus_ce_passes() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let mut net = TinyNet {
            layer: LinearLayer::new(5, 3, &mut rng),
            input: Mat::from_fn(4, 5, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0)),
            labels: vec![0, 2, 1, 2],
            weights: vec![1.3, 0.8, 0.9],
        };
        let report = check_gradients(&mut net, grads_of, loss_of, DEFAULT_EPSILON).unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(22);
        let mut net = TinyNet {
            layer: LinearLayer::new(4, 2, &mut rng),
            input: Mat::from_fn(3, 4, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0)),
            labels: vec![0, 1, 0],
            weights: vec![1.0, 1.0],
        };
        let bad_grads = |net: &mut TinyNet| -> crate::error::Result<f64> {
            let loss = grads_of(net)?;
            for block in net.param_blocks() {
                for g in block.grad.iter_mut() {
                    *g = -*g; // sign flip: a wrong backward pass
                }
            }
            Ok(loss)
        };
        let report = check_gradients(&mut net, bad_grads, loss_of, DEFAULT_EPSILON).unwrap();
        assert!(
            report.max_rel_error > 1e-1,
            "negative control slipped through: {}",
            report.max_rel_error
        );
    }
}
