//! Uniform access to named parameter blocks.
//!
//! The optimizer, the gradient checker, and the checkpoint writer all walk
//! the same ordered list of (name, shape, values, grads) views, so parameter
//! order is fixed by construction and never depends on hashing.

use crate::mat::Scalar;

/// Mutable view over one parameter tensor and its gradient accumulator.
pub struct ParamBlockMut<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

/// Anything holding trainable parameters.
pub trait Parameterized<T: Scalar> {
    /// Blocks in a stable, documented order.
    fn param_blocks(&mut self) -> Vec<ParamBlockMut<'_, T>>;

    fn zero_grad(&mut self) {
        for block in self.param_blocks() {
            block.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    fn param_count(&mut self) -> usize {
        self.param_blocks().iter().map(|b| b.value.len()).sum()
    }
}

/// Prepends `prefix.` to every block name; used by composite models.
pub fn with_prefix<'a, T>(
    prefix: &str,
    blocks: Vec<ParamBlockMut<'a, T>>,
) -> Vec<ParamBlockMut<'a, T>> {
    blocks
        .into_iter()
        .map(|mut b| {
            b.name = format!("{prefix}.{}", b.name);
            b
        })
        .collect()
}
