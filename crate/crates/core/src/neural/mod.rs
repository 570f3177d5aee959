//! Hand-written neural kernels: linear layers, multi-head self-attention,
//! losses, Adam, and the finite-difference gradient checker that keeps the
//! backward passes honest.

pub mod attention;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod optim;
pub mod params;

pub use attention::{AttentionBlock, AttentionCache};
pub use gradcheck::{check_gradients, GradCheckReport, DEFAULT_EPSILON};
pub use linear::LinearLayer;
pub use loss::{class_weights, mae_loss, mtl_loss, weighted_cross_entropy, LossGrad};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use params::{ParamBlockMut, Parameterized};

use crate::mat::Scalar;

/// In-place softmax with row-max subtraction.
pub(crate) fn stable_softmax_row<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let m = row.iter().cloned().fold(row[0], T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}
