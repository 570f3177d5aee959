//! Classification and regression losses with analytic gradients.

use crate::error::{Error, Result};
use crate::mat::{Mat, Scalar};

/// Inverse-frequency class weights: w_c = N / (K * n_c).
/// A balanced distribution gives every class weight exactly 1.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::BadConfig(
            "class_weights needs at least one class".into(),
        ));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len();
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(Error::EmptyClass(c))
            } else {
                Ok(total as f64 / (k as f64 * n as f64))
            }
        })
        .collect()
}

/// Loss value plus the gradient with respect to the logits.
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Mat<T>,
}

/// Softmax cross-entropy where sample i is weighted by weights[labels[i]]
/// and the batch is normalized by the sum of the active weights, so uniform
/// weights reduce exactly to the plain mean cross-entropy.
pub fn weighted_cross_entropy<T: Scalar>(
    logits: &Mat<T>,
    labels: &[usize],
    weights: &[T],
) -> Result<LossGrad<T>> {
    let (n, k) = (logits.rows(), logits.cols());
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "weighted_cross_entropy",
            detail: format!("{} logit rows but {} labels", n, labels.len()),
        });
    }
    if weights.len() != k {
        return Err(Error::ShapeMismatch {
            op: "weighted_cross_entropy",
            detail: format!("{} classes but {} weights", k, weights.len()),
        });
    }
    for &w in weights {
        // The finiteness test runs first so NaN weights are caught too.
        if !w.is_finite() || w <= T::zero() {
            return Err(Error::NonPositiveWeight(w.to_f64().unwrap_or(f64::NAN)));
        }
    }
    for &label in labels {
        if label >= k {
            return Err(Error::BadLabel { label, classes: k });
        }
    }

    let weight_sum = labels.iter().fold(T::zero(), |acc, &y| acc + weights[y]);

    let mut grad = Mat::zeros(n, k);
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let w = weights[y] / weight_sum;

        // -log p_y via log-sum-exp so huge logits never overflow.
        let m = row.iter().cloned().fold(row[0], T::max);
        let mut z = T::zero();
        for &v in row {
            z += (v - m).exp();
        }
        loss -= w * (row[y] - m - z.ln());

        let grad_row = grad.row_mut(i);
        for (g, &v) in grad_row.iter_mut().zip(row) {
            *g = w * ((v - m).exp() / z);
        }
        grad_row[y] -= w;
    }

    Ok(LossGrad { loss, grad })
}

/// Mean absolute error over paired predictions and targets. The gradient at
/// an exact tie is zero.
pub fn mae_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "mae_loss",
            detail: format!("{} predictions vs {} targets", pred.len(), target.len()),
        });
    }
    let n = T::from_f64_lossy(pred.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let diff = p - t;
        loss += diff.abs();
        grad.push(if diff > T::zero() {
            T::one() / n
        } else if diff < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        });
    }
    Ok((loss / n, grad))
}

/// Total multi-task objective: alpha * discrete + beta * valence + gamma * arousal.
pub fn mtl_loss<T: Scalar>(discrete: T, valence: T, arousal: T, alpha: T, beta: T, gamma: T) -> T {
    alpha * discrete + beta * valence + gamma * arousal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_counts_give_unit_weights() {
        let w = class_weights(&[250, 250, 250, 250]).unwrap();
        for x in w {
            assert!((x - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn minority_classes_weigh_more() {
        let w = class_weights(&[100, 400]).unwrap();
        // 500/(2*100) and 500/(2*400)
        assert!((w[0] - 2.5).abs() < 1e-15);
        assert!((w[1] - 0.625).abs() < 1e-15);
        assert!(w[0] > w[1]);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(matches!(
            class_weights(&[5, 0, 3]),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let logits = Mat::<f64>::zeros(3, 4);
        let out = weighted_cross_entropy(&logits, &[0, 1, 2], &[1.0; 4]).unwrap();
        assert!((out.loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_match_plain_mean_ce() {
        let logits = Mat::from_vec(2, 3, vec![2.0, -1.0, 0.5, 0.1, 0.2, -0.3]);
        let weighted = weighted_cross_entropy(&logits, &[0, 2], &[1.0; 3]).unwrap();

        // Plain mean cross-entropy computed longhand.
        let mut plain = 0.0;
        for (i, &y) in [0usize, 2].iter().enumerate() {
            let row = logits.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            plain += -(row[y] - m - z.ln());
        }
        plain /= 2.0;
        assert!((weighted.loss - plain).abs() < 1e-12);
    }

    #[test]
    fn class_weighting_equals_sample_duplication() {
        // Weighting class 0 by 2 must equal duplicating its sample once.
        let logits2 = Mat::<f64>::from_vec(2, 2, vec![0.7, -0.4, -1.1, 0.9]);
        let weighted = weighted_cross_entropy(&logits2, &[0, 1], &[2.0, 1.0]).unwrap();

        let logits3 = Mat::from_vec(3, 2, vec![0.7, -0.4, 0.7, -0.4, -1.1, 0.9]);
        let duplicated = weighted_cross_entropy(&logits3, &[0, 0, 1], &[1.0, 1.0]).unwrap();

        assert!(
            (weighted.loss - duplicated.loss).abs() < 1e-6,
            "{} vs {}",
            weighted.loss,
            duplicated.loss
        );
    }

    #[test]
    fn ce_grad_rows_sum_to_zero() {
        let logits = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, -0.5, 0.0, 0.5]);
        let out = weighted_cross_entropy(&logits, &[2, 0], &[1.5, 1.0, 0.5]).unwrap();
        for r in 0..2 {
            let s: f64 = out.grad.row(r).iter().sum();
            assert!(s.abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn ce_rejects_bad_labels_and_weights() {
        let logits = Mat::<f64>::zeros(2, 3);
        assert!(matches!(
            weighted_cross_entropy(&logits, &[0, 3], &[1.0; 3]),
            Err(Error::BadLabel {
                label: 3,
                classes: 3
            })
        ));
        assert!(matches!(
            weighted_cross_entropy(&logits, &[0, 1], &[1.0, 0.0, 1.0]),
            Err(Error::NonPositiveWeight(_))
        ));
        assert!(matches!(
            weighted_cross_entropy(&logits, &[0], &[1.0; 3]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = Mat::<f64>::from_vec(1, 3, vec![1e4, -1e4, 0.0]);
        let out = weighted_cross_entropy(&logits, &[1], &[1.0; 3]).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad.is_finite());
    }

    #[test]
    fn mae_matches_hand_value_and_sign_grad() {
        let (loss, grad) = mae_loss::<f64>(&[1.0, 2.0, 5.0], &[1.5, 2.0, 3.0]).unwrap();
        assert!((loss - (0.5 + 0.0 + 2.0) / 3.0).abs() < 1e-12);
        assert_eq!(grad[0], -1.0 / 3.0);
        assert_eq!(grad[1], 0.0, "tie gradient must be zero");
        assert_eq!(grad[2], 1.0 / 3.0);
    }

    #[test]
    fn mtl_combines_with_fixed_coefficients() {
        let total = mtl_loss::<f64>(2.0, 1.0, 0.5, 0.5, 0.25, 0.25);
        assert!((total - (1.0 + 0.25 + 0.125)).abs() < 1e-12);
    }
}
