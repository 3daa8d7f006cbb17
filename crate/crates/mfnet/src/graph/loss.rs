//! Fused softmax + cross-entropy, the canonical classification loss.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[B,K]` logits with max-subtraction.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!(
            "softmax expects [B,K] logits, got {:?}",
            logits.shape()
        )));
    }
    let (b_n, k_n) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(&[b_n, k_n]);
    for b in 0..b_n {
        let row = &logits.data()[b * k_n..(b + 1) * k_n];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut denom = T::zero();
        for k in 0..k_n {
            let e = (row[k] - max).exp();
            out.data_mut()[b * k_n + k] = e;
            denom += e;
        }
        for k in 0..k_n {
            out.data_mut()[b * k_n + k] /= denom;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let (b_n, k_n) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b_n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {b_n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k_n) {
        return Err(Error::config(format!("label {bad} out of range for {k_n} classes")));
    }
    let probs = softmax_rows(logits)?;
    let inv_b = T::from_f64(1.0 / b_n as f64);
    let mut loss = 0.0f64;
    let mut grad = probs.clone();
    for (b, &label) in labels.iter().enumerate() {
        let p = probs.data()[b * k_n + label].to_f64();
        loss -= p.max(f64::MIN_POSITIVE).ln();
        grad.data_mut()[b * k_n + label] -= T::one();
    }
    for v in grad.data_mut() {
        *v *= inv_b;
    }
    Ok((loss / b_n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let logits = Tensor::filled(&[2, 4], 3.0);
        let p = softmax_rows(&logits).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25f64).abs() < 1e-15));
    }

    #[test]
    fn loss_of_confident_correct_prediction_is_small() {
        let logits = Tensor::from_vec(&[1, 3], vec![10.0, -5.0, -5.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-5, "loss {loss}");
        assert!(grad.data()[0] < 0.0 && grad.data()[1] > 0.0);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::from_vec(&[2, 3], vec![0.1, 0.2, -0.4, 2.0, -1.0, 0.3]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for b in 0..2 {
            let s: f64 = grad.data()[b * 3..(b + 1) * 3].iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range_is_config_error() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn max_subtraction_keeps_huge_logits_finite() {
        let logits = Tensor::from_vec(&[1, 2], vec![1e4, -1e4]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.all_finite());
    }
}
