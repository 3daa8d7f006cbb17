//! Central-difference verification of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences of `f` at `x`.
///
/// `f` must evaluate to a scalar (single-element) tensor. Returns the
/// maximum over coordinates of
/// `|analytic - central| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(
    mut f: F,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    step: f64,
) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    if analytic.shape() != x.shape() {
        return Err(Error::contract(format!(
            "analytic gradient shape {:?} does not match point shape {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    if step <= 0.0 {
        return Err(Error::config(format!("step must be > 0, got {step}")));
    }
    let eval_scalar = |f: &mut F, x: &Tensor<f64>| -> Result<f64> {
        let out = f(x)?;
        if out.len() != 1 {
            return Err(Error::contract(format!(
                "finite_difference_check requires a scalar function, got shape {:?}",
                out.shape()
            )));
        }
        Ok(out.data()[0])
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval_scalar(&mut f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval_scalar(&mut f, &probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_is_all_ones() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -1.2, 2.0, 0.0, 4.0, -0.5]).unwrap();
        let ones = Tensor::filled(&[2, 3], 1.0);
        let err = finite_difference_check(
            |t| Ok(Tensor::scalar(t.sum())),
            &x,
            &ones,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-9, "error {err}");
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let zeros = Tensor::zeros(&[3]);
        let err =
            finite_difference_check(|_| Ok(Tensor::scalar(7.5)), &x, &zeros, 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_function_is_contract_error() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let err = finite_difference_check(|t| Ok(t.clone()), &x, &g, 1e-4).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
