//! Batch normalization over the channel axis (axis 1).
//!
//! Training mode normalizes by per-channel batch statistics with *biased*
//! variance (divide by count) and updates running statistics as
//! `running <- momentum * running + (1 - momentum) * batch`. Inference
//! mode reads the running statistics only.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-channel statistics retained from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Scalar> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Elements per channel (batch x spatial positions).
    pub count: usize,
}

pub struct BnGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn check_args<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Result<(usize, usize, usize)> {
    if eps <= 0.0 {
        return Err(Error::config(format!("batch-norm eps must be > 0, got {eps}")));
    }
    if input.rank() < 2 {
        return Err(Error::shape(format!(
            "batch-norm input must be [B,C,...], got {:?}",
            input.shape()
        )));
    }
    let channels = input.shape()[1];
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running mean", mean.len()),
        ("running var", var.len()),
    ] {
        if len != channels {
            return Err(Error::shape(format!(
                "{name} has {len} entries for {channels} channels"
            )));
        }
    }
    let batch = input.shape()[0];
    let plane: usize = input.shape()[2..].iter().product();
    Ok((batch, channels, plane))
}

/// Training-mode forward pass; updates `running_mean`/`running_var` in
/// place and returns the cache needed by [`batch_norm_backward`].
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    eps: f64,
    momentum: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (batch, channels, plane) = check_args(
        input,
        gamma,
        beta,
        running_mean.data(),
        running_var.data(),
        eps,
    )?;
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::config(format!(
            "batch-norm momentum must lie in [0,1], got {momentum}"
        )));
    }
    let count = batch * plane;
    if count == 0 {
        return Err(Error::shape("batch-norm over an empty batch"));
    }
    let count_t = T::from_f64(count as f64);
    let eps_t = T::from_f64(eps);
    let mom = T::from_f64(momentum);

    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    let x = input.data();
    for c in 0..channels {
        let mut sum = T::zero();
        for b in 0..batch {
            let base = (b * channels + c) * plane;
            for i in 0..plane {
                sum += x[base + i];
            }
        }
        let mu = sum / count_t;
        let mut sq = T::zero();
        for b in 0..batch {
            let base = (b * channels + c) * plane;
            for i in 0..plane {
                let d = x[base + i] - mu;
                sq += d * d;
            }
        }
        mean[c] = mu;
        var[c] = sq / count_t;
    }

    for c in 0..channels {
        let rm = running_mean.data_mut();
        rm[c] = mom * rm[c] + (T::one() - mom) * mean[c];
        let rv = running_var.data_mut();
        rv[c] = mom * rv[c] + (T::one() - mom) * var[c];
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let mut out = Tensor::zeros(input.shape());
    let y = out.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * plane;
            let (g, bt, mu, is) = (gamma.data()[c], beta.data()[c], mean[c], inv_std[c]);
            for i in 0..plane {
                y[base + i] = g * (x[base + i] - mu) * is + bt;
            }
        }
    }
    Ok((out, BnCache { mean, inv_std, count }))
}

/// Inference-mode forward pass; reads running statistics, mutates nothing.
pub fn batch_norm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (batch, channels, plane) = check_args(
        input,
        gamma,
        beta,
        running_mean.data(),
        running_var.data(),
        eps,
    )?;
    let eps_t = T::from_f64(eps);
    let mut out = Tensor::zeros(input.shape());
    let x = input.data();
    let y = out.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * plane;
            let is = T::one() / (running_var.data()[c] + eps_t).sqrt();
            let (g, bt, mu) = (gamma.data()[c], beta.data()[c], running_mean.data()[c]);
            for i in 0..plane {
                y[base + i] = g * (x[base + i] - mu) * is + bt;
            }
        }
    }
    Ok(out)
}

/// Full analytic training-mode backward pass, differentiating through the
/// batch statistics.
pub fn batch_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape(format!(
            "grad_out shape {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let batch = input.shape()[0];
    let channels = input.shape()[1];
    let plane: usize = input.shape()[2..].iter().product();
    let count_t = T::from_f64(cache.count as f64);

    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_gamma = Tensor::zeros(&[channels]);
    let mut grad_beta = Tensor::zeros(&[channels]);
    let x = input.data();
    let go = grad_out.data();

    for c in 0..channels {
        let (mu, is, g) = (cache.mean[c], cache.inv_std[c], gamma.data()[c]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..batch {
            let base = (b * channels + c) * plane;
            for i in 0..plane {
                let dy = go[base + i];
                sum_dy += dy;
                sum_dy_xhat += dy * (x[base + i] - mu) * is;
            }
        }
        grad_beta.data_mut()[c] = sum_dy;
        grad_gamma.data_mut()[c] = sum_dy_xhat;

        let mean_dy = sum_dy / count_t;
        let mean_dy_xhat = sum_dy_xhat / count_t;
        let scale = g * is;
        for b in 0..batch {
            let base = (b * channels + c) * plane;
            for i in 0..plane {
                let xhat = (x[base + i] - mu) * is;
                grad_in.data_mut()[base + i] =
                    scale * (go[base + i] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
    Ok(BnGrads {
        input: grad_in,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_with_unit_stats_is_near_identity() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let gamma = Tensor::filled(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let rm = Tensor::zeros(&[2]);
        let rv = Tensor::filled(&[2], 1.0);
        let eps = 1e-12;
        let y = batch_norm_infer(&x, &gamma, &beta, &rm, &rv, eps).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn train_mode_normalizes_a_two_sample_channel() {
        // Batch {1, 3}: mean 2, biased variance 1.
        let eps = 1e-5;
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::filled(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::filled(&[1], 1.0);
        let (y, cache) =
            batch_norm_train(&x, &gamma, &beta, &mut rm, &mut rv, eps, 0.9).unwrap();
        let expect = 1.0 / (1.0f64 + eps).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-14);
        assert!((y.data()[1] - expect).abs() < 1e-14);
        assert_eq!(cache.count, 2);
        // running <- 0.9 * old + 0.1 * batch
        assert!((rm.data()[0] - 0.2).abs() < 1e-14);
        assert!((rv.data()[0] - (0.9 + 0.1)).abs() < 1e-14);
    }

    #[test]
    fn train_output_has_zero_mean_unit_variance() {
        let mut state = 7u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / (1u64 << 31) as f64 * 4.0 - 2.0
        };
        let eps = 1e-5;
        let x = Tensor::from_vec(&[4, 3, 5, 5], (0..300).map(|_| next()).collect()).unwrap();
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::filled(&[3], 1.0);
        let (y, _) = batch_norm_train(&x, &gamma, &beta, &mut rm, &mut rv, eps, 0.9).unwrap();
        for c in 0..3 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut n = 0.0;
            for b in 0..4 {
                for i in 0..25 {
                    let v = y.data()[(b * 3 + c) * 25 + i];
                    sum += v;
                    sq += v * v;
                    n += 1.0;
                }
            }
            let mean = sum / n;
            let var = sq / n - mean * mean;
            assert!(mean.abs() <= 1e-10, "channel {c} mean {mean}");
            // variance of the normalized output is var/(var+eps)
            assert!((var - 1.0).abs() <= 1e-4, "channel {c} var {var}");
        }
    }

    #[test]
    fn channel_mismatch_and_bad_eps_error() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        let gamma = Tensor::filled(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let rm = Tensor::zeros(&[3]);
        let rv = Tensor::filled(&[3], 1.0);
        assert!(matches!(
            batch_norm_infer(&x, &gamma, &beta, &rm, &rv, 1e-5),
            Err(Error::Shape(_))
        ));
        let gamma2 = Tensor::filled(&[2], 1.0);
        let beta2 = Tensor::zeros(&[2]);
        let rm2 = Tensor::zeros(&[2]);
        let rv2 = Tensor::filled(&[2], 1.0);
        assert!(matches!(
            batch_norm_infer(&x, &gamma2, &beta2, &rm2, &rv2, 0.0),
            Err(Error::Config(_))
        ));
    }
}
