//! Affine map: exact matrix product plus bias.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `[B,C] x [K,C]^T + [K] -> [B,K]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if input.rank() != 2 || weight.rank() != 2 {
        return Err(Error::shape(format!(
            "linear expects [B,C] and [K,C], got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    let (b_n, c_n) = (input.shape()[0], input.shape()[1]);
    let (k_n, cw) = (weight.shape()[0], weight.shape()[1]);
    if cw != c_n {
        return Err(Error::shape(format!(
            "linear inner dimensions differ: input {c_n} vs weight {cw}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [k_n] {
            return Err(Error::shape(format!(
                "bias shape {:?}, expected [{k_n}]",
                b.shape()
            )));
        }
    }
    let mut out = Tensor::zeros(&[b_n, k_n]);
    let x = input.data();
    let w = weight.data();
    let y = out.data_mut();
    for b in 0..b_n {
        for k in 0..k_n {
            let mut acc = bias.map_or(T::zero(), |t| t.data()[k]);
            let xr = b * c_n;
            let wr = k * c_n;
            for c in 0..c_n {
                acc += x[xr + c] * w[wr + c];
            }
            y[b * k_n + k] = acc;
        }
    }
    Ok(out)
}

pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_bias: bool,
) -> Result<LinearGrads<T>> {
    let (b_n, c_n) = (input.shape()[0], input.shape()[1]);
    let k_n = weight.shape()[0];
    if grad_out.shape() != [b_n, k_n] {
        return Err(Error::shape(format!(
            "grad_out shape {:?}, expected [{b_n}, {k_n}]",
            grad_out.shape()
        )));
    }
    let mut gx = Tensor::zeros(&[b_n, c_n]);
    let mut gw = Tensor::zeros(&[k_n, c_n]);
    let mut gb = want_bias.then(|| Tensor::zeros(&[k_n]));
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    for b in 0..b_n {
        for k in 0..k_n {
            let g = go[b * k_n + k];
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[k] += g;
            }
            for c in 0..c_n {
                gx.data_mut()[b * c_n + c] += g * w[k * c_n + c];
                gw.data_mut()[k * c_n + c] += g * x[b * c_n + c];
            }
        }
    }
    Ok(LinearGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}
