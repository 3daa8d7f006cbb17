//! Max/average pooling over 2 or 3 trailing spatial(-temporal) axes.
//!
//! Conventions (pinned for reproducibility): average pooling divides by
//! the full window size, counting zero padding; max pooling considers only
//! in-bounds elements (padding behaves as negative infinity). Ties in max
//! pooling resolve to the first element in scan order.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub window: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl PoolSpec {
    pub fn new(mode: PoolMode, window: &[usize], stride: &[usize], padding: &[usize]) -> Self {
        PoolSpec {
            mode,
            window: window.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
        }
    }

    pub fn spatial_rank(&self) -> usize {
        self.window.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.window.len();
        if r != 2 && r != 3 {
            return Err(Error::config(format!(
                "pooling must have 2 or 3 spatial axes, got {r}"
            )));
        }
        if self.stride.len() != r || self.padding.len() != r {
            return Err(Error::config("window/stride/padding rank mismatch"));
        }
        if self.window.iter().any(|&k| k == 0) || self.stride.iter().any(|&s| s == 0) {
            return Err(Error::config("window extents and strides must be > 0"));
        }
        for (axis, (&k, &p)) in self.window.iter().zip(&self.padding).enumerate() {
            if 2 * p >= k {
                return Err(Error::config(format!(
                    "axis {axis}: padding {p} must be less than half the window {k}"
                )));
            }
        }
        Ok(())
    }
}

pub fn pool_output_shape(spec: &PoolSpec, in_spatial: &[usize]) -> Result<Vec<usize>> {
    spec.validate()?;
    if in_spatial.len() != spec.spatial_rank() {
        return Err(Error::shape(format!(
            "input has {} spatial axes, spec expects {}",
            in_spatial.len(),
            spec.spatial_rank()
        )));
    }
    let mut out = Vec::with_capacity(in_spatial.len());
    for (axis, &n) in in_spatial.iter().enumerate() {
        let padded = n + 2 * spec.padding[axis];
        if spec.window[axis] > padded {
            return Err(Error::config(format!(
                "axis {axis}: window {} larger than padded extent {padded}",
                spec.window[axis]
            )));
        }
        out.push((padded - spec.window[axis]) / spec.stride[axis] + 1);
    }
    Ok(out)
}

fn advance(idx: &mut [usize], dims: &[usize]) -> bool {
    for ax in (0..dims.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < dims[ax] {
            return true;
        }
        idx[ax] = 0;
    }
    false
}

fn spatial_offset(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Visits each output position of one `(batch, channel)` plane, handing
/// the callback the flat output offset and the in-bounds window offsets.
fn for_each_window(
    in_sp: &[usize],
    out_sp: &[usize],
    spec: &PoolSpec,
    mut visit: impl FnMut(usize, &[usize]),
) {
    let rank = in_sp.len();
    let mut out_idx = vec![0usize; rank];
    let mut taps: Vec<usize> = Vec::with_capacity(spec.window.iter().product());
    loop {
        taps.clear();
        let mut win_idx = vec![0usize; rank];
        loop {
            let mut inside = true;
            let mut off = 0;
            for ax in 0..rank {
                let raw = (out_idx[ax] * spec.stride[ax] + win_idx[ax]) as isize
                    - spec.padding[ax] as isize;
                if raw < 0 || raw >= in_sp[ax] as isize {
                    inside = false;
                    break;
                }
                off = off * in_sp[ax] + raw as usize;
            }
            if inside {
                taps.push(off);
            }
            if !advance(&mut win_idx, &spec.window) {
                break;
            }
        }
        visit(spatial_offset(&out_idx, out_sp), &taps);
        if !advance(&mut out_idx, out_sp) {
            break;
        }
    }
}

fn check_input<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    if input.rank() != spec.spatial_rank() + 2 {
        return Err(Error::shape(format!(
            "input rank {} (shape {:?}), pooling expects {}",
            input.rank(),
            input.shape(),
            spec.spatial_rank() + 2
        )));
    }
    Ok((input.shape()[0], input.shape()[1]))
}

/// Pools `[B,C,spatial...]` to `[B,C,spatial'...]`.
pub fn pool<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let (b_n, c_n) = check_input(input, spec)?;
    let in_sp = input.shape()[2..].to_vec();
    let out_sp = pool_output_shape(spec, &in_sp)?;
    let in_plane: usize = in_sp.iter().product();
    let out_plane: usize = out_sp.iter().product();
    let window_size = T::from_f64(spec.window.iter().product::<usize>() as f64);

    let mut out_shape = vec![b_n, c_n];
    out_shape.extend_from_slice(&out_sp);
    let mut out = Tensor::zeros(&out_shape);

    for plane in 0..b_n * c_n {
        let x = &input.data()[plane * in_plane..(plane + 1) * in_plane];
        let y = &mut out.data_mut()[plane * out_plane..(plane + 1) * out_plane];
        for_each_window(&in_sp, &out_sp, spec, |out_off, taps| {
            y[out_off] = match spec.mode {
                PoolMode::Max => taps
                    .iter()
                    .map(|&t| x[t])
                    .fold(T::neg_infinity(), |m, v| m.max(v)),
                PoolMode::Avg => {
                    taps.iter().fold(T::zero(), |acc, &t| acc + x[t]) / window_size
                }
            };
        });
    }
    Ok(out)
}

/// Gradient of [`pool`] with respect to its input.
pub fn pool_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &PoolSpec,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b_n, c_n) = check_input(input, spec)?;
    let in_sp = input.shape()[2..].to_vec();
    let out_sp = pool_output_shape(spec, &in_sp)?;
    let mut expect = vec![b_n, c_n];
    expect.extend_from_slice(&out_sp);
    if grad_out.shape() != expect.as_slice() {
        return Err(Error::shape(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            expect
        )));
    }
    let in_plane: usize = in_sp.iter().product();
    let out_plane: usize = out_sp.iter().product();
    let window_size = T::from_f64(spec.window.iter().product::<usize>() as f64);

    let mut grad_in = Tensor::zeros(input.shape());
    for plane in 0..b_n * c_n {
        let x = &input.data()[plane * in_plane..(plane + 1) * in_plane];
        let go = &grad_out.data()[plane * out_plane..(plane + 1) * out_plane];
        let gi = &mut grad_in.data_mut()[plane * in_plane..(plane + 1) * in_plane];
        for_each_window(&in_sp, &out_sp, spec, |out_off, taps| match spec.mode {
            PoolMode::Max => {
                // First maximum in scan order, matching the forward value.
                let mut best = usize::MAX;
                let mut best_v = T::neg_infinity();
                for &t in taps {
                    if x[t] > best_v {
                        best_v = x[t];
                        best = t;
                    }
                }
                if best != usize::MAX {
                    gi[best] += go[out_off];
                }
            }
            PoolMode::Avg => {
                let share = go[out_off] / window_size;
                for &t in taps {
                    gi[t] += share;
                }
            }
        });
    }
    Ok(grad_in)
}
