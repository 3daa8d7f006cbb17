//! Brute-force oracles, independent of the library kernels: inputs are
//! materialized into explicitly padded buffers first, then reduced with
//! plain nested loops. Shared across the integration test targets.

#![allow(dead_code)]

use mfnet::tensor::{PaddingMode, PoolMode, Tensor};

/// Explicitly padded copy of one `[H,W]` plane.
fn pad2d(x: &[f64], h: usize, w: usize, ph: usize, pw: usize, fill: f64) -> (Vec<f64>, usize, usize) {
    let (hh, ww) = (h + 2 * ph, w + 2 * pw);
    let mut out = vec![fill; hh * ww];
    for i in 0..h {
        for j in 0..w {
            out[(i + ph) * ww + (j + pw)] = x[i * w + j];
        }
    }
    (out, hh, ww)
}

/// Explicitly padded copy of one `[T,H,W]` volume; the temporal axis is
/// either zero-filled or clamp-replicated.
fn pad3d(
    x: &[f64],
    t: usize,
    h: usize,
    w: usize,
    pt: usize,
    ph: usize,
    pw: usize,
    fill: f64,
    replicate_t: bool,
) -> (Vec<f64>, usize, usize, usize) {
    let (tt, hh, ww) = (t + 2 * pt, h + 2 * ph, w + 2 * pw);
    let mut out = vec![fill; tt * hh * ww];
    for ti in 0..tt {
        let src_t = if replicate_t {
            Some((ti as isize - pt as isize).clamp(0, t as isize - 1) as usize)
        } else {
            let raw = ti as isize - pt as isize;
            (raw >= 0 && raw < t as isize).then_some(raw as usize)
        };
        let Some(st) = src_t else { continue };
        for i in 0..h {
            for j in 0..w {
                out[(ti * hh + i + ph) * ww + (j + pw)] = x[(st * h + i) * w + j];
            }
        }
    }
    (out, tt, hh, ww)
}

pub fn conv2d_oracle(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
) -> Tensor<f64> {
    let (b_n, c_n, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (o_n, cg, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let og = o_n / groups;
    let oh = (h + 2 * padding.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * padding.1 - kw) / stride.1 + 1;
    let mut out = Tensor::zeros(&[b_n, o_n, oh, ow]);
    for b in 0..b_n {
        let padded: Vec<(Vec<f64>, usize, usize)> = (0..c_n)
            .map(|c| {
                let plane = &input.data()[(b * c_n + c) * h * w..(b * c_n + c + 1) * h * w];
                pad2d(plane, h, w, padding.0, padding.1, 0.0)
            })
            .collect();
        for o in 0..o_n {
            let g = o / og;
            for yh in 0..oh {
                for yw in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for ci in 0..cg {
                        let (plane, _, ww) = &padded[g * cg + ci];
                        for dh in 0..kh {
                            for dw in 0..kw {
                                acc += plane[(yh * stride.0 + dh) * ww + yw * stride.1 + dw]
                                    * weight.data()[((o * cg + ci) * kh + dh) * kw + dw];
                            }
                        }
                    }
                    out.set(&[b, o, yh, yw], acc);
                }
            }
        }
    }
    out
}

pub fn conv3d_oracle(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: (usize, usize, usize),
    padding: (usize, usize, usize),
    groups: usize,
    mode: PaddingMode,
) -> Tensor<f64> {
    let sh = input.shape();
    let (b_n, c_n, t, h, w) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
    let ws = weight.shape();
    let (o_n, cg, kt, kh, kw) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
    let og = o_n / groups;
    let ot = (t + 2 * padding.0 - kt) / stride.0 + 1;
    let oh = (h + 2 * padding.1 - kh) / stride.1 + 1;
    let ow = (w + 2 * padding.2 - kw) / stride.2 + 1;
    let replicate = mode == PaddingMode::Replicate;
    let mut out = Tensor::zeros(&[b_n, o_n, ot, oh, ow]);
    let vol = t * h * w;
    for b in 0..b_n {
        let padded: Vec<(Vec<f64>, usize, usize, usize)> = (0..c_n)
            .map(|c| {
                let v = &input.data()[(b * c_n + c) * vol..(b * c_n + c + 1) * vol];
                pad3d(v, t, h, w, padding.0, padding.1, padding.2, 0.0, replicate)
            })
            .collect();
        for o in 0..o_n {
            let g = o / og;
            for yt in 0..ot {
                for yh in 0..oh {
                    for yw in 0..ow {
                        let mut acc = bias.map_or(0.0, |b| b[o]);
                        for ci in 0..cg {
                            let (volume, _, hh, ww) = &padded[g * cg + ci];
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let ti = yt * stride.0 + dt;
                                        let hi = yh * stride.1 + dh;
                                        let wi = yw * stride.2 + dw;
                                        acc += volume[(ti * hh + hi) * ww + wi]
                                            * weight.data()
                                                [(((o * cg + ci) * kt + dt) * kh + dh) * kw + dw];
                                    }
                                }
                            }
                        }
                        out.set(&[b, o, yt, yh, yw], acc);
                    }
                }
            }
        }
    }
    out
}

pub fn pool2d_oracle(
    input: &Tensor<f64>,
    mode: PoolMode,
    window: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Tensor<f64> {
    let (b_n, c_n, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let oh = (h + 2 * padding.0 - window.0) / stride.0 + 1;
    let ow = (w + 2 * padding.1 - window.1) / stride.1 + 1;
    let fill = match mode {
        PoolMode::Max => f64::NEG_INFINITY,
        PoolMode::Avg => 0.0,
    };
    let mut out = Tensor::zeros(&[b_n, c_n, oh, ow]);
    for bc in 0..b_n * c_n {
        let plane = &input.data()[bc * h * w..(bc + 1) * h * w];
        let (padded, _, ww) = pad2d(plane, h, w, padding.0, padding.1, fill);
        for yh in 0..oh {
            for yw in 0..ow {
                let mut m = f64::NEG_INFINITY;
                let mut s = 0.0;
                for dh in 0..window.0 {
                    for dw in 0..window.1 {
                        let v = padded[(yh * stride.0 + dh) * ww + yw * stride.1 + dw];
                        m = m.max(v);
                        s += v;
                    }
                }
                let value = match mode {
                    PoolMode::Max => m,
                    PoolMode::Avg => s / (window.0 * window.1) as f64,
                };
                out.data_mut()[(bc * oh + yh) * ow + yw] = value;
            }
        }
    }
    out
}

pub fn matmul_oracle(a: &Tensor<f64>, b_t: &Tensor<f64>, bias: Option<&[f64]>) -> Tensor<f64> {
    // a: [M,K], b_t: [N,K] (row-major weight layout), result [M,N]
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b_t.shape()[0];
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = bias.map_or(0.0, |b| b[j]);
            for p in 0..k {
                acc += a.data()[i * k + p] * b_t.data()[j * k + p];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    out
}

/// Small deterministic value stream for test data.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        // splitmix64
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    pub fn value(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo + 1)
    }

    pub fn tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.value()).collect();
        Tensor::from_vec(shape, data).expect("consistent shape")
    }
}
