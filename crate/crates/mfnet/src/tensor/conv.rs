//! Grouped 2D/3D convolution, exact direct-summation reference path.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// How out-of-range taps are treated.
///
/// `Zeros` pads every axis with zeros. `Replicate` clamps indices on the
/// temporal axis of a 3-axis convolution to the valid range (spatial axes
/// still zero-pad); for 2-axis convolutions it behaves exactly like
/// `Zeros`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingMode {
    Zeros,
    Replicate,
}

/// Geometry of a grouped convolution. `kernel`, `stride` and `padding`
/// have one entry per spatial(-temporal) axis: `[kh, kw]` or `[kt, kh, kw]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub padding_mode: PaddingMode,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: &[usize]) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: kernel.to_vec(),
            stride: vec![1; kernel.len()],
            padding: vec![0; kernel.len()],
            padding_mode: PaddingMode::Zeros,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: &[usize]) -> Self {
        self.stride = stride.to_vec();
        self
    }

    pub fn with_padding(mut self, padding: &[usize]) -> Self {
        self.padding = padding.to_vec();
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding_mode(mut self, mode: PaddingMode) -> Self {
        self.padding_mode = mode;
        self
    }

    /// Number of spatial(-temporal) axes (2 or 3).
    pub fn spatial_rank(&self) -> usize {
        self.kernel.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.kernel.len();
        if r != 2 && r != 3 {
            return Err(Error::config(format!(
                "convolution must have 2 or 3 spatial axes, got {r}"
            )));
        }
        if self.stride.len() != r || self.padding.len() != r {
            return Err(Error::config(format!(
                "kernel/stride/padding rank mismatch: {}/{}/{}",
                r,
                self.stride.len(),
                self.padding.len()
            )));
        }
        if self.kernel.iter().any(|&k| k == 0) || self.stride.iter().any(|&s| s == 0) {
            return Err(Error::config("kernel extents and strides must be > 0"));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return Err(Error::config("channel counts and groups must be > 0"));
        }
        if self.in_channels % self.groups != 0 {
            return Err(Error::config(format!(
                "in_channels {} not divisible by groups {}",
                self.in_channels, self.groups
            )));
        }
        if self.out_channels % self.groups != 0 {
            return Err(Error::config(format!(
                "out_channels {} not divisible by groups {}",
                self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    /// Shape of the weight tensor: `[O, C/G, kernel...]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels / self.groups];
        s.extend_from_slice(&self.kernel);
        s
    }
}

/// Output extents for the spatial(-temporal) axes of `in_spatial`.
pub fn conv_output_shape(spec: &ConvSpec, in_spatial: &[usize]) -> Result<Vec<usize>> {
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
        let k = spec.kernel[axis];
        let s = spec.stride[axis];
        let p = spec.padding[axis];
        let padded = n + 2 * p;
        if padded < k {
            return Err(Error::shape(format!(
                "axis {axis}: kernel {k} exceeds padded extent {padded}"
            )));
        }
        out.push((padded - k) / s + 1);
    }
    Ok(out)
}

fn check_operands<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    rank: usize,
) -> Result<()> {
    spec.validate()?;
    if spec.spatial_rank() != rank {
        return Err(Error::config(format!(
            "spec has {} spatial axes, kernel entry point expects {rank}",
            spec.spatial_rank()
        )));
    }
    if input.rank() != rank + 2 {
        return Err(Error::shape(format!(
            "input rank {} (shape {:?}), expected {}",
            input.rank(),
            input.shape(),
            rank + 2
        )));
    }
    if input.shape()[1] != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, spec declares {}",
            input.shape()[1],
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape().as_slice() {
        return Err(Error::shape(format!(
            "weight shape {:?}, spec requires {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::shape(format!(
                "bias shape {:?}, expected [{}]",
                b.shape(),
                spec.out_channels
            )));
        }
    }
    Ok(())
}

/// Grouped 2D convolution, `[B,C,H,W] -> [B,O,H',W']`.
///
/// Output channel `o` of group `g` reads only input channels of group `g`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands(input, weight, bias, spec, 2)?;
    let (b_n, _c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let out_sp = conv_output_shape(spec, &[h, w])?;
    let (oh, ow) = (out_sp[0], out_sp[1]);
    let (kh, kw) = (spec.kernel[0], spec.kernel[1]);
    let (sh, sw) = (spec.stride[0], spec.stride[1]);
    let (ph, pw) = (spec.padding[0] as isize, spec.padding[1] as isize);
    let cg = spec.in_channels / spec.groups;
    let og = spec.out_channels / spec.groups;

    let mut out = Tensor::zeros(&[b_n, spec.out_channels, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let y = out.data_mut();

    for b in 0..b_n {
        for g in 0..spec.groups {
            for oc in 0..og {
                let o_abs = g * og + oc;
                let base_bias = bias.map_or(T::zero(), |t| t.data()[o_abs]);
                for yh in 0..oh {
                    for yw in 0..ow {
                        let mut acc = base_bias;
                        for ic in 0..cg {
                            let c_abs = g * cg + ic;
                            let x_chan = (b * spec.in_channels + c_abs) * h;
                            let w_chan = (o_abs * cg + ic) * kh;
                            for dh in 0..kh {
                                let ih = (yh * sh + dh) as isize - ph;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let x_row = (x_chan + ih as usize) * w;
                                let w_row = (w_chan + dh) * kw;
                                for dw in 0..kw {
                                    let iw = (yw * sw + dw) as isize - pw;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    acc += x[x_row + iw as usize] * wt[w_row + dw];
                                }
                            }
                        }
                        y[((b * spec.out_channels + o_abs) * oh + yh) * ow + yw] = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Temporal tap index under the spec's padding mode, or `None` when the
/// tap falls into zero padding.
#[inline]
fn temporal_index(raw: isize, extent: usize, mode: PaddingMode) -> Option<usize> {
    if raw >= 0 && raw < extent as isize {
        Some(raw as usize)
    } else {
        match mode {
            PaddingMode::Zeros => None,
            PaddingMode::Replicate => Some(raw.clamp(0, extent as isize - 1) as usize),
        }
    }
}

/// Grouped 3D convolution, `[B,C,T,H,W] -> [B,O,T',H',W']`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_operands(input, weight, bias, spec, 3)?;
    let sh_in = input.shape();
    let (b_n, t, h, w) = (sh_in[0], sh_in[2], sh_in[3], sh_in[4]);
    let out_sp = conv_output_shape(spec, &[t, h, w])?;
    let (ot, oh, ow) = (out_sp[0], out_sp[1], out_sp[2]);
    let (kt, kh, kw) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (st, sh, sw) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let (pt, ph, pw) = (
        spec.padding[0] as isize,
        spec.padding[1] as isize,
        spec.padding[2] as isize,
    );
    let cg = spec.in_channels / spec.groups;
    let og = spec.out_channels / spec.groups;

    let mut out = Tensor::zeros(&[b_n, spec.out_channels, ot, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let y = out.data_mut();

    for b in 0..b_n {
        for g in 0..spec.groups {
            for oc in 0..og {
                let o_abs = g * og + oc;
                let base_bias = bias.map_or(T::zero(), |t| t.data()[o_abs]);
                for yt in 0..ot {
                    for yh in 0..oh {
                        for yw in 0..ow {
                            let mut acc = base_bias;
                            for ic in 0..cg {
                                let c_abs = g * cg + ic;
                                let x_chan = (b * spec.in_channels + c_abs) * t;
                                let w_chan = (o_abs * cg + ic) * kt;
                                for dt in 0..kt {
                                    let raw = (yt * st + dt) as isize - pt;
                                    let Some(it) =
                                        temporal_index(raw, t, spec.padding_mode)
                                    else {
                                        continue;
                                    };
                                    let x_frame = (x_chan + it) * h;
                                    let w_frame = (w_chan + dt) * kh;
                                    for dh in 0..kh {
                                        let ih = (yh * sh + dh) as isize - ph;
                                        if ih < 0 || ih >= h as isize {
                                            continue;
                                        }
                                        let x_row = (x_frame + ih as usize) * w;
                                        let w_row = (w_frame + dh) * kw;
                                        for dw in 0..kw {
                                            let iw = (yw * sw + dw) as isize - pw;
                                            if iw < 0 || iw >= w as isize {
                                                continue;
                                            }
                                            acc += x[x_row + iw as usize] * wt[w_row + dw];
                                        }
                                    }
                                }
                            }
                            y[(((b * spec.out_channels + o_abs) * ot + yt) * oh + yh) * ow + yw] =
                                acc;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its operands.
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Reverse-mode gradients for [`conv2d`]/[`conv3d`] (dispatch on rank).
///
/// `grad_out` must have the forward output shape. Replicate temporal
/// padding routes gradient into the clamped frame, mirroring the forward
/// tap exactly.
pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_bias: bool,
) -> Result<ConvGrads<T>> {
    check_operands(input, weight, None, spec, spec.spatial_rank())?;
    let in_sp = &input.shape()[2..];
    let out_sp = conv_output_shape(spec, in_sp)?;
    let mut expect = vec![input.shape()[0], spec.out_channels];
    expect.extend_from_slice(&out_sp);
    if grad_out.shape() != expect.as_slice() {
        return Err(Error::shape(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            expect
        )));
    }

    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = want_bias.then(|| Tensor::zeros(&[spec.out_channels]));

    let cg = spec.in_channels / spec.groups;
    let og = spec.out_channels / spec.groups;
    let b_n = input.shape()[0];
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();

    if spec.spatial_rank() == 2 {
        let (h, w) = (in_sp[0], in_sp[1]);
        let (oh, ow) = (out_sp[0], out_sp[1]);
        let (kh, kw) = (spec.kernel[0], spec.kernel[1]);
        let (sh, sw) = (spec.stride[0], spec.stride[1]);
        let (ph, pw) = (spec.padding[0] as isize, spec.padding[1] as isize);
        for b in 0..b_n {
            for g in 0..spec.groups {
                for oc in 0..og {
                    let o_abs = g * og + oc;
                    for yh in 0..oh {
                        for yw in 0..ow {
                            let gv = go[((b * spec.out_channels + o_abs) * oh + yh) * ow + yw];
                            if let Some(gb) = gb.as_mut() {
                                gb.data_mut()[o_abs] += gv;
                            }
                            for ic in 0..cg {
                                let c_abs = g * cg + ic;
                                let x_chan = (b * spec.in_channels + c_abs) * h;
                                let w_chan = (o_abs * cg + ic) * kh;
                                for dh in 0..kh {
                                    let ih = (yh * sh + dh) as isize - ph;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let x_row = (x_chan + ih as usize) * w;
                                    let w_row = (w_chan + dh) * kw;
                                    for dw in 0..kw {
                                        let iw = (yw * sw + dw) as isize - pw;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        gx.data_mut()[x_row + iw as usize] += gv * wt[w_row + dw];
                                        gw.data_mut()[w_row + dw] += gv * x[x_row + iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    } else {
        let (t, h, w) = (in_sp[0], in_sp[1], in_sp[2]);
        let (ot, oh, ow) = (out_sp[0], out_sp[1], out_sp[2]);
        let (kt, kh, kw) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
        let (st, sh, sw) = (spec.stride[0], spec.stride[1], spec.stride[2]);
        let (pt, ph, pw) = (
            spec.padding[0] as isize,
            spec.padding[1] as isize,
            spec.padding[2] as isize,
        );
        for b in 0..b_n {
            for g in 0..spec.groups {
                for oc in 0..og {
                    let o_abs = g * og + oc;
                    for yt in 0..ot {
                        for yh in 0..oh {
                            for yw in 0..ow {
                                let gv = go[(((b * spec.out_channels + o_abs) * ot + yt) * oh
                                    + yh)
                                    * ow
                                    + yw];
                                if let Some(gb) = gb.as_mut() {
                                    gb.data_mut()[o_abs] += gv;
                                }
                                for ic in 0..cg {
                                    let c_abs = g * cg + ic;
                                    let x_chan = (b * spec.in_channels + c_abs) * t;
                                    let w_chan = (o_abs * cg + ic) * kt;
                                    for dt in 0..kt {
                                        let raw = (yt * st + dt) as isize - pt;
                                        let Some(it) =
                                            temporal_index(raw, t, spec.padding_mode)
                                        else {
                                            continue;
                                        };
                                        let x_frame = (x_chan + it) * h;
                                        let w_frame = (w_chan + dt) * kh;
                                        for dh in 0..kh {
                                            let ih = (yh * sh + dh) as isize - ph;
                                            if ih < 0 || ih >= h as isize {
                                                continue;
                                            }
                                            let x_row = (x_frame + ih as usize) * w;
                                            let w_row = (w_frame + dh) * kw;
                                            for dw in 0..kw {
                                                let iw = (yw * sw + dw) as isize - pw;
                                                if iw < 0 || iw >= w as isize {
                                                    continue;
                                                }
                                                gx.data_mut()[x_row + iw as usize] +=
                                                    gv * wt[w_row + dw];
                                                gw.data_mut()[w_row + dw] +=
                                                    gv * x[x_row + iw as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: &[usize]) -> Tensor<f64> {
        Tensor::filled(shape, 1.0)
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let spec = ConvSpec::new(1, 1, &[3, 3]);
        let out = conv2d(&ones(&[1, 1, 3, 3]), &ones(&[1, 1, 3, 3]), None, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let spec = ConvSpec::new(1, 1, &[1, 1]);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -2.0, 3.0, 4.5]).unwrap();
        let w = ones(&[1, 1, 1, 1]);
        let out = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn group_mismatch_is_config_error() {
        let spec = ConvSpec::new(6, 4, &[1, 1]).with_groups(4);
        let err = conv2d(&ones(&[1, 6, 2, 2]), &ones(&[4, 1, 1, 1]), None, &spec).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn wrong_weight_shape_is_shape_error() {
        let spec = ConvSpec::new(2, 2, &[3, 3]);
        let err = conv2d(&ones(&[1, 2, 4, 4]), &ones(&[2, 2, 2, 2]), None, &spec).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn temporal_kernel_one_matches_per_slice_conv2d() {
        // kt = 1 degenerates to a 2D convolution applied per frame.
        let mut rng = 1234u64;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64) / (1u64 << 31) as f64 - 0.5
        };
        let x = Tensor::from_vec(&[1, 2, 3, 4, 4], (0..96).map(|_| next()).collect()).unwrap();
        let w3 = Tensor::from_vec(&[2, 2, 1, 3, 3], (0..36).map(|_| next()).collect()).unwrap();
        let spec3 = ConvSpec::new(2, 2, &[1, 3, 3]).with_padding(&[0, 1, 1]);
        let out3 = conv3d(&x, &w3, None, &spec3).unwrap();

        let w2 = Tensor::from_vec(&[2, 2, 3, 3], w3.data().to_vec()).unwrap();
        let spec2 = ConvSpec::new(2, 2, &[3, 3]).with_padding(&[1, 1]);
        for frame in 0..3 {
            let mut slice = Vec::new();
            for c in 0..2 {
                for h in 0..4 {
                    for wv in 0..4 {
                        slice.push(x.get(&[0, c, frame, h, wv]));
                    }
                }
            }
            let xf = Tensor::from_vec(&[1, 2, 4, 4], slice).unwrap();
            let of = conv2d(&xf, &w2, None, &spec2).unwrap();
            for c in 0..2 {
                for h in 0..4 {
                    for wv in 0..4 {
                        let a = out3.get(&[0, c, frame, h, wv]);
                        let b = of.get(&[0, c, h, wv]);
                        assert!((a - b).abs() <= 1e-15, "frame {frame}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn replicate_padding_clamps_temporal_taps() {
        // Constant-in-time input with replicate padding: every temporal
        // output slice equals the 2D convolution with the summed kernel.
        let spec3 = ConvSpec::new(1, 1, &[3, 3, 3])
            .with_padding(&[1, 1, 1])
            .with_padding_mode(PaddingMode::Replicate);
        let frame: Vec<f64> = (0..16).map(|v| (v as f64) * 0.25 - 2.0).collect();
        let mut clip = Vec::new();
        for _ in 0..4 {
            clip.extend_from_slice(&frame);
        }
        let x3 = Tensor::from_vec(&[1, 1, 4, 4, 4], clip).unwrap();
        let w3 = Tensor::from_vec(&[1, 1, 3, 3, 3], (0..27).map(|v| v as f64 * 0.1).collect())
            .unwrap();
        let out3 = conv3d(&x3, &w3, None, &spec3).unwrap();

        // Temporal slices of the kernel summed into a single 2D kernel.
        let mut k2 = vec![0.0; 9];
        for dt in 0..3 {
            for i in 0..9 {
                k2[i] += w3.data()[dt * 9 + i];
            }
        }
        let x2 = Tensor::from_vec(&[1, 1, 4, 4], frame).unwrap();
        let w2 = Tensor::from_vec(&[1, 1, 3, 3], k2).unwrap();
        let spec2 = ConvSpec::new(1, 1, &[3, 3]).with_padding(&[1, 1]);
        let out2 = conv2d(&x2, &w2, None, &spec2).unwrap();

        for frame_out in 0..4 {
            for h in 0..4 {
                for w in 0..4 {
                    let a = out3.get(&[0, 0, frame_out, h, w]);
                    let b = out2.get(&[0, 0, h, w]);
                    assert!((a - b).abs() <= 1e-12, "t={frame_out}: {a} vs {b}");
                }
            }
        }
    }
}
