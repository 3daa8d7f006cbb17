//! Full network builders: 2D/3D MF-Net and a reference ResNet-18.
//!
//! The MF-Net layout: a light 16-channel stem (stride 2 spatially),
//! max-pool, four multi-fiber stages of widths {96, 192, 384, 768} with
//! unit repeats {3, 4, 6, 3}, global average pooling, and a classifier.
//! The 3D variant strides time once (16→8 frames, in the first unit of
//! the first stage) and keeps spatial strides in the later stages; every
//! unit's first fiber conv spans three frames, the second spans one.

use crate::blocks::{
    build_mf_unit, Dims, FiberUnitConfig, SecondConv, Shortcut,
};
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, GraphSpec, INPUT};
use crate::tensor::{ConvSpec, PaddingMode, PoolMode, PoolSpec};

/// Stage widths of the reference MF-Net before `width_scale`.
pub const STAGE_WIDTHS: [usize; 4] = [96, 192, 384, 768];
/// Unit repeats per stage.
pub const STAGE_REPEATS: [usize; 4] = [3, 4, 6, 3];
/// Stem width before `width_scale`.
pub const STEM_WIDTH: usize = 16;

/// Configuration of a full MF-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub dims: Dims,
    pub num_classes: usize,
    pub in_channels: usize,
    /// Fibers per unit (N).
    pub fibers: usize,
    /// Multiplexer reduction (k); unit bottlenecks are `mid/k`.
    pub reduction: usize,
    pub width_scale: f64,
    pub stage_repeats: [usize; 4],
    /// Spatial extent of the stem kernel (odd; the 3D stem adds a
    /// temporal extent of 3).
    pub stem_kernel: usize,
    /// Input frames (3D only).
    pub frames: usize,
    /// Input height and width.
    pub input_hw: usize,
    /// Test configuration for inflation checks: forces every temporal
    /// stride to 1 and switches temporal padding to replicate.
    pub time_preserving: bool,
}

impl NetConfig {
    pub fn mfnet_2d() -> Self {
        NetConfig {
            dims: Dims::Two,
            num_classes: 1000,
            in_channels: 3,
            fibers: 16,
            reduction: 4,
            width_scale: 1.0,
            stage_repeats: STAGE_REPEATS,
            stem_kernel: 5,
            frames: 16,
            input_hw: 224,
            time_preserving: false,
        }
    }

    pub fn mfnet_3d() -> Self {
        NetConfig {
            dims: Dims::Three,
            num_classes: 400,
            ..Self::mfnet_2d()
        }
    }

    /// Desk-scale preset: 1/8 widths (fibers reduced to keep the scaled
    /// widths divisible), one unit per stage, 8-frame 32×32 single-channel
    /// clips, four classes.
    pub fn toy_3d() -> Self {
        NetConfig {
            dims: Dims::Three,
            num_classes: 4,
            in_channels: 1,
            fibers: 2,
            reduction: 4,
            width_scale: 0.125,
            stage_repeats: [1, 1, 1, 1],
            stem_kernel: 5,
            frames: 8,
            input_hw: 32,
            time_preserving: false,
        }
    }

    /// 2D twin of [`NetConfig::toy_3d`], the inflation source.
    pub fn toy_2d() -> Self {
        NetConfig {
            dims: Dims::Two,
            ..Self::toy_3d()
        }
    }

    pub fn with_dims(mut self, dims: Dims) -> Self {
        self.dims = dims;
        self
    }

    fn scale(&self, width: usize) -> Result<usize> {
        let exact = width as f64 * self.width_scale;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::config(format!(
                "width_scale {} turns width {width} into the non-integer {exact}",
                self.width_scale
            )));
        }
        Ok(rounded as usize)
    }

    pub fn scaled_widths(&self) -> Result<[usize; 4]> {
        let mut out = [0usize; 4];
        for (slot, &w) in out.iter_mut().zip(&STAGE_WIDTHS) {
            *slot = self.scale(w)?;
        }
        Ok(out)
    }

    pub fn scaled_stem(&self) -> Result<usize> {
        self.scale(STEM_WIDTH)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::config("class and channel counts must be > 0"));
        }
        if self.fibers == 0 {
            return Err(Error::config("fiber count must be > 0"));
        }
        if self.reduction < 2 {
            return Err(Error::config(format!(
                "multiplexer reduction must be >= 2, got {}",
                self.reduction
            )));
        }
        if self.stem_kernel % 2 == 0 || self.stem_kernel == 0 {
            return Err(Error::config(format!(
                "stem kernel extent must be odd, got {}",
                self.stem_kernel
            )));
        }
        if self.stage_repeats.iter().any(|&r| r == 0) {
            return Err(Error::config("every stage needs at least one unit"));
        }
        for w in self.scaled_widths()? {
            if w % self.fibers != 0 {
                return Err(Error::config(format!(
                    "stage width {w} is not divisible by {} fibers",
                    self.fibers
                )));
            }
            if w % self.reduction != 0 {
                return Err(Error::config(format!(
                    "stage width {w} is not divisible by the multiplexer reduction {}",
                    self.reduction
                )));
            }
        }
        self.scaled_stem()?;
        if self.dims == Dims::Three && self.frames == 0 {
            return Err(Error::config("3D input needs at least one frame"));
        }
        if self.input_hw == 0 {
            return Err(Error::config("input extent must be > 0"));
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Builds the MF-Net described by `cfg` (either dimensionality).
pub fn build_mfnet(cfg: &NetConfig) -> Result<GraphSpec> {
    cfg.validate()?;
    let stem_width = cfg.scaled_stem()?;
    let widths = cfg.scaled_widths()?;
    let pad_mode = if cfg.time_preserving {
        PaddingMode::Replicate
    } else {
        PaddingMode::Zeros
    };
    let sk = cfg.stem_kernel;

    let (input_shape, stem_spec, pool_spec) = match cfg.dims {
        Dims::Two => (
            vec![cfg.in_channels, cfg.input_hw, cfg.input_hw],
            ConvSpec::new(cfg.in_channels, stem_width, &[sk, sk])
                .with_stride(&[2, 2])
                .with_padding(&[sk / 2, sk / 2]),
            PoolSpec::new(PoolMode::Max, &[3, 3], &[2, 2], &[1, 1]),
        ),
        Dims::Three => (
            vec![cfg.in_channels, cfg.frames, cfg.input_hw, cfg.input_hw],
            ConvSpec::new(cfg.in_channels, stem_width, &[3, sk, sk])
                .with_stride(&[1, 2, 2])
                .with_padding(&[1, sk / 2, sk / 2])
                .with_padding_mode(pad_mode),
            PoolSpec::new(PoolMode::Max, &[1, 3, 3], &[1, 2, 2], &[0, 1, 1]),
        ),
    };

    let mut g = GraphBuilder::new(&input_shape);
    let stem = g.conv("conv1.conv", INPUT, stem_spec, false)?;
    let stem = g.batch_norm("conv1.bn", &stem)?;
    let stem = g.relu("conv1.relu", &stem)?;
    let mut cursor = g.pool("pool1", &stem, pool_spec)?;

    let mut prev_width = stem_width;
    for (si, (&width, &repeats)) in widths.iter().zip(&cfg.stage_repeats).enumerate() {
        let stage = si + 2;
        for unit in 1..=repeats {
            let first = unit == 1;
            let m_in = if first { prev_width } else { width };
            let stride = match (cfg.dims, first) {
                (_, false) => cfg.dims.ones(),
                (Dims::Two, true) => {
                    if stage >= 3 {
                        vec![2, 2]
                    } else {
                        vec![1, 1]
                    }
                }
                (Dims::Three, true) => {
                    if stage == 2 {
                        // The single temporal downsample of the network.
                        if cfg.time_preserving {
                            vec![1, 1, 1]
                        } else {
                            vec![2, 1, 1]
                        }
                    } else {
                        vec![1, 2, 2]
                    }
                }
            };
            // The stem width may not divide the configured fiber count
            // (e.g. N = 12 against a 16-channel stem); the entering unit
            // then uses the largest fiber count dividing everything.
            let unit_fibers = gcd(gcd(cfg.fibers, m_in), width);
            let mut ucfg = FiberUnitConfig::new(cfg.dims, unit_fibers, m_in, width, width)?
                .with_stride(&stride)
                .with_mux_bottleneck(width / cfg.reduction)
                .with_padding_mode(pad_mode);
            if first {
                ucfg = ucfg
                    .with_second_conv(SecondConv::DensePointwise)
                    .with_shortcut(Shortcut::Projection);
            }
            cursor = build_mf_unit(&mut g, &cursor, &format!("conv{stage}.u{unit}"), &ucfg)?;
        }
        prev_width = width;
    }

    let tail = g.batch_norm("tail.bn", &cursor)?;
    let tail = g.relu("tail.relu", &tail)?;
    let gap = g.global_avg_pool("gap", &tail)?;
    let fc = g.linear("fc", &gap, cfg.num_classes, true)?;
    g.finish(&fc)
}

pub fn build_mfnet_2d(cfg: &NetConfig) -> Result<GraphSpec> {
    if cfg.dims != Dims::Two {
        return Err(Error::config("build_mfnet_2d needs a 2D configuration"));
    }
    build_mfnet(cfg)
}

pub fn build_mfnet_3d(cfg: &NetConfig) -> Result<GraphSpec> {
    if cfg.dims != Dims::Three {
        return Err(Error::config("build_mfnet_3d needs a 3D configuration"));
    }
    build_mfnet(cfg)
}

/// Canonical 18-layer basic-block residual network (7×7/64 stem, stages
/// 64/128/256/512 × 2 blocks, post-activation). Used solely as a
/// cost-model anchor.
pub fn build_resnet18_reference(num_classes: usize) -> Result<GraphSpec> {
    let mut g = GraphBuilder::new(&[3, 224, 224]);
    let stem = g.conv(
        "conv1",
        INPUT,
        ConvSpec::new(3, 64, &[7, 7])
            .with_stride(&[2, 2])
            .with_padding(&[3, 3]),
        false,
    )?;
    let stem = g.batch_norm("bn1", &stem)?;
    let stem = g.relu("relu1", &stem)?;
    let mut cursor = g.pool(
        "pool1",
        &stem,
        PoolSpec::new(PoolMode::Max, &[3, 3], &[2, 2], &[1, 1]),
    )?;

    let mut prev_width = 64usize;
    for (si, &width) in [64usize, 128, 256, 512].iter().enumerate() {
        let stage = si + 1;
        for block in 1..=2 {
            let p = format!("layer{stage}.b{block}");
            let first = block == 1;
            let stride = if first && stage > 1 { vec![2, 2] } else { vec![1, 1] };
            let shortcut_in = cursor.clone();

            let c1 = g.conv(
                &format!("{p}.conv1"),
                &cursor,
                ConvSpec::new(prev_width, width, &[3, 3])
                    .with_stride(&stride)
                    .with_padding(&[1, 1]),
                false,
            )?;
            let b1 = g.batch_norm(&format!("{p}.bn1"), &c1)?;
            let r1 = g.relu(&format!("{p}.relu1"), &b1)?;
            let c2 = g.conv(
                &format!("{p}.conv2"),
                &r1,
                ConvSpec::new(width, width, &[3, 3]).with_padding(&[1, 1]),
                false,
            )?;
            let b2 = g.batch_norm(&format!("{p}.bn2"), &c2)?;

            let shortcut = if prev_width != width || stride != [1, 1] {
                let dc = g.conv(
                    &format!("{p}.down.conv"),
                    &shortcut_in,
                    ConvSpec::new(prev_width, width, &[1, 1]).with_stride(&stride),
                    false,
                )?;
                g.batch_norm(&format!("{p}.down.bn"), &dc)?
            } else {
                shortcut_in
            };
            let sum = g.add(&format!("{p}.add"), &b2, &shortcut)?;
            cursor = g.relu(&format!("{p}.relu2"), &sum)?;
            prev_width = width;
        }
    }

    let gap = g.global_avg_pool("gap", &cursor)?;
    let fc = g.linear("fc", &gap, num_classes, true)?;
    g.finish(&fc)
}
