//! Multiplexer and multi-fiber unit builders, plus the connection-count
//! arithmetic behind fiber slicing.
//!
//! A *fiber* is one group of a grouped convolution: slicing a residual
//! unit into `N` fibers divides its channel-pairing count by exactly `N`.
//! The *multiplexer* is a two-layer pointwise bottleneck with a residual
//! connection that routes information across otherwise isolated fibers.

use crate::error::{Error, Result};
use crate::graph::GraphBuilder;
use crate::tensor::{ConvSpec, PaddingMode};

/// Spatial dimensionality of a block: plain 2D or spatio-temporal 3D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    pub fn rank(self) -> usize {
        match self {
            Dims::Two => 2,
            Dims::Three => 3,
        }
    }

    /// `[1,1]` or `[1,1,1]`.
    pub fn pointwise(self) -> Vec<usize> {
        vec![1; self.rank()]
    }

    pub fn ones(self) -> Vec<usize> {
        vec![1; self.rank()]
    }

    pub fn label(self) -> &'static str {
        match self {
            Dims::Two => "2d",
            Dims::Three => "3d",
        }
    }
}

/// Channel-pairing count of a dense two-layer residual body:
/// `in*mid + mid*out`.
pub fn connections_dense(in_channels: u64, mid_channels: u64, out_channels: u64) -> u64 {
    in_channels * mid_channels + mid_channels * out_channels
}

/// Channel-pairing count after slicing into `fibers` isolated paths:
/// exactly [`connections_dense`] divided by `fibers`.
pub fn connections_sliced(
    in_channels: u64,
    mid_channels: u64,
    out_channels: u64,
    fibers: u64,
) -> Result<u64> {
    if fibers == 0 {
        return Err(Error::config("fiber count must be > 0"));
    }
    for (name, c) in [
        ("in_channels", in_channels),
        ("mid_channels", mid_channels),
        ("out_channels", out_channels),
    ] {
        if c % fibers != 0 {
            return Err(Error::config(format!(
                "{name} = {c} is not divisible by {fibers} fibers"
            )));
        }
    }
    Ok(fibers
        * (in_channels / fibers * (mid_channels / fibers)
            + mid_channels / fibers * (out_channels / fibers)))
}

/// Two pointwise projections `C -> C/k -> C` added residually to the
/// input; `k >= 2` so the body costs `2/k` of a single dense `C -> C`
/// pointwise layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiplexerConfig {
    pub channels: usize,
    pub reduction: usize,
    pub dims: Dims,
}

impl MultiplexerConfig {
    pub fn new(channels: usize, reduction: usize, dims: Dims) -> Result<Self> {
        let cfg = MultiplexerConfig {
            channels,
            reduction,
            dims,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction < 2 {
            return Err(Error::config(format!(
                "multiplexer reduction must be >= 2, got {}",
                self.reduction
            )));
        }
        if self.channels == 0 || self.channels % self.reduction != 0 {
            return Err(Error::config(format!(
                "multiplexer reduction {} does not divide {} channels",
                self.reduction, self.channels
            )));
        }
        Ok(())
    }
}

/// Appends the residual bottleneck fragment of a multiplexer with an
/// explicit bottleneck width. Layers are named `{prefix}.bn1`,
/// `{prefix}.conv1`, ..., `{prefix}.add`; returns the output layer name.
fn append_bottleneck(
    g: &mut GraphBuilder,
    input: &str,
    prefix: &str,
    dims: Dims,
    bottleneck: usize,
) -> Result<String> {
    let channels = g.channels_of(input)?;
    if bottleneck == 0 {
        return Err(Error::config(format!(
            "{prefix}: bottleneck width must be > 0"
        )));
    }
    let bn1 = g.batch_norm(&format!("{prefix}.bn1"), input)?;
    let r1 = g.relu(&format!("{prefix}.relu1"), &bn1)?;
    let c1 = g.conv(
        &format!("{prefix}.conv1"),
        &r1,
        ConvSpec::new(channels, bottleneck, &dims.pointwise()),
        false,
    )?;
    let bn2 = g.batch_norm(&format!("{prefix}.bn2"), &c1)?;
    let r2 = g.relu(&format!("{prefix}.relu2"), &bn2)?;
    let c2 = g.conv(
        &format!("{prefix}.conv2"),
        &r2,
        ConvSpec::new(bottleneck, channels, &dims.pointwise()),
        false,
    )?;
    g.add(&format!("{prefix}.add"), &c2, input)
}

/// Appends a multiplexer fragment (`C -> C/k -> C`, residual) to the
/// graph under construction. Spatial/temporal extents are unchanged.
pub fn build_multiplexer(
    g: &mut GraphBuilder,
    input: &str,
    prefix: &str,
    cfg: &MultiplexerConfig,
) -> Result<String> {
    cfg.validate()?;
    let channels = g.channels_of(input)?;
    if channels != cfg.channels {
        return Err(Error::shape(format!(
            "{prefix}: input carries {channels} channels, config says {}",
            cfg.channels
        )));
    }
    append_bottleneck(g, input, prefix, cfg.dims, cfg.channels / cfg.reduction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcut {
    Identity,
    Projection,
}

/// Layout of the unit's second fiber conv.
///
/// `GroupedSpatial` is the standard fiber body (3×3, or 1×3×3 in 3D,
/// groups = fibers). `DensePointwise` is the stage-transition variant: a
/// 1×1(×1) layer with groups = 1 that fans the widened features across
/// fibers; calibrated against the reference cost tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondConv {
    GroupedSpatial,
    DensePointwise,
}

/// Configuration of one multi-fiber unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiberUnitConfig {
    pub dims: Dims,
    pub fibers: usize,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    /// Stride of the first fiber conv (and of the projection shortcut).
    pub stride: Vec<usize>,
    /// Temporal extent of the first fiber conv kernel (3D only; 1 or 3).
    pub first_temporal_extent: usize,
    pub multiplexer: bool,
    /// Bottleneck width of the unit's multiplexer (default mid/4).
    pub mux_bottleneck: usize,
    pub second_conv: SecondConv,
    pub shortcut: Shortcut,
    /// Temporal padding mode for the unit's convs (3D only; `Replicate`
    /// is the inflation-equivalence test configuration).
    pub padding_mode: PaddingMode,
}

impl FiberUnitConfig {
    pub fn new(
        dims: Dims,
        fibers: usize,
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let cfg = FiberUnitConfig {
            dims,
            fibers,
            in_channels,
            mid_channels,
            out_channels,
            stride: dims.ones(),
            first_temporal_extent: match dims {
                Dims::Two => 1,
                Dims::Three => 3,
            },
            multiplexer: true,
            mux_bottleneck: (mid_channels / 4).max(1),
            second_conv: SecondConv::GroupedSpatial,
            shortcut: if in_channels == out_channels {
                Shortcut::Identity
            } else {
                Shortcut::Projection
            },
            padding_mode: PaddingMode::Zeros,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: &[usize]) -> Self {
        self.stride = stride.to_vec();
        self
    }

    pub fn with_multiplexer(mut self, on: bool) -> Self {
        self.multiplexer = on;
        self
    }

    pub fn with_mux_bottleneck(mut self, width: usize) -> Self {
        self.mux_bottleneck = width;
        self
    }

    pub fn with_second_conv(mut self, second: SecondConv) -> Self {
        self.second_conv = second;
        self
    }

    pub fn with_shortcut(mut self, shortcut: Shortcut) -> Self {
        self.shortcut = shortcut;
        self
    }

    pub fn with_first_temporal_extent(mut self, kt: usize) -> Self {
        self.first_temporal_extent = kt;
        self
    }

    pub fn with_padding_mode(mut self, mode: PaddingMode) -> Self {
        self.padding_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fibers == 0 {
            return Err(Error::config("fiber count must be > 0"));
        }
        for (name, c) in [
            ("in_channels", self.in_channels),
            ("mid_channels", self.mid_channels),
            ("out_channels", self.out_channels),
        ] {
            if c == 0 || c % self.fibers != 0 {
                return Err(Error::config(format!(
                    "{name} = {c} is not divisible by {} fibers",
                    self.fibers
                )));
            }
        }
        if self.stride.len() != self.dims.rank() {
            return Err(Error::config(format!(
                "stride {:?} has wrong rank for {}",
                self.stride,
                self.dims.label()
            )));
        }
        if self.dims == Dims::Three && ![1, 3].contains(&self.first_temporal_extent) {
            return Err(Error::config(format!(
                "first conv temporal extent must be 1 or 3, got {}",
                self.first_temporal_extent
            )));
        }
        if self.shortcut == Shortcut::Identity
            && (self.in_channels != self.out_channels || self.stride.iter().any(|&s| s != 1))
        {
            return Err(Error::config(
                "identity shortcut requires matching channels and unit stride 1",
            ));
        }
        if self.multiplexer && self.mux_bottleneck == 0 {
            return Err(Error::config("multiplexer bottleneck width must be > 0"));
        }
        Ok(())
    }

    /// Kernel and padding of the first fiber conv.
    fn first_conv_geometry(&self) -> (Vec<usize>, Vec<usize>) {
        match self.dims {
            Dims::Two => (vec![3, 3], vec![1, 1]),
            Dims::Three => {
                let kt = self.first_temporal_extent;
                (vec![kt, 3, 3], vec![kt / 2, 1, 1])
            }
        }
    }
}

/// Appends a multi-fiber unit fragment to the graph under construction
/// and returns the output layer name (`{prefix}.add`).
///
/// Pre-activation throughout: BN→ReLU precede each conv. The residual
/// shortcut branches from the unit input; the multiplexer (when enabled)
/// sits ahead of the fiber body, at input resolution.
pub fn build_mf_unit(
    g: &mut GraphBuilder,
    input: &str,
    prefix: &str,
    cfg: &FiberUnitConfig,
) -> Result<String> {
    cfg.validate()?;
    let channels = g.channels_of(input)?;
    if channels != cfg.in_channels {
        return Err(Error::shape(format!(
            "{prefix}: input carries {channels} channels, config says {}",
            cfg.in_channels
        )));
    }

    let body_in = if cfg.multiplexer {
        append_bottleneck(
            g,
            input,
            &format!("{prefix}.mux"),
            cfg.dims,
            cfg.mux_bottleneck,
        )?
    } else {
        input.to_string()
    };

    let (k1, p1) = cfg.first_conv_geometry();
    let bn1 = g.batch_norm(&format!("{prefix}.bn1"), &body_in)?;
    let r1 = g.relu(&format!("{prefix}.relu1"), &bn1)?;
    let c1 = g.conv(
        &format!("{prefix}.conv1"),
        &r1,
        ConvSpec::new(cfg.in_channels, cfg.mid_channels, &k1)
            .with_stride(&cfg.stride)
            .with_padding(&p1)
            .with_groups(cfg.fibers)
            .with_padding_mode(cfg.padding_mode),
        false,
    )?;
    let bn2 = g.batch_norm(&format!("{prefix}.bn2"), &c1)?;
    let r2 = g.relu(&format!("{prefix}.relu2"), &bn2)?;
    let c2 = match cfg.second_conv {
        SecondConv::GroupedSpatial => {
            let (k2, p2) = match cfg.dims {
                Dims::Two => (vec![3, 3], vec![1, 1]),
                Dims::Three => (vec![1, 3, 3], vec![0, 1, 1]),
            };
            g.conv(
                &format!("{prefix}.conv2"),
                &r2,
                ConvSpec::new(cfg.mid_channels, cfg.out_channels, &k2)
                    .with_padding(&p2)
                    .with_groups(cfg.fibers)
                    .with_padding_mode(cfg.padding_mode),
                false,
            )?
        }
        SecondConv::DensePointwise => g.conv(
            &format!("{prefix}.conv2"),
            &r2,
            ConvSpec::new(cfg.mid_channels, cfg.out_channels, &cfg.dims.pointwise()),
            false,
        )?,
    };

    let shortcut = match cfg.shortcut {
        Shortcut::Identity => input.to_string(),
        Shortcut::Projection => {
            let bn = g.batch_norm(&format!("{prefix}.down.bn"), input)?;
            g.conv(
                &format!("{prefix}.down.conv"),
                &bn,
                ConvSpec::new(cfg.in_channels, cfg.out_channels, &cfg.dims.pointwise())
                    .with_stride(&cfg.stride),
                false,
            )?
        }
    };
    g.add(&format!("{prefix}.add"), &c2, &shortcut)
}
