//! Declarative layer graph: typed layers, build-time shape propagation,
//! and the parameter shape table.
//!
//! A graph is an ordered list of named layers wired by name into a DAG
//! with one designated output. Shapes are per-sample (no batch axis) and
//! are fully resolved at build time, before any numeric work.

mod exec;
mod init;
mod loss;

pub use exec::{backward, forward_train, infer, infer_with_activations, Trace};
pub use init::{init_params, ParamStore};
pub use loss::{softmax_cross_entropy, softmax_rows};

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_shape, pool_output_shape, ConvSpec, PoolSpec};

/// Reserved name that layer inputs use to reference the graph input.
pub const INPUT: &str = "input";

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

/// One typed layer. Convolution dimensionality follows the spec's spatial
/// rank (2 or 3 axes).
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv { spec: ConvSpec, bias: bool },
    BatchNorm { eps: f64, momentum: f64 },
    Relu,
    Pool(PoolSpec),
    GlobalAvgPool,
    Flatten,
    Linear { out_features: usize, bias: bool },
    /// Residual join of exactly two equal-shaped inputs.
    Add,
}

impl LayerKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerKind::Conv { spec, .. } if spec.spatial_rank() == 3 => "conv3d",
            LayerKind::Conv { .. } => "conv2d",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Relu => "relu",
            LayerKind::Pool(p) => match p.mode {
                crate::tensor::PoolMode::Max => "max_pool",
                crate::tensor::PoolMode::Avg => "avg_pool",
            },
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Add => "add",
        }
    }

    fn arity(&self) -> usize {
        match self {
            LayerKind::Add => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Names of producing layers (or [`INPUT`]).
    pub inputs: Vec<String>,
}

/// What a parameter tensor is, and how to initialize it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Convolution or linear weight; He fan-in initialization.
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    /// Running statistics are state, not learnable parameters.
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    pub layer: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

/// A validated graph: topologically ordered layers, resolved shapes, and
/// the parameter table.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    output: String,
    shapes: BTreeMap<String, Vec<usize>>,
    params: Vec<ParamInfo>,
}

fn layer_output_shape(kind: &LayerKind, inputs: &[&[usize]]) -> Result<Vec<usize>> {
    match kind {
        LayerKind::Conv { spec, .. } => {
            let sh = inputs[0];
            if sh.len() != spec.spatial_rank() + 1 {
                return Err(Error::shape(format!(
                    "conv input shape {:?} has wrong rank for a {}-axis kernel",
                    sh,
                    spec.spatial_rank()
                )));
            }
            if sh[0] != spec.in_channels {
                return Err(Error::shape(format!(
                    "conv input has {} channels, spec declares {}",
                    sh[0], spec.in_channels
                )));
            }
            let mut out = vec![spec.out_channels];
            out.extend(conv_output_shape(spec, &sh[1..])?);
            Ok(out)
        }
        LayerKind::BatchNorm { eps, .. } => {
            if *eps <= 0.0 {
                return Err(Error::config(format!("batch-norm eps must be > 0, got {eps}")));
            }
            if inputs[0].is_empty() {
                return Err(Error::shape("batch-norm input must have a channel axis"));
            }
            Ok(inputs[0].to_vec())
        }
        LayerKind::Relu => Ok(inputs[0].to_vec()),
        LayerKind::Pool(spec) => {
            let sh = inputs[0];
            if sh.len() != spec.spatial_rank() + 1 {
                return Err(Error::shape(format!(
                    "pool input shape {:?} has wrong rank for a {}-axis window",
                    sh,
                    spec.spatial_rank()
                )));
            }
            let mut out = vec![sh[0]];
            out.extend(pool_output_shape(spec, &sh[1..])?);
            Ok(out)
        }
        LayerKind::GlobalAvgPool => {
            let sh = inputs[0];
            if sh.len() < 2 {
                return Err(Error::shape(format!(
                    "global_avg_pool needs spatial axes, got {:?}",
                    sh
                )));
            }
            Ok(vec![sh[0]])
        }
        LayerKind::Flatten => Ok(vec![inputs[0].iter().product()]),
        LayerKind::Linear { out_features, .. } => {
            let sh = inputs[0];
            if sh.len() != 1 {
                return Err(Error::shape(format!(
                    "linear input must be a feature vector, got {:?}",
                    sh
                )));
            }
            if *out_features == 0 {
                return Err(Error::config("linear out_features must be > 0"));
            }
            Ok(vec![*out_features])
        }
        LayerKind::Add => {
            if inputs[0] != inputs[1] {
                return Err(Error::shape(format!(
                    "add inputs differ: {:?} vs {:?}",
                    inputs[0], inputs[1]
                )));
            }
            Ok(inputs[0].to_vec())
        }
    }
}

fn layer_params(name: &str, kind: &LayerKind, in_shape: &[usize]) -> Vec<ParamInfo> {
    let mut out = Vec::new();
    let mut push = |suffix: &str, shape: Vec<usize>, role: ParamRole| {
        out.push(ParamInfo {
            name: format!("{name}.{suffix}"),
            layer: name.to_string(),
            shape,
            role,
        });
    };
    match kind {
        LayerKind::Conv { spec, bias } => {
            let fan_in = spec.in_channels / spec.groups * spec.kernel.iter().product::<usize>();
            push("weight", spec.weight_shape(), ParamRole::Weight { fan_in });
            if *bias {
                push("bias", vec![spec.out_channels], ParamRole::Bias);
            }
        }
        LayerKind::BatchNorm { .. } => {
            let c = in_shape[0];
            push("gamma", vec![c], ParamRole::Gamma);
            push("beta", vec![c], ParamRole::Beta);
            push("running_mean", vec![c], ParamRole::RunningMean);
            push("running_var", vec![c], ParamRole::RunningVar);
        }
        LayerKind::Linear { out_features, bias } => {
            let c = in_shape[0];
            push("weight", vec![*out_features, c], ParamRole::Weight { fan_in: c });
            if *bias {
                push("bias", vec![*out_features], ParamRole::Bias);
            }
        }
        _ => {}
    }
    out
}

impl GraphSpec {
    /// Validates topology and propagates shapes; fails before any numeric
    /// work if anything is inconsistent.
    pub fn new(layers: Vec<LayerSpec>, input_shape: &[usize], output: &str) -> Result<Self> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "input shape must have positive extents, got {input_shape:?}"
            )));
        }
        let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut seen: HashSet<&str> = HashSet::new();
        let mut params = Vec::new();
        shapes.insert(INPUT.to_string(), input_shape.to_vec());

        for layer in &layers {
            if layer.name == INPUT {
                return Err(Error::config(format!("layer name {INPUT:?} is reserved")));
            }
            if !seen.insert(&layer.name) {
                return Err(Error::config(format!("duplicate layer name {:?}", layer.name)));
            }
            if layer.inputs.len() != layer.kind.arity() {
                return Err(Error::config(format!(
                    "layer {:?} ({}) takes {} input(s), got {}",
                    layer.name,
                    layer.kind.kind_name(),
                    layer.kind.arity(),
                    layer.inputs.len()
                )));
            }
            let mut in_shapes: Vec<&[usize]> = Vec::with_capacity(layer.inputs.len());
            for src in &layer.inputs {
                match shapes.get(src) {
                    Some(s) => in_shapes.push(s),
                    None => {
                        return Err(Error::config(format!(
                            "layer {:?} references {:?}, which is not defined before it",
                            layer.name, src
                        )))
                    }
                }
            }
            let out = layer_output_shape(&layer.kind, &in_shapes).map_err(|e| {
                Error::shape(format!("while building layer {:?}: {e}", layer.name))
            })?;
            params.extend(layer_params(&layer.name, &layer.kind, in_shapes[0]));
            shapes.insert(layer.name.clone(), out);
        }

        if !shapes.contains_key(output) || output == INPUT {
            return Err(Error::config(format!(
                "designated output {output:?} is not a layer of the graph"
            )));
        }
        Ok(GraphSpec {
            layers,
            input_shape: input_shape.to_vec(),
            output: output.to_string(),
            shapes,
            params,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Per-sample input signature (no batch axis).
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    /// Per-sample output shape of a layer (or of [`INPUT`]).
    pub fn shape_of(&self, name: &str) -> Option<&[usize]> {
        self.shapes.get(name).map(|v| v.as_slice())
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[&self.output]
    }

    /// Parameter table in layer order.
    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamInfo> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Deterministic text rendering used for checkpoint fingerprints.
    pub fn canonical_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "graph-v1 input={:?} output={}", self.input_shape, self.output);
        for l in &self.layers {
            let _ = write!(s, "{} kind={} inputs={:?} ", l.name, l.kind.kind_name(), l.inputs);
            match &l.kind {
                LayerKind::Conv { spec, bias } => {
                    let _ = write!(
                        s,
                        "in={} out={} kernel={:?} stride={:?} pad={:?} mode={:?} groups={} bias={}",
                        spec.in_channels,
                        spec.out_channels,
                        spec.kernel,
                        spec.stride,
                        spec.padding,
                        spec.padding_mode,
                        spec.groups,
                        bias
                    );
                }
                LayerKind::BatchNorm { eps, momentum } => {
                    let _ = write!(s, "eps={eps:e} momentum={momentum:e}");
                }
                LayerKind::Pool(p) => {
                    let _ = write!(
                        s,
                        "mode={:?} window={:?} stride={:?} pad={:?}",
                        p.mode, p.window, p.stride, p.padding
                    );
                }
                LayerKind::Linear { out_features, bias } => {
                    let _ = write!(s, "out={out_features} bias={bias}");
                }
                LayerKind::Relu
                | LayerKind::GlobalAvgPool
                | LayerKind::Flatten
                | LayerKind::Add => {}
            }
            s.push('\n');
        }
        s
    }
}

/// Incremental graph construction with immediate shape checking.
///
/// Each method appends one layer and returns its name, so fragments can be
/// chained by threading names.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    layers: Vec<LayerSpec>,
    shapes: HashMap<String, Vec<usize>>,
    input_shape: Vec<usize>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        let mut shapes = HashMap::new();
        shapes.insert(INPUT.to_string(), input_shape.to_vec());
        GraphBuilder {
            layers: Vec::new(),
            shapes,
            input_shape: input_shape.to_vec(),
        }
    }

    /// Current per-sample shape of a layer output (or the input).
    pub fn shape_of(&self, name: &str) -> Result<&[usize]> {
        self.shapes
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::config(format!("unknown layer {name:?}")))
    }

    pub fn channels_of(&self, name: &str) -> Result<usize> {
        Ok(self.shape_of(name)?[0])
    }

    pub fn add_layer(
        &mut self,
        name: &str,
        kind: LayerKind,
        inputs: &[&str],
    ) -> Result<String> {
        if name == INPUT || self.shapes.contains_key(name) {
            return Err(Error::config(format!("layer name {name:?} already in use")));
        }
        if inputs.len() != kind.arity() {
            return Err(Error::config(format!(
                "layer {name:?} ({}) takes {} input(s), got {}",
                kind.kind_name(),
                kind.arity(),
                inputs.len()
            )));
        }
        let mut in_shapes = Vec::with_capacity(inputs.len());
        for src in inputs {
            in_shapes.push(self.shape_of(src)?);
        }
        let out = layer_output_shape(&kind, &in_shapes)
            .map_err(|e| Error::shape(format!("while building layer {name:?}: {e}")))?;
        self.layers.push(LayerSpec {
            name: name.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        self.shapes.insert(name.to_string(), out);
        Ok(name.to_string())
    }

    pub fn conv(&mut self, name: &str, input: &str, spec: ConvSpec, bias: bool) -> Result<String> {
        self.add_layer(name, LayerKind::Conv { spec, bias }, &[input])
    }

    pub fn batch_norm(&mut self, name: &str, input: &str) -> Result<String> {
        self.add_layer(
            name,
            LayerKind::BatchNorm {
                eps: DEFAULT_BN_EPS,
                momentum: DEFAULT_BN_MOMENTUM,
            },
            &[input],
        )
    }

    pub fn relu(&mut self, name: &str, input: &str) -> Result<String> {
        self.add_layer(name, LayerKind::Relu, &[input])
    }

    pub fn pool(&mut self, name: &str, input: &str, spec: PoolSpec) -> Result<String> {
        self.add_layer(name, LayerKind::Pool(spec), &[input])
    }

    pub fn global_avg_pool(&mut self, name: &str, input: &str) -> Result<String> {
        self.add_layer(name, LayerKind::GlobalAvgPool, &[input])
    }

    pub fn flatten(&mut self, name: &str, input: &str) -> Result<String> {
        self.add_layer(name, LayerKind::Flatten, &[input])
    }

    pub fn linear(
        &mut self,
        name: &str,
        input: &str,
        out_features: usize,
        bias: bool,
    ) -> Result<String> {
        self.add_layer(name, LayerKind::Linear { out_features, bias }, &[input])
    }

    pub fn add(&mut self, name: &str, a: &str, b: &str) -> Result<String> {
        self.add_layer(name, LayerKind::Add, &[a, b])
    }

    pub fn finish(self, output: &str) -> Result<GraphSpec> {
        GraphSpec::new(self.layers, &self.input_shape, output)
    }
}
