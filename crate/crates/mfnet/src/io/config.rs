//! Text configuration parsing: `key: value` lines, one per line, with
//! `#` comments and dotted keys for grouping. Unknown keys are rejected
//! with the offending line and column.

use crate::arch::NetConfig;
use crate::blocks::Dims;
use crate::error::{Error, Result};
use crate::tensor::Precision;
use crate::train::{default_milestones, OptimizerConfig, SyntheticMotionSpec};

struct Entry {
    line: usize,
    key_col: usize,
    val_col: usize,
    key: String,
    value: String,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let colon = line.find(':').ok_or_else(|| {
            parse_err(
                line_no,
                line.len().max(1),
                "expected `key: value`",
            )
        })?;
        let key_part = &line[..colon];
        let val_part = &line[colon + 1..];
        let key = key_part.trim();
        let value = val_part.trim();
        if key.is_empty() {
            return Err(parse_err(line_no, 1, "missing key before `:`"));
        }
        if value.is_empty() {
            return Err(parse_err(line_no, colon + 2, format!("key {key:?} has no value")));
        }
        let key_col = key_part.len() - key_part.trim_start().len() + 1;
        let val_col = colon + 1 + (val_part.len() - val_part.trim_start().len()) + 1;
        if entries.iter().any(|e: &Entry| e.key == key) {
            return Err(parse_err(line_no, key_col, format!("duplicate key {key:?}")));
        }
        entries.push(Entry {
            line: line_no,
            key_col,
            val_col,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(entries)
}

fn value_err(e: &Entry, what: &str) -> Error {
    parse_err(
        e.line,
        e.val_col,
        format!("key {:?}: {what}, got {:?}", e.key, e.value),
    )
}

fn parse_usize(e: &Entry) -> Result<usize> {
    e.value
        .parse::<usize>()
        .map_err(|_| value_err(e, "expected a non-negative integer"))
}

fn parse_u64(e: &Entry) -> Result<u64> {
    e.value
        .parse::<u64>()
        .map_err(|_| value_err(e, "expected a non-negative integer"))
}

fn parse_f64(e: &Entry) -> Result<f64> {
    let v = e
        .value
        .parse::<f64>()
        .map_err(|_| value_err(e, "expected a number"))?;
    if !v.is_finite() {
        return Err(value_err(e, "expected a finite number"));
    }
    Ok(v)
}

fn parse_ratio(e: &Entry) -> Result<f64> {
    // width_scale accepts plain numbers and a/b fractions (e.g. 1/8).
    if let Some((num, den)) = e.value.split_once('/') {
        let n = num
            .trim()
            .parse::<f64>()
            .map_err(|_| value_err(e, "expected a number or a/b fraction"))?;
        let d = den
            .trim()
            .parse::<f64>()
            .map_err(|_| value_err(e, "expected a number or a/b fraction"))?;
        if d == 0.0 {
            return Err(value_err(e, "fraction denominator must be nonzero"));
        }
        Ok(n / d)
    } else {
        parse_f64(e)
    }
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(value_err(e, "expected true or false")),
    }
}

fn parse_dims(e: &Entry) -> Result<Dims> {
    match e.value.as_str() {
        "2d" | "2D" => Ok(Dims::Two),
        "3d" | "3D" => Ok(Dims::Three),
        _ => Err(value_err(e, "expected 2d or 3d")),
    }
}

fn parse_usize_list(e: &Entry) -> Result<Vec<usize>> {
    e.value
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| value_err(e, "expected comma-separated integers"))
        })
        .collect()
}

/// Parses a network configuration. An empty document yields the full-size
/// defaults (16 fibers, reduction 4, reference stage widths); `dims`
/// selects between the 2D and 3D presets (defaulting to 2D), which also
/// sets the default class count (1000 vs. 400).
pub fn parse_arch_config(text: &str) -> Result<NetConfig> {
    parse_arch_config_with_dims(text, None)
}

/// Like [`parse_arch_config`], with the dimensionality forced by the
/// caller (the CLI's `--dims` flag). A conflicting `dims` key is an
/// error.
pub fn parse_arch_config_with_dims(
    text: &str,
    dims_override: Option<Dims>,
) -> Result<NetConfig> {
    let entries = tokenize(text)?;
    let mut dims = dims_override;
    for e in &entries {
        if e.key == "dims" {
            let file_dims = parse_dims(e)?;
            match dims_override {
                Some(d) if d != file_dims => {
                    return Err(value_err(e, "conflicts with the requested dimensionality"))
                }
                _ => dims = Some(file_dims),
            }
        }
    }
    let dims = dims.unwrap_or(Dims::Two);
    let mut cfg = match dims {
        Dims::Two => NetConfig::mfnet_2d(),
        Dims::Three => NetConfig::mfnet_3d(),
    };

    for e in &entries {
        match e.key.as_str() {
            "dims" => {}
            "classes" => cfg.num_classes = parse_usize(e)?,
            "in_channels" => cfg.in_channels = parse_usize(e)?,
            "fibers" => cfg.fibers = parse_usize(e)?,
            "reduction" => cfg.reduction = parse_usize(e)?,
            "width_scale" => cfg.width_scale = parse_ratio(e)?,
            "stage_repeats" => {
                let reps = parse_usize_list(e)?;
                if reps.len() != 4 {
                    return Err(value_err(e, "expected exactly 4 repeat counts"));
                }
                cfg.stage_repeats = [reps[0], reps[1], reps[2], reps[3]];
            }
            "stem_kernel" => cfg.stem_kernel = parse_usize(e)?,
            "frames" => cfg.frames = parse_usize(e)?,
            "input_hw" => cfg.input_hw = parse_usize(e)?,
            "time_preserving" => cfg.time_preserving = parse_bool(e)?,
            _ => {
                return Err(parse_err(
                    e.line,
                    e.key_col,
                    format!("unknown key {:?}", e.key),
                ))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a `train-toy` run needs: optimizer settings, dataset
/// settings, and the element precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRunConfig {
    pub optimizer: OptimizerConfig,
    pub data: SyntheticMotionSpec,
    pub precision: Precision,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        ToyRunConfig {
            optimizer: OptimizerConfig::toy(3000),
            data: SyntheticMotionSpec::default(),
            precision: Precision::Double,
        }
    }
}

/// Parses the toy training configuration (dotted `optimizer.*` and
/// `data.*` keys plus `precision`); an empty document yields the pinned
/// toy defaults.
pub fn parse_train_config(text: &str) -> Result<ToyRunConfig> {
    let entries = tokenize(text)?;
    let mut cfg = ToyRunConfig::default();
    let mut milestones_set = false;
    let mut max_iters_set = false;
    for e in &entries {
        match e.key.as_str() {
            "optimizer.lr" => cfg.optimizer.learning_rate = parse_f64(e)?,
            "optimizer.momentum" => cfg.optimizer.momentum = parse_f64(e)?,
            "optimizer.weight_decay" => cfg.optimizer.weight_decay = parse_f64(e)?,
            "optimizer.decay_factor" => cfg.optimizer.decay_factor = parse_f64(e)?,
            "optimizer.milestones" => {
                cfg.optimizer.milestones = parse_usize_list(e)?;
                milestones_set = true;
            }
            "optimizer.batch_size" => cfg.optimizer.batch_size = parse_usize(e)?,
            "optimizer.max_iterations" => {
                cfg.optimizer.max_iterations = parse_usize(e)?;
                max_iters_set = true;
            }
            "optimizer.seed" => cfg.optimizer.seed = parse_u64(e)?,
            "optimizer.target_val_accuracy" => {
                cfg.optimizer.target_val_accuracy = Some(parse_f64(e)?)
            }
            "data.classes" => cfg.data.num_classes = parse_usize(e)?,
            "data.frames" => cfg.data.frames = parse_usize(e)?,
            "data.height" => cfg.data.height = parse_usize(e)?,
            "data.width" => cfg.data.width = parse_usize(e)?,
            "data.samples_per_class" => cfg.data.samples_per_class = parse_usize(e)?,
            "data.noise" => cfg.data.noise = parse_f64(e)?,
            "data.bar_extent" => cfg.data.bar_extent = parse_usize(e)?,
            "data.seed" => cfg.data.seed = parse_u64(e)?,
            "precision" => {
                cfg.precision = match e.value.as_str() {
                    "single" => Precision::Single,
                    "double" => Precision::Double,
                    _ => return Err(value_err(e, "expected single or double")),
                }
            }
            _ => {
                return Err(parse_err(
                    e.line,
                    e.key_col,
                    format!("unknown key {:?}", e.key),
                ))
            }
        }
    }
    if max_iters_set && !milestones_set {
        cfg.optimizer.milestones = default_milestones(cfg.optimizer.max_iterations);
    }
    cfg.optimizer.validate()?;
    cfg.data.validate()?;
    Ok(cfg)
}
