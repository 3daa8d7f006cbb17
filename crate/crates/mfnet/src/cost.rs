//! Analytical parameter and multiply-add accounting per layer.
//!
//! Conventions: one multiply-add is one FLOP; batch norm, relu, pooling,
//! and elementwise adds count zero FLOPs; bias terms appear in the
//! parameter counts but not in the multiply-add counts. All arithmetic is
//! exact (u64).

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, LayerKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub name: String,
    pub kind: String,
    /// Output shape; batched when produced by [`count_flops`].
    pub output_shape: Vec<usize>,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl CostReport {
    pub fn empty() -> Self {
        CostReport {
            rows: Vec::new(),
            total_params: 0,
            total_macs: 0,
        }
    }

    fn from_rows(rows: Vec<CostRow>) -> Self {
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_macs = rows.iter().map(|r| r.macs).sum();
        CostReport {
            rows,
            total_params,
            total_macs,
        }
    }

    /// Subtotals grouped by the layer-name prefix before the first `.`
    /// (the stage naming convention of the builders), in first-seen order.
    pub fn stage_subtotals(&self) -> Vec<(String, u64, u64)> {
        let mut order: Vec<String> = Vec::new();
        let mut totals: std::collections::HashMap<String, (u64, u64)> =
            std::collections::HashMap::new();
        for row in &self.rows {
            let stage = row.name.split('.').next().unwrap_or(&row.name).to_string();
            if !totals.contains_key(&stage) {
                order.push(stage.clone());
            }
            let e = totals.entry(stage).or_insert((0, 0));
            e.0 += row.params;
            e.1 += row.macs;
        }
        order
            .into_iter()
            .map(|s| {
                let (p, m) = totals[&s];
                (s, p, m)
            })
            .collect()
    }
}

fn layer_params(kind: &LayerKind, in_shape: &[usize]) -> u64 {
    match kind {
        LayerKind::Conv { spec, bias } => {
            let w = spec.out_channels as u64 * (spec.in_channels / spec.groups) as u64
                * spec.kernel.iter().product::<usize>() as u64;
            w + if *bias { spec.out_channels as u64 } else { 0 }
        }
        LayerKind::BatchNorm { .. } => 2 * in_shape[0] as u64,
        LayerKind::Linear { out_features, bias } => {
            let w = *out_features as u64 * in_shape[0] as u64;
            w + if *bias { *out_features as u64 } else { 0 }
        }
        _ => 0,
    }
}

fn layer_macs(kind: &LayerKind, in_shape: &[usize], out_shape: &[usize], batch: u64) -> u64 {
    match kind {
        LayerKind::Conv { spec, .. } => {
            let positions: u64 = out_shape[1..].iter().product::<usize>() as u64;
            batch
                * spec.out_channels as u64
                * positions
                * (spec.in_channels / spec.groups) as u64
                * spec.kernel.iter().product::<usize>() as u64
        }
        LayerKind::Linear { out_features, .. } => {
            batch * *out_features as u64 * in_shape[0] as u64
        }
        _ => 0,
    }
}

fn build_rows(graph: &GraphSpec, batch: Option<u64>) -> Vec<CostRow> {
    graph
        .layers()
        .iter()
        .map(|layer| {
            let in_shape = graph.shape_of(&layer.inputs[0]).expect("validated graph");
            let out_shape = graph.shape_of(&layer.name).expect("validated graph");
            let (macs, reported_shape) = match batch {
                Some(b) => {
                    let mut shape = vec![b as usize];
                    shape.extend_from_slice(out_shape);
                    (layer_macs(&layer.kind, in_shape, out_shape, b), shape)
                }
                None => (0, out_shape.to_vec()),
            };
            CostRow {
                name: layer.name.clone(),
                kind: layer.kind.kind_name().to_string(),
                output_shape: reported_shape,
                params: layer_params(&layer.kind, in_shape),
                macs,
            }
        })
        .collect()
}

/// Parameter counts per layer (multiply-adds left at zero).
pub fn count_params(graph: &GraphSpec) -> CostReport {
    CostReport::from_rows(build_rows(graph, None))
}

/// Parameter and multiply-add counts at the given batched input shape
/// (`[B, C, ...]`, matching the graph's input signature).
pub fn count_flops(graph: &GraphSpec, input_shape: &[usize]) -> Result<CostReport> {
    let sig = graph.input_shape();
    if input_shape.len() != sig.len() + 1 || &input_shape[1..] != sig {
        return Err(Error::shape(format!(
            "input shape {:?} does not match signature [B, {:?}]",
            input_shape, sig
        )));
    }
    if input_shape[0] == 0 {
        return Err(Error::shape("batch extent must be >= 1"));
    }
    Ok(CostReport::from_rows(build_rows(
        graph,
        Some(input_shape[0] as u64),
    )))
}

fn shape_label(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Renders a report losslessly. The CSV header is fixed:
/// `name,kind,output_shape,params,multiply_adds`, with a final `total`
/// row; layer names never contain commas or quotes, so fields are plain.
pub fn render_report(report: &CostReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("name,kind,output_shape,params,multiply_adds\n");
            for row in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.name,
                    row.kind,
                    shape_label(&row.output_shape),
                    row.params,
                    row.macs
                ));
            }
            out.push_str(&format!(
                "total,,,{},{}\n",
                report.total_params, report.total_macs
            ));
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| layer | kind | output | params | multiply-adds |\n|---|---|---:|---:|---:|\n",
            );
            for row in &report.rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    row.name,
                    row.kind,
                    shape_label(&row.output_shape),
                    row.params,
                    row.macs
                ));
            }
            out.push_str(&format!(
                "| **total** | | | {} | {} |\n",
                report.total_params, report.total_macs
            ));
            out
        }
    }
}
