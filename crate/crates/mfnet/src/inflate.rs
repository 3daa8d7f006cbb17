//! 2D→3D checkpoint inflation by temporal kernel replication.
//!
//! Each 2D conv kernel is replicated across the new temporal axis and
//! divided by the temporal extent `kt`, so a temporally constant input
//! produces the activations of the 2D source (under replicate temporal
//! padding). Everything else — batch-norm parameters, running statistics,
//! biases, fully connected weights — is copied verbatim, byte for byte.
//!
//! Exactness: when `k / kt` divides exactly every slice is identical and
//! the temporal sum recovers `k` bitwise. Otherwise the last slice
//! absorbs the rounding residual `k - (kt-1)*a`; for `kt <= 3` the
//! running sums `a`, `2a` and the final addition are exact (Sterbenz),
//! so a left-fold over temporal slices is bitwise `k` while the slices
//! stay identical to within one ulp. The networks here use `kt` 1 or 3.

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, ParamRole};
use crate::io::{graph_fingerprint, Checkpoint, TensorRecord};
use crate::tensor::{Precision, Scalar};

/// Expands one spatial kernel value into `kt` temporal slice values.
fn temporal_slices<T: Scalar>(k: T, kt: usize) -> Vec<T> {
    let kt_t = T::from_f64(kt as f64);
    let a = k / kt_t;
    let mut out = vec![a; kt];
    if a * kt_t != k && kt > 1 {
        out[kt - 1] = k - T::from_f64((kt - 1) as f64) * a;
    }
    out
}

fn inflate_kernel<T: Scalar>(src: &[T], blocks: usize, area: usize, kt: usize) -> Vec<T> {
    let mut out = vec![T::zero(); blocks * kt * area];
    for b in 0..blocks {
        for ij in 0..area {
            let slices = temporal_slices(src[b * area + ij], kt);
            for (t, &v) in slices.iter().enumerate() {
                out[(b * kt + t) * area + ij] = v;
            }
        }
    }
    out
}

fn inflate_record(rec: &TensorRecord, shape3d: &[usize]) -> TensorRecord {
    let blocks = shape3d[0] * shape3d[1];
    let area = shape3d[3] * shape3d[4];
    let kt = shape3d[2];
    match rec.precision {
        Precision::Double => {
            let src = rec.to_f64_vec();
            let out = inflate_kernel(&src, blocks, area, kt);
            TensorRecord::from_f64_values(&rec.name, rec.precision, shape3d, &out)
        }
        Precision::Single => {
            // Inflate in the source precision so the bitwise-sum property
            // holds in f32 arithmetic too.
            let src: Vec<f32> = rec
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let out = inflate_kernel(&src, blocks, area, kt);
            let mut payload = Vec::with_capacity(out.len() * 4);
            for v in &out {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            TensorRecord {
                name: rec.name.clone(),
                precision: rec.precision,
                shape: shape3d.to_vec(),
                payload,
            }
        }
    }
}

/// Transforms a trained 2D checkpoint into an initialization for the
/// matching 3D graph.
///
/// `graph3d` must be the temporal extension of `graph2d`: same layer
/// names and widths, spatial kernels unchanged, conv weights gaining a
/// temporal axis. Mismatches fail with an error naming the offending
/// layer. The transform is deterministic: inflating the same source
/// twice yields identical checkpoints.
pub fn inflate_checkpoint(
    ckpt2d: &Checkpoint,
    graph2d: &GraphSpec,
    graph3d: &GraphSpec,
) -> Result<Checkpoint> {
    if ckpt2d.fingerprint != graph_fingerprint(graph2d) {
        return Err(Error::structure(
            "source checkpoint does not match the 2D graph",
        ));
    }

    let mut tensors = Vec::with_capacity(graph3d.params().len());
    for info in graph3d.params() {
        let src_info = graph2d.param(&info.name).ok_or_else(|| {
            Error::structure(format!(
                "layer {:?}: parameter {:?} has no 2D counterpart",
                info.layer, info.name
            ))
        })?;
        let rec = ckpt2d.tensor(&info.name).ok_or_else(|| {
            Error::structure(format!(
                "checkpoint is missing parameter {:?} (layer {:?})",
                info.name, info.layer
            ))
        })?;
        if rec.shape != src_info.shape {
            return Err(Error::structure(format!(
                "layer {:?}: checkpoint tensor {:?} has shape {:?}, 2D graph expects {:?}",
                info.layer, info.name, rec.shape, src_info.shape
            )));
        }

        let is_weight = matches!(info.role, ParamRole::Weight { .. });
        let needs_inflation = is_weight && info.shape.len() == 5 && src_info.shape.len() == 4;
        if needs_inflation {
            let spatial_match = info.shape[0] == src_info.shape[0]
                && info.shape[1] == src_info.shape[1]
                && info.shape[3] == src_info.shape[2]
                && info.shape[4] == src_info.shape[3];
            if !spatial_match {
                return Err(Error::structure(format!(
                    "layer {:?}: 2D kernel {:?} is not the spatial restriction of {:?}",
                    info.layer, src_info.shape, info.shape
                )));
            }
            tensors.push(inflate_record(rec, &info.shape));
        } else {
            if info.shape != src_info.shape {
                return Err(Error::structure(format!(
                    "layer {:?}: parameter {:?} changes shape {:?} -> {:?} and is not an inflatable kernel",
                    info.layer, info.name, src_info.shape, info.shape
                )));
            }
            tensors.push(rec.clone());
        }
    }

    // Anything the 2D graph carries beyond the 3D parameter table means
    // the graphs are not a 2D/3D pair.
    for info in graph2d.params() {
        if graph3d.param(&info.name).is_none() {
            return Err(Error::structure(format!(
                "layer {:?}: 2D parameter {:?} has no 3D counterpart",
                info.layer, info.name
            )));
        }
    }

    Ok(Checkpoint {
        version: ckpt2d.version,
        fingerprint: graph_fingerprint(graph3d),
        metadata: ckpt2d.metadata.clone(),
        tensors,
    })
}
