//! Multi-clip evaluation protocol and accuracy helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{stack_clips, LabeledClip};
use crate::error::{Error, Result};
use crate::graph::{infer, softmax_rows, GraphSpec, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    /// Mean softmax distribution over the sampled clips; sums to one.
    pub distribution: Vec<f64>,
    pub argmax: usize,
}

/// Averages clip predictions sampled from a long video.
///
/// `video` is a per-sample tensor `[C, T_video, H, W]` with at least the
/// model's clip length of frames. Start offsets are drawn uniformly
/// without replacement (seeded); when `num_samples` covers every valid
/// offset the average equals the exhaustive enumeration mean.
pub fn evaluate_clips<T: Scalar>(
    graph: &GraphSpec,
    params: &ParamStore<T>,
    video: &Tensor<T>,
    num_samples: usize,
    seed: u64,
) -> Result<ClipPrediction> {
    let sig = graph.input_shape();
    if sig.len() != 4 {
        return Err(Error::contract(
            "evaluate_clips needs a clip-input (3D) network",
        ));
    }
    if video.rank() != 4 || video.shape()[0] != sig[0] {
        return Err(Error::shape(format!(
            "video shape {:?} incompatible with input signature {:?}",
            video.shape(),
            sig
        )));
    }
    let clip_len = sig[1];
    let video_len = video.shape()[1];
    if video_len < clip_len {
        return Err(Error::contract(format!(
            "video has {video_len} frames, the model clip needs {clip_len}"
        )));
    }
    if video.shape()[2..] != sig[2..] {
        return Err(Error::shape(format!(
            "video frames are {:?}, the model expects {:?}",
            &video.shape()[2..],
            &sig[2..]
        )));
    }
    if num_samples == 0 {
        return Err(Error::contract("num_samples must be >= 1"));
    }

    let num_offsets = video_len - clip_len + 1;
    let offsets: Vec<usize> = if num_samples >= num_offsets {
        (0..num_offsets).collect()
    } else {
        // Partial Fisher-Yates draw without replacement.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool: Vec<usize> = (0..num_offsets).collect();
        for i in 0..num_samples {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(num_samples);
        pool
    };

    let (channels, h, w) = (sig[0], sig[2], sig[3]);
    let frame_px = h * w;
    let classes = graph.output_shape()[0];
    let mut mean = vec![0.0f64; classes];
    for &off in &offsets {
        let mut data = Vec::with_capacity(channels * clip_len * frame_px);
        for c in 0..channels {
            let chan = &video.data()[c * video_len * frame_px..(c + 1) * video_len * frame_px];
            data.extend_from_slice(&chan[off * frame_px..(off + clip_len) * frame_px]);
        }
        let mut shape = vec![1];
        shape.extend_from_slice(sig);
        let clip = Tensor::from_vec(&shape, data)?;
        let logits = infer(graph, params, &clip)?;
        let probs = softmax_rows(&logits)?;
        for (slot, &p) in mean.iter_mut().zip(probs.data()) {
            *slot += Scalar::to_f64(p);
        }
    }
    let n = offsets.len() as f64;
    for v in &mut mean {
        *v /= n;
    }
    let argmax = mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(ClipPrediction {
        distribution: mean,
        argmax,
    })
}

/// Permutes the temporal axis of a per-sample clip `[C, T, ...]` with a
/// seeded shuffle.
pub fn temporal_shuffle<T: Scalar>(clip: &Tensor<T>, seed: u64) -> Tensor<T> {
    let frames = clip.shape()[1];
    let mut order: Vec<usize> = (0..frames).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..frames).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let channels = clip.shape()[0];
    let frame_px: usize = clip.shape()[2..].iter().product();
    let mut out = Tensor::zeros(clip.shape());
    for c in 0..channels {
        for (dst, &src) in order.iter().enumerate() {
            let from = (c * frames + src) * frame_px;
            let to = (c * frames + dst) * frame_px;
            out.data_mut()[to..to + frame_px]
                .copy_from_slice(&clip.data()[from..from + frame_px]);
        }
    }
    out
}

/// Top-1 accuracy of the network on labeled clips, batched inference.
pub fn accuracy<T: Scalar>(
    graph: &GraphSpec,
    params: &ParamStore<T>,
    clips: &[LabeledClip<T>],
    batch_size: usize,
) -> Result<f64> {
    if clips.is_empty() {
        return Err(Error::contract("accuracy over an empty clip set"));
    }
    let classes = graph.output_shape()[0];
    let mut hits = 0usize;
    for chunk in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor<T>> = chunk.iter().map(|c| &c.clip).collect();
        let batch = stack_clips(&refs)?;
        let logits = infer(graph, params, &batch)?;
        for (row, item) in chunk.iter().enumerate() {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0usize;
            for k in 1..classes {
                if scores[k] > scores[best] {
                    best = k;
                }
            }
            if best == item.label {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / clips.len() as f64)
}
