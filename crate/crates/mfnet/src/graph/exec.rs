//! Forward evaluation and reverse-mode gradients over a [`GraphSpec`].

use std::collections::HashMap;

use super::{GraphSpec, LayerKind, LayerSpec, ParamStore, INPUT};
use crate::error::{Error, Result};
use crate::tensor::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, conv2d, conv3d, conv_backward,
    linear, linear_backward, pool, pool_backward, BnCache, Scalar, Tensor,
};

/// Activations retained by a training-mode forward pass, consumed by
/// [`backward`].
pub struct Trace<T: Scalar> {
    values: HashMap<String, Tensor<T>>,
    bn: HashMap<String, BnCache<T>>,
}

impl<T: Scalar> Trace<T> {
    /// Retained output of a layer (or the graph input).
    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.values.get(name)
    }
}

fn check_input<T: Scalar>(graph: &GraphSpec, input: &Tensor<T>) -> Result<usize> {
    let sig = graph.input_shape();
    if input.rank() != sig.len() + 1 || &input.shape()[1..] != sig {
        return Err(Error::shape(format!(
            "input shape {:?} does not match signature [B, {:?}]",
            input.shape(),
            sig
        )));
    }
    if input.shape()[0] == 0 {
        return Err(Error::shape("batch extent must be >= 1"));
    }
    Ok(input.shape()[0])
}

fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b_n, c_n) = (x.shape()[0], x.shape()[1]);
    let plane: usize = x.shape()[2..].iter().product();
    let scale = T::from_f64(plane as f64);
    let mut out = Tensor::zeros(&[b_n, c_n]);
    for bc in 0..b_n * c_n {
        let mut acc = T::zero();
        for i in 0..plane {
            acc += x.data()[bc * plane + i];
        }
        out.data_mut()[bc] = acc / scale;
    }
    out
}

fn flatten_batched<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let b_n = x.shape()[0];
    let rest: usize = x.shape()[1..].iter().product();
    x.reshape(&[b_n, rest]).expect("element count unchanged")
}

enum BnMode {
    Train,
    Infer,
}

fn eval_layer<T: Scalar>(
    layer: &LayerSpec,
    inputs: &[&Tensor<T>],
    params: &mut ParamStore<T>,
    bn_mode: &BnMode,
    bn_out: Option<&mut HashMap<String, BnCache<T>>>,
) -> Result<Tensor<T>> {
    let x = inputs[0];
    match &layer.kind {
        LayerKind::Conv { spec, bias } => {
            let weight = params.param(&format!("{}.weight", layer.name))?.clone();
            let bias_t = if *bias {
                Some(params.param(&format!("{}.bias", layer.name))?.clone())
            } else {
                None
            };
            if spec.spatial_rank() == 2 {
                conv2d(x, &weight, bias_t.as_ref(), spec)
            } else {
                conv3d(x, &weight, bias_t.as_ref(), spec)
            }
        }
        LayerKind::BatchNorm { eps, momentum } => {
            let gamma = params.param(&format!("{}.gamma", layer.name))?.clone();
            let beta = params.param(&format!("{}.beta", layer.name))?.clone();
            let mean_name = format!("{}.running_mean", layer.name);
            let var_name = format!("{}.running_var", layer.name);
            match bn_mode {
                BnMode::Infer => {
                    let rm = params.running(&mean_name)?.clone();
                    let rv = params.running(&var_name)?.clone();
                    batch_norm_infer(x, &gamma, &beta, &rm, &rv, *eps)
                }
                BnMode::Train => {
                    let mut rm = params.running(&mean_name)?.clone();
                    let mut rv = params.running(&var_name)?.clone();
                    let (out, cache) =
                        batch_norm_train(x, &gamma, &beta, &mut rm, &mut rv, *eps, *momentum)?;
                    *params.running_mut(&mean_name)? = rm;
                    *params.running_mut(&var_name)? = rv;
                    if let Some(map) = bn_out {
                        map.insert(layer.name.clone(), cache);
                    }
                    Ok(out)
                }
            }
        }
        LayerKind::Relu => Ok(x.relu()),
        LayerKind::Pool(spec) => pool(x, spec),
        LayerKind::GlobalAvgPool => Ok(global_avg_pool(x)),
        LayerKind::Flatten => Ok(flatten_batched(x)),
        LayerKind::Linear { bias, .. } => {
            let weight = params.param(&format!("{}.weight", layer.name))?.clone();
            let bias_t = if *bias {
                Some(params.param(&format!("{}.bias", layer.name))?.clone())
            } else {
                None
            };
            linear(x, &weight, bias_t.as_ref())
        }
        LayerKind::Add => inputs[0].add(inputs[1]),
    }
}

fn run<T: Scalar>(
    graph: &GraphSpec,
    params: &mut ParamStore<T>,
    input: &Tensor<T>,
    bn_mode: BnMode,
    retain: bool,
) -> Result<(Tensor<T>, Trace<T>)> {
    check_input(graph, input)?;

    // Without retention, free each activation once its last consumer ran.
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for layer in graph.layers() {
        for src in &layer.inputs {
            *remaining.entry(src.as_str()).or_insert(0) += 1;
        }
    }
    *remaining.entry(graph.output()).or_insert(0) += 1;

    let mut values: HashMap<String, Tensor<T>> = HashMap::new();
    let mut bn: HashMap<String, BnCache<T>> = HashMap::new();
    values.insert(INPUT.to_string(), input.clone());

    for layer in graph.layers() {
        let inputs: Vec<&Tensor<T>> = layer
            .inputs
            .iter()
            .map(|src| {
                values
                    .get(src)
                    .ok_or_else(|| Error::contract(format!("value {src:?} not available")))
            })
            .collect::<Result<_>>()?;
        // eval_layer needs &mut params for running stats, so inputs are
        // cloned out of the map only when the borrow checker demands it.
        let inputs_owned: Vec<Tensor<T>> = inputs.into_iter().cloned().collect();
        let input_refs: Vec<&Tensor<T>> = inputs_owned.iter().collect();
        let out = eval_layer(layer, &input_refs, params, &bn_mode, Some(&mut bn))?;
        values.insert(layer.name.clone(), out);

        if !retain {
            for src in &layer.inputs {
                if let Some(n) = remaining.get_mut(src.as_str()) {
                    *n -= 1;
                    if *n == 0 && src != graph.output() {
                        values.remove(src.as_str());
                    }
                }
            }
        }
    }

    let output = values
        .get(graph.output())
        .ok_or_else(|| Error::contract("graph output was not computed"))?
        .clone();
    Ok((output, Trace { values, bn }))
}

/// Training-mode forward pass: normalizes by batch statistics, updates
/// running statistics, and retains the activations backward needs.
pub fn forward_train<T: Scalar>(
    graph: &GraphSpec,
    params: &mut ParamStore<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Trace<T>)> {
    run(graph, params, input, BnMode::Train, true)
}

/// Inference-mode forward pass; mutates nothing.
pub fn infer<T: Scalar>(
    graph: &GraphSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut scratch = params.clone();
    let (out, _) = run(graph, &mut scratch, input, BnMode::Infer, false)?;
    Ok(out)
}

/// Inference-mode forward pass that retains every layer output, keyed by
/// layer name (plus [`INPUT`]).
pub fn infer_with_activations<T: Scalar>(
    graph: &GraphSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, HashMap<String, Tensor<T>>)> {
    let mut scratch = params.clone();
    let (out, trace) = run(graph, &mut scratch, input, BnMode::Infer, true)?;
    Ok((out, trace.values))
}

fn accumulate<T: Scalar>(map: &mut HashMap<String, Tensor<T>>, name: &str, delta: Tensor<T>) {
    match map.get_mut(name) {
        Some(t) => t.add_scaled(&delta, T::one()),
        None => {
            map.insert(name.to_string(), delta);
        }
    }
}

/// Reverse-mode pass over a retained trace. Fills every parameter
/// gradient slot in `params` (accumulating) and returns the gradient with
/// respect to the graph input.
pub fn backward<T: Scalar>(
    graph: &GraphSpec,
    params: &mut ParamStore<T>,
    trace: &Trace<T>,
    loss_grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    let out_val = trace.values.get(graph.output()).ok_or_else(|| {
        Error::contract("backward called without a retained forward trace")
    })?;
    if loss_grad.shape() != out_val.shape() {
        return Err(Error::shape(format!(
            "loss gradient shape {:?}, output is {:?}",
            loss_grad.shape(),
            out_val.shape()
        )));
    }

    let mut grads: HashMap<String, Tensor<T>> = HashMap::new();
    grads.insert(graph.output().to_string(), loss_grad.clone());

    for layer in graph.layers().iter().rev() {
        let Some(g) = grads.remove(&layer.name) else {
            continue;
        };
        let saved = |src: &str| -> Result<&Tensor<T>> {
            trace.values.get(src).ok_or_else(|| {
                Error::contract(format!("trace is missing the activation of {src:?}"))
            })
        };
        match &layer.kind {
            LayerKind::Conv { spec, bias } => {
                let x = saved(&layer.inputs[0])?;
                let w = params.param(&format!("{}.weight", layer.name))?.clone();
                let out = conv_backward(x, &w, spec, &g, *bias)?;
                params.accumulate_grad(&format!("{}.weight", layer.name), &out.weight)?;
                if let Some(gb) = out.bias {
                    params.accumulate_grad(&format!("{}.bias", layer.name), &gb)?;
                }
                accumulate(&mut grads, &layer.inputs[0], out.input);
            }
            LayerKind::BatchNorm { .. } => {
                let x = saved(&layer.inputs[0])?;
                let cache = trace.bn.get(&layer.name).ok_or_else(|| {
                    Error::contract(format!(
                        "no batch statistics retained for {:?}; was forward run in train mode?",
                        layer.name
                    ))
                })?;
                let gamma = params.param(&format!("{}.gamma", layer.name))?.clone();
                let out = batch_norm_backward(x, &gamma, cache, &g)?;
                params.accumulate_grad(&format!("{}.gamma", layer.name), &out.gamma)?;
                params.accumulate_grad(&format!("{}.beta", layer.name), &out.beta)?;
                accumulate(&mut grads, &layer.inputs[0], out.input);
            }
            LayerKind::Relu => {
                let x = saved(&layer.inputs[0])?;
                accumulate(&mut grads, &layer.inputs[0], Tensor::relu_backward(x, &g));
            }
            LayerKind::Pool(spec) => {
                let x = saved(&layer.inputs[0])?;
                accumulate(&mut grads, &layer.inputs[0], pool_backward(x, spec, &g)?);
            }
            LayerKind::GlobalAvgPool => {
                let x = saved(&layer.inputs[0])?;
                let plane: usize = x.shape()[2..].iter().product();
                let scale = T::from_f64(plane as f64);
                let mut gx = Tensor::zeros(x.shape());
                let bc_n = x.shape()[0] * x.shape()[1];
                for bc in 0..bc_n {
                    let share = g.data()[bc] / scale;
                    for i in 0..plane {
                        gx.data_mut()[bc * plane + i] = share;
                    }
                }
                accumulate(&mut grads, &layer.inputs[0], gx);
            }
            LayerKind::Flatten => {
                let x = saved(&layer.inputs[0])?;
                accumulate(&mut grads, &layer.inputs[0], g.reshape(x.shape())?);
            }
            LayerKind::Linear { bias, .. } => {
                let x = saved(&layer.inputs[0])?;
                let w = params.param(&format!("{}.weight", layer.name))?.clone();
                let out = linear_backward(x, &w, &g, *bias)?;
                params.accumulate_grad(&format!("{}.weight", layer.name), &out.weight)?;
                if let Some(gb) = out.bias {
                    params.accumulate_grad(&format!("{}.bias", layer.name), &gb)?;
                }
                accumulate(&mut grads, &layer.inputs[0], out.input);
            }
            LayerKind::Add => {
                accumulate(&mut grads, &layer.inputs[0], g.clone());
                accumulate(&mut grads, &layer.inputs[1], g);
            }
        }
    }

    Ok(grads
        .remove(INPUT)
        .unwrap_or_else(|| Tensor::zeros(trace.values[INPUT].shape())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{init_params, GraphBuilder};
    use crate::tensor::ConvSpec;

    #[test]
    fn single_relu_layer() {
        let mut g = GraphBuilder::new(&[2]);
        let r = g.relu("r", INPUT).unwrap();
        let graph = g.finish(&r).unwrap();
        let params = init_params::<f64>(&graph, 0);
        let x = Tensor::from_vec(&[1, 2], vec![-1.0, 2.0]).unwrap();
        let y = infer(&graph, &params, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_branch_residual_passes_shortcut_through() {
        let mut g = GraphBuilder::new(&[2, 4, 4]);
        let c = g
            .conv(
                "branch",
                INPUT,
                ConvSpec::new(2, 2, &[3, 3]).with_padding(&[1, 1]),
                false,
            )
            .unwrap();
        let s = g.add("join", &c, INPUT).unwrap();
        let graph = g.finish(&s).unwrap();
        let mut params = init_params::<f64>(&graph, 5);
        *params.param_mut("branch.weight").unwrap() =
            Tensor::zeros(&[2, 2, 3, 3]);
        let x = Tensor::from_vec(&[1, 2, 4, 4], (0..32).map(|v| v as f64 * 0.5).collect())
            .unwrap();
        let y = infer(&graph, &params, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn infer_is_pure_and_repeatable() {
        let mut g = GraphBuilder::new(&[2, 4, 4]);
        let c = g.conv("c", INPUT, ConvSpec::new(2, 3, &[3, 3]), false).unwrap();
        let b = g.batch_norm("b", &c).unwrap();
        let graph = g.finish(&b).unwrap();
        let params = init_params::<f64>(&graph, 9);
        let before = params.running("b.running_mean").unwrap().clone();
        let x = Tensor::filled(&[2, 2, 4, 4], 0.3);
        let y1 = infer(&graph, &params, &x).unwrap();
        let y2 = infer(&graph, &params, &x).unwrap();
        assert_eq!(y1.data(), y2.data());
        assert_eq!(before.data(), params.running("b.running_mean").unwrap().data());
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut g = GraphBuilder::new(&[2, 4, 4]);
        let b = g.batch_norm("b", INPUT).unwrap();
        let graph = g.finish(&b).unwrap();
        let mut params = init_params::<f64>(&graph, 9);
        let x = Tensor::filled(&[2, 2, 4, 4], 1.5);
        forward_train(&graph, &mut params, &x).unwrap();
        let rm = params.running("b.running_mean").unwrap();
        assert!((rm.data()[0] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_matches_hand_chain_rule() {
        // One sample, squared-error loss: d loss / d w = 2 (pred - t) x.
        let mut g = GraphBuilder::new(&[3]);
        let f = g.linear("fc", INPUT, 1, false).unwrap();
        let graph = g.finish(&f).unwrap();
        let mut params = init_params::<f64>(&graph, 1);
        *params.param_mut("fc.weight").unwrap() =
            Tensor::from_vec(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (pred, trace) = forward_train(&graph, &mut params, &x).unwrap();
        let target = 0.7;
        let diff = pred.data()[0] - target;
        let loss_grad = Tensor::from_vec(&[1, 1], vec![2.0 * diff]).unwrap();
        let gx = backward(&graph, &mut params, &trace, &loss_grad).unwrap();
        let gw = params.grad("fc.weight").unwrap();
        for (i, &xi) in x.data().iter().enumerate() {
            assert!((gw.data()[i] - 2.0 * diff * xi).abs() < 1e-12);
        }
        // input gradient: 2 (pred - t) w
        let w = params.param("fc.weight").unwrap();
        for (i, &wi) in w.data().iter().enumerate() {
            assert!((gx.data()[i] - 2.0 * diff * wi).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_input_grad_is_identity_plus_branch_jacobian() {
        // y = x + W x, scalar loss grad g: dx = g + W^T g.
        let mut g = GraphBuilder::new(&[3]);
        let lin = g.linear("w", INPUT, 3, false).unwrap();
        let out = g.add("join", &lin, INPUT).unwrap();
        let graph = g.finish(&out).unwrap();
        let mut params = init_params::<f64>(&graph, 2);
        let w = params.param("w.weight").unwrap().clone();
        let x = Tensor::from_vec(&[1, 3], vec![0.2, -0.4, 1.0]).unwrap();
        let (_, trace) = forward_train(&graph, &mut params, &x).unwrap();
        let lg = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let gx = backward(&graph, &mut params, &trace, &lg).unwrap();
        for c in 0..3 {
            let mut expect = lg.data()[c];
            for k in 0..3 {
                expect += w.get(&[k, c]) * lg.data()[k];
            }
            assert!((gx.data()[c] - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn input_signature_is_enforced() {
        let mut g = GraphBuilder::new(&[2, 4, 4]);
        let r = g.relu("r", INPUT).unwrap();
        let graph = g.finish(&r).unwrap();
        let params = init_params::<f64>(&graph, 0);
        let bad = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        assert!(matches!(infer(&graph, &params, &bad), Err(Error::Shape(_))));
    }
}
