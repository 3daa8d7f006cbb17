//! SGD training loop with momentum, decoupled weight decay, and a step
//! learning-rate schedule; plus the synthetic motion dataset and the
//! multi-clip evaluation protocol.

mod data;
mod eval;

pub use data::{
    direction_label, generate_motion_dataset, generate_motion_video, stack_clips, LabeledClip,
    MotionDataset, SyntheticMotionSpec,
};
pub use eval::{accuracy, evaluate_clips, temporal_shuffle, ClipPrediction};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{backward, forward_train, softmax_cross_entropy, GraphSpec, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Optimizer settings: momentum 0.9, weight decay 1e-4, and a step decay
/// that multiplies the rate by `decay_factor` at each milestone.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    /// 1-based iteration numbers at which the rate decays.
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Stop at an epoch boundary once validation accuracy reaches this.
    pub target_val_accuracy: Option<f64>,
}

impl OptimizerConfig {
    /// Toy-run defaults; milestones at 50/75/90% of `max_iterations`.
    pub fn toy(max_iterations: usize) -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_factor: 0.1,
            milestones: default_milestones(max_iterations),
            batch_size: 8,
            max_iterations,
            seed: 0,
            target_val_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum {} must lie in [0,1)",
                self.momentum
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::config(format!(
                "decay factor {} must lie in (0,1)",
                self.decay_factor
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight decay {} is invalid",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.max_iterations == 0 {
            return Err(Error::config("batch size and iteration budget must be > 0"));
        }
        Ok(())
    }

    /// Learning rate in effect for a 1-based iteration number.
    pub fn rate_at(&self, iteration: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= iteration).count();
        self.learning_rate * self.decay_factor.powi(drops as i32)
    }
}

/// Milestones at 50%, 75% and 90% of the iteration budget.
pub fn default_milestones(max_iterations: usize) -> Vec<usize> {
    vec![
        max_iterations / 2,
        max_iterations * 3 / 4,
        max_iterations * 9 / 10,
    ]
}

/// Momentum buffers, keyed like the parameter store.
#[derive(Debug, Clone)]
pub struct SgdState<T: Scalar> {
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new() -> Self {
        SgdState {
            velocity: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Default for SgdState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// One SGD update over every learnable parameter:
/// `v <- momentum*v + g`; `w <- w - lr*(v + weight_decay*w)`.
///
/// Weight decay is decoupled from the momentum buffer, so zero gradients
/// shrink weights by exactly `(1 - lr*weight_decay)` per step.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut SgdState<T>,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = T::from_f64(learning_rate);
    let mom = T::from_f64(momentum);
    let wd = T::from_f64(weight_decay);
    for (name, value, grad) in params.params_and_grads_mut() {
        let v = state
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(value.shape()));
        for ((w, &g), vel) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(v.data_mut())
        {
            *vel = mom * *vel + g;
            *w = *w - lr * (*vel + wd * *w);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub end_iteration: usize,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Per-iteration loss and learning-rate trace plus per-epoch accuracies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_accuracy)
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.epochs
            .iter()
            .map(|e| e.val_accuracy)
            .fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
    }

    /// CSV with one row per iteration; accuracy columns are filled on the
    /// rows where an epoch ends.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,lr,train_accuracy,val_accuracy\n");
        let by_end: BTreeMap<usize, &EpochRecord> =
            self.epochs.iter().map(|e| (e.end_iteration, e)).collect();
        for it in &self.iterations {
            let _ = write!(out, "{},{},{}", it.iteration, it.loss, it.learning_rate);
            match by_end.get(&it.iteration) {
                Some(e) => {
                    let _ = writeln!(out, ",{},{}", e.train_accuracy, e.val_accuracy);
                }
                None => out.push_str(",,\n"),
            }
        }
        out
    }
}

/// Runs SGD on the dataset's training split.
///
/// Fully reproducible given the seed (single-threaded, deterministic
/// shuffling); aborts with a diagnostic if the loss leaves the finite
/// range. Accuracies are evaluated at every epoch boundary; training
/// stops early once `target_val_accuracy` is reached.
pub fn train<T: Scalar>(
    graph: &GraphSpec,
    params: &mut ParamStore<T>,
    dataset: &MotionDataset<T>,
    cfg: &OptimizerConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    for item in dataset.train.iter().chain(&dataset.val) {
        if item.clip.shape() != graph.input_shape() {
            return Err(Error::shape(format!(
                "clip shape {:?} does not match input signature {:?}",
                item.clip.shape(),
                graph.input_shape()
            )));
        }
    }
    let classes = graph.output_shape()[0];
    if let Some(&bad) = dataset
        .train
        .iter()
        .chain(&dataset.val)
        .map(|c| &c.label)
        .find(|&&l| l >= classes)
    {
        return Err(Error::config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::new();
    let mut history = TrainHistory::default();
    let mut iteration = 0usize;
    let mut epoch = 0usize;

    'outer: loop {
        epoch += 1;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            iteration += 1;
            let clips: Vec<&Tensor<T>> = chunk.iter().map(|&i| &dataset.train[i].clip).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.train[i].label).collect();
            let batch = stack_clips(&clips)?;

            let (logits, trace) = forward_train(graph, params, &batch)?;
            let (loss, loss_grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became {loss} at iteration {iteration}"
                )));
            }
            params.zero_grads();
            backward(graph, params, &trace, &loss_grad)?;
            let lr = cfg.rate_at(iteration);
            sgd_step(params, &mut state, lr, cfg.momentum, cfg.weight_decay);
            history.iterations.push(IterationRecord {
                iteration,
                loss,
                learning_rate: lr,
            });
            if iteration >= cfg.max_iterations {
                break;
            }
        }

        let train_acc = accuracy(graph, params, &dataset.train, cfg.batch_size)?;
        let val_acc = if dataset.val.is_empty() {
            train_acc
        } else {
            accuracy(graph, params, &dataset.val, cfg.batch_size)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            end_iteration: iteration,
            train_accuracy: train_acc,
            val_accuracy: val_acc,
        });
        if let Some(target) = cfg.target_val_accuracy {
            if val_acc >= target {
                break 'outer;
            }
        }
        if iteration >= cfg.max_iterations {
            break 'outer;
        }
    }
    Ok(history)
}
