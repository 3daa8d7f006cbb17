//! Parameter storage and seeded initialization.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GraphSpec, ParamRole};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named tensors of one network instance: learnable parameters, their
/// gradient slots, and batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    params: BTreeMap<String, Tensor<T>>,
    grads: BTreeMap<String, Tensor<T>>,
    running: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn empty() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
            running: BTreeMap::new(),
        }
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::structure(format!("unknown parameter {name:?}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::structure(format!("unknown parameter {name:?}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::structure(format!("no gradient slot for {name:?}")))
    }

    pub fn running(&self, name: &str) -> Result<&Tensor<T>> {
        self.running
            .get(name)
            .ok_or_else(|| Error::structure(format!("unknown running statistic {name:?}")))
    }

    pub fn running_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.running
            .get_mut(name)
            .ok_or_else(|| Error::structure(format!("unknown running statistic {name:?}")))
    }

    pub(crate) fn insert_param(&mut self, name: &str, value: Tensor<T>) {
        self.grads.insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
    }

    pub(crate) fn insert_running(&mut self, name: &str, value: Tensor<T>) {
        self.running.insert(name.to_string(), value);
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, delta: &Tensor<T>) -> Result<()> {
        let slot = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::structure(format!("no gradient slot for {name:?}")))?;
        slot.add_scaled(delta, T::one());
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v = T::zero();
            }
        }
    }

    /// Learnable parameter names in sorted order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn running_names(&self) -> impl Iterator<Item = &str> {
        self.running.keys().map(|s| s.as_str())
    }

    /// Sorted (name, tensor) view over parameters and running statistics,
    /// the order used for serialization.
    pub fn all_tensors(&self) -> Vec<(&str, &Tensor<T>)> {
        let mut out: Vec<(&str, &Tensor<T>)> = self
            .params
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(self.running.iter().map(|(k, v)| (k.as_str(), v)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn learnable_element_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Iterates `(name, param, grad)` in sorted name order.
    pub fn params_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<T>, &mut Tensor<T>)> {
        self.params
            .iter_mut()
            .zip(self.grads.iter_mut())
            .map(|((name, p), (_, g))| (name.as_str(), p, g))
    }

    /// Checks that the store carries exactly the graph's parameter table
    /// with exactly the declared shapes.
    pub fn validate_against(&self, graph: &GraphSpec) -> Result<()> {
        let mut expected = 0usize;
        for info in graph.params() {
            expected += 1;
            let found = if info.role.is_learnable() {
                self.params.get(&info.name)
            } else {
                self.running.get(&info.name)
            };
            match found {
                None => {
                    return Err(Error::structure(format!(
                        "missing parameter {:?} (layer {:?})",
                        info.name, info.layer
                    )))
                }
                Some(t) if t.shape() != info.shape.as_slice() => {
                    return Err(Error::structure(format!(
                        "parameter {:?} has shape {:?}, graph expects {:?}",
                        info.name,
                        t.shape(),
                        info.shape
                    )))
                }
                Some(_) => {}
            }
        }
        let have = self.params.len() + self.running.len();
        if have != expected {
            return Err(Error::structure(format!(
                "store has {have} tensors, graph expects {expected}"
            )));
        }
        Ok(())
    }
}

/// Builds a [`ParamStore`] for `graph`, fully determined by `seed`.
///
/// Convolution and linear weights draw from a zero-mean normal with
/// variance `2 / fan_in`; biases and batch-norm betas are zero, gammas
/// one; running statistics start at mean 0, variance 1.
pub fn init_params<T: Scalar>(graph: &GraphSpec, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::empty();
    for info in graph.params() {
        let n: usize = info.shape.iter().product();
        match info.role {
            ParamRole::Weight { fan_in } => {
                let sigma = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, sigma).expect("valid normal");
                let data: Vec<T> = (0..n)
                    .map(|_| T::from_f64(dist.sample(&mut rng)))
                    .collect();
                store.insert_param(
                    &info.name,
                    Tensor::from_vec(&info.shape, data).expect("shape/size consistent"),
                );
            }
            ParamRole::Bias | ParamRole::Beta => {
                store.insert_param(&info.name, Tensor::zeros(&info.shape));
            }
            ParamRole::Gamma => {
                store.insert_param(&info.name, Tensor::filled(&info.shape, T::one()));
            }
            ParamRole::RunningMean => {
                store.insert_running(&info.name, Tensor::zeros(&info.shape));
            }
            ParamRole::RunningVar => {
                store.insert_running(&info.name, Tensor::filled(&info.shape, T::one()));
            }
        }
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, INPUT};
    use crate::tensor::ConvSpec;

    fn toy_graph() -> GraphSpec {
        let mut g = GraphBuilder::new(&[32, 6, 6]);
        let c = g
            .conv(
                "c1",
                INPUT,
                ConvSpec::new(32, 64, &[3, 3]).with_padding(&[1, 1]),
                false,
            )
            .unwrap();
        let b = g.batch_norm("b1", &c).unwrap();
        let p = g.global_avg_pool("gap", &b).unwrap();
        let f = g.linear("fc", &p, 5, true).unwrap();
        g.finish(&f).unwrap()
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let graph = toy_graph();
        let a: ParamStore<f64> = init_params(&graph, 42);
        let b: ParamStore<f64> = init_params(&graph, 42);
        for (name, t) in a.all_tensors() {
            let other = b
                .param(name)
                .or_else(|_| b.running(name))
                .expect("same tensor set");
            assert_eq!(t.data(), other.data(), "{name}");
        }
        let c: ParamStore<f64> = init_params(&graph, 43);
        assert_ne!(
            a.param("c1.weight").unwrap().data(),
            c.param("c1.weight").unwrap().data()
        );
    }

    #[test]
    fn gammas_are_exactly_one() {
        let graph = toy_graph();
        let store: ParamStore<f64> = init_params(&graph, 7);
        assert!(store
            .param("b1.gamma")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(store.param("fc.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(store
            .running("b1.running_var")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn weight_variance_tracks_fan_in() {
        // c1.weight has 64*32*9 = 18432 elements, fan_in = 32*9 = 288.
        let graph = toy_graph();
        let store: ParamStore<f64> = init_params(&graph, 11);
        let w = store.param("c1.weight").unwrap();
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 2.0 / 288.0;
        assert!(
            (var - expect).abs() / expect < 0.10,
            "variance {var} vs {expect}"
        );
    }

    #[test]
    fn store_count_matches_cost_model_expectation() {
        let graph = toy_graph();
        let store: ParamStore<f64> = init_params(&graph, 3);
        store.validate_against(&graph).unwrap();
        let learnable: usize = graph
            .params()
            .iter()
            .filter(|p| p.role.is_learnable())
            .map(|p| p.shape.iter().product::<usize>())
            .sum();
        assert_eq!(store.learnable_element_count(), learnable);
    }
}
