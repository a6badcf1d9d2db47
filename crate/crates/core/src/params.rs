//! Named parameter storage and binding onto a [`Graph`].
//!
//! Parameter names are dotted paths whose first segment is the parameter
//! group (`backbone`, `neck`, `head`, `dan`).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.params.keys().map(|k| group_of(k).to_string()).collect()
    }

    /// The parameters of one group.
    pub fn group(&self, group: &str) -> ParamStore {
        self.filter(|g| g == group)
    }

    pub fn filter(&self, mut keep_group: impl FnMut(&str) -> bool) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| keep_group(group_of(k)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Concatenation of every parameter in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.params.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    /// Registers every parameter as a leaf on `graph`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), trainable)))
                .collect(),
        }
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradients for every bound parameter; parameters no gradient reached
    /// get exact zeros.
    pub fn gradients(&self, graph: &Graph, grads: &Gradients) -> ParamStore {
        ParamStore {
            params: self
                .vars
                .iter()
                .map(|(k, &v)| {
                    let g = grads
                        .get(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()));
                    (k.clone(), g)
                })
                .collect(),
        }
    }
}

/// Descriptor of one convolution layer and its parameter names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let fan_in = self.cin * self.kernel * self.kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let n = self.cout * fan_in;
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        store.insert(
            self.weight_name(),
            Tensor::from_vec(&[self.cout, self.cin, self.kernel, self.kernel], w).unwrap(),
        );
        store.insert(self.bias_name(), Tensor::zeros(&[self.cout]));
    }

    pub fn forward(&self, g: &mut Graph, params: &Bound, x: Var) -> Var {
        let w = params.var(&self.weight_name());
        let b = params.var(&self.bias_name());
        g.conv2d(x, w, Some(b), self.stride, self.pad())
    }
}
