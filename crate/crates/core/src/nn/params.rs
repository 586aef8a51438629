use std::collections::HashMap;

use ndarray::Array2;

use crate::Scalar;

/// Handle to one named tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, all stored as 2-D arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
    lookup: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), lookup: HashMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Element-type conversion, e.g. an `f32` checkpoint to `f64` for checks.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.mapv(|x| U::lit(x.to_f64_lossy()))).collect(),
            lookup: self.lookup.clone(),
        }
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        ParamGrads { grads: vec![None; store.len()] }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Array2<T>>>) -> Self {
        ParamGrads { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn add_into(&mut self, id: ParamId, g: &Array2<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add_into(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * s);
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}
