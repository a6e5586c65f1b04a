use std::collections::BTreeMap;

use super::array::{Array, Real};
use super::tape::{Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persistent state that is not a gradient target (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Array<T>,
    pub kind: ParamKind,
    pub frozen: bool,
}

/// Named parameters and buffers of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    fn insert_entry(&mut self, name: &str, value: Array<T>, kind: ParamKind) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                kind,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn insert(&mut self, name: &str, value: Array<T>) -> Result<()> {
        self.insert_entry(name, value, ParamKind::Trainable)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Array<T>) -> Result<()> {
        self.insert_entry(name, value, ParamKind::Buffer)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Array<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.frozen)
    }

    /// Freezes (or unfreezes) every entry whose name starts with `prefix`.
    /// Returns how many entries matched.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            kind: p.kind,
                            frozen: p.frozen,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Gradients by parameter name; frozen parameters never appear.
#[derive(Debug, Clone, Default)]
pub struct GradStore<T> {
    grads: BTreeMap<String, Array<T>>,
}

impl<T: Real> GradStore<T> {
    pub fn new() -> Self {
        Self { grads: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `g` into the gradient for `name`.
    pub fn accumulate(&mut self, name: &str, g: Array<T>) -> Result<()> {
        match self.grads.get_mut(name) {
            Some(existing) => {
                if existing.shape() != g.shape() {
                    return Err(Error::shape(
                        "grad accumulate",
                        format!("{name}: {:?} vs {:?}", existing.shape(), g.shape()),
                    ));
                }
                existing.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
            }
            None => {
                self.grads.insert(name.to_string(), g);
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Global L2 norm and the largest per-parameter norms (descending).
    pub fn norms(&self, top: usize) -> (f64, Vec<(String, f64)>) {
        let mut per: Vec<(String, f64)> = self.grads.iter().map(|(k, g)| (k.clone(), g.norm())).collect();
        let total = per.iter().map(|(_, n)| n * n).sum::<f64>().sqrt();
        per.sort_by(|a, b| b.1.total_cmp(&a.1));
        per.truncate(top);
        (total, per)
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| g.data().iter().all(|v| v.is_finite()))
    }
}

/// A tape bound to a parameter store for one forward/backward pass.
///
/// Parameters become tape leaves on first use; frozen parameters and
/// buffers are bound without gradient tracking.
pub struct Graph<'p, T> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    bound: BTreeMap<String, Var>,
    track: bool,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: BTreeMap::new(),
            track: true,
        }
    }

    /// A graph that binds every parameter as a constant; nothing is recorded
    /// for the reverse pass.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self {
            track: false,
            ..Self::new(params)
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
        let trainable = self.track && p.kind == ParamKind::Trainable && !p.frozen;
        let v = self.tape.leaf(p.value.clone(), trainable);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        self.tape.value(v)
    }

    /// Runs the reverse pass and collects gradients for every bound,
    /// non-frozen trainable parameter. Parameters the loss does not depend
    /// on get a zero gradient.
    pub fn backward(self, loss: Var) -> Result<GradStore<T>> {
        let Graph {
            tape, params, bound, ..
        } = self;
        let mut grads = tape.backward(loss)?;
        let mut out = GradStore::new();
        for (name, var) in bound {
            let p = params.get(&name).expect("bound names exist");
            if p.kind != ParamKind::Trainable || p.frozen {
                continue;
            }
            let g = grads.take(var).unwrap_or_else(|| Array::zeros(p.value.shape()));
            out.grads.insert(name, g);
        }
        Ok(out)
    }
}
