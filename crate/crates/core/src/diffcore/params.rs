use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::rc::Rc;

use super::array::Array;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, persistent parameter arrays with their accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Array>>,
    grads: Vec<Option<Array>>,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// The same binding with one handle swapped, e.g. for a probe leaf in a
    /// gradient check.
    pub fn replaced(mut self, id: ParamId, var: Var) -> Self {
        self.vars[id.0] = var;
        self
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.names.push(name.into());
        self.values.push(Rc::new(value));
        self.grads.push(None);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> Option<&Array> {
        self.grads[id.0].as_ref()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Array) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "param_set",
                format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    self.values[id.0].shape(),
                    value.shape()
                ),
            ));
        }
        self.values[id.0] = Rc::new(value);
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Array {
        Rc::make_mut(&mut self.values[id.0])
    }

    /// Adds every parameter to `g` as a leaf. Frozen bindings become
    /// constants, so no gradient work is spent on them.
    pub fn bind(&self, g: &Graph, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| g.shared(Rc::clone(v), trainable))
            .collect();
        Bound { vars, trainable }
    }

    /// Moves gradients from a finished backward pass into the store.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        if !bound.trainable {
            return;
        }
        for (slot, &v) in self.grads.iter_mut().zip(&bound.vars) {
            if let Some(d) = g.take_grad(v) {
                match slot {
                    Some(acc) => acc.add_assign(&d),
                    None => *slot = Some(d),
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn take_grad(&mut self, id: ParamId) -> Option<Array> {
        self.grads[id.0].take()
    }

    /// Order-sensitive hash of names and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, v) in self.iter() {
            h.write(name.as_bytes());
            for &s in v.shape() {
                h.write_usize(s);
            }
            for x in v.data() {
                h.write_u64(x.to_bits());
            }
        }
        h.finish()
    }

    /// All parameters, names prefixed, for checkpointing.
    pub fn named(&self, prefix: &str) -> Vec<(String, Array)> {
        self.iter()
            .map(|(n, v)| (format!("{prefix}{n}"), v.clone()))
            .collect()
    }

    /// Loads values from `(name, array)` pairs carrying `prefix`. Every
    /// parameter must be present with a matching shape.
    pub fn load_named(&mut self, prefix: &str, arrays: &[(String, Array)]) -> Result<()> {
        for id in self.ids().collect::<Vec<_>>() {
            let full = format!("{prefix}{}", self.names[id.0]);
            let Some((_, a)) = arrays.iter().find(|(n, _)| *n == full) else {
                return Err(Error::invalid("diffcore", format!("checkpoint lacks `{full}`")));
            };
            self.set(id, a.clone())?;
        }
        Ok(())
    }
}
