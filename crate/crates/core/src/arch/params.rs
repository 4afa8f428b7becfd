use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Gradients, Shape, Tape, Tensor, Var};

/// Whether an entry is optimized or merely carried along (running
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: EntryKind,
}

/// Named, ordered collection of a network's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    /// `(entry index, var)` for every bound entry.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, kind: EntryKind) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, tensor, kind });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.entries[i].tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name:?}")))
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Two distinct entries borrowed mutably at once.
    pub fn pair_mut(&mut self, a: &str, b: &str) -> Result<(&mut [T], &mut [T])> {
        let ia = self
            .position(a)
            .ok_or_else(|| Error::invalid(format!("missing entry {a:?}")))?;
        let ib = self
            .position(b)
            .ok_or_else(|| Error::invalid(format!("missing entry {b:?}")))?;
        if ia == ib {
            return Err(Error::invalid(format!("pair_mut on the same entry {a:?}")));
        }
        let (lo, hi) = (ia.min(ib), ia.max(ib));
        let (left, right) = self.entries.split_at_mut(hi);
        let (x, y) = (left[lo].tensor.data_mut(), right[0].tensor.data_mut());
        Ok(if ia < ib { (x, y) } else { (y, x) })
    }

    /// Record every trainable entry as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| match e.kind {
                EntryKind::Param => Some(tape.leaf(e.tensor.clone(), requires_grad)),
                EntryKind::Buffer => None,
            })
            .collect();
        Binding { vars }
    }

    pub fn var(&self, binding: &Binding, name: &str) -> Result<Var> {
        self.position(name)
            .and_then(|i| binding.vars.get(i).copied().flatten())
            .ok_or_else(|| Error::invalid(format!("parameter {name:?} is not bound")))
    }

    /// Copy gradients out of a backward pass into each parameter's grad
    /// slot; unreachable parameters get zeros.
    pub fn store_grads(&mut self, binding: &Binding, grads: &mut Gradients<T>) {
        for (i, var) in binding.iter() {
            let entry = &mut self.entries[i];
            let g = grads
                .take(var)
                .unwrap_or_else(|| vec![T::zero(); entry.tensor.numel()]);
            entry.tensor.set_grad(g).expect("gradient shape matches its parameter");
        }
    }

    /// Like [`store_grads`](Self::store_grads) but adds onto gradients that
    /// are already present, for parameters used by several recorded passes.
    pub fn accumulate_grads(&mut self, binding: &Binding, grads: &mut Gradients<T>) {
        for (i, var) in binding.iter() {
            let entry = &mut self.entries[i];
            let Some(g) = grads.take(var) else { continue };
            let sum = match entry.tensor.grad() {
                Some(prev) => prev.iter().zip(&g).map(|(&a, &b)| a + b).collect(),
                None => g,
            };
            entry.tensor.set_grad(sum).expect("gradient shape matches its parameter");
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            if e.kind == EntryKind::Param {
                e.tensor.zero_grad();
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.clear_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    /// Same names, kinds and shapes, in the same order.
    pub fn check_layout(&self, other: &ModelParams<T>) -> Result<()> {
        let mut problems = Vec::new();
        for e in &self.entries {
            match other.position(&e.name) {
                None => problems.push(format!("missing {:?}", e.name)),
                Some(i) => {
                    let o = &other.entries[i];
                    if o.tensor.shape() != e.tensor.shape() {
                        problems.push(format!(
                            "{:?} has shape {} but {} was expected",
                            e.name,
                            o.tensor.shape(),
                            e.tensor.shape()
                        ));
                    }
                }
            }
        }
        for o in &other.entries {
            if self.position(&o.name).is_none() {
                problems.push(format!("unexpected {:?}", o.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(problems.join("; ")))
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` init for a conv kernel `(c_out, c_in, k, k)`
/// (and its optional bias).
pub(crate) fn init_conv<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    prefix: &str,
    kernel: Shape,
    fan_in: usize,
    bias: bool,
    zero: bool,
    rng: &mut R,
) -> Result<()> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = if zero {
        Tensor::zeros(kernel)
    } else {
        Tensor::uniform(kernel, -bound, bound, rng)
    };
    params.push(format!("{prefix}.w"), w, EntryKind::Param)?;
    if bias {
        let c = Shape::new(1, kernel.n, 1, 1);
        let b = if zero {
            Tensor::zeros(c)
        } else {
            Tensor::uniform(c, -bound, bound, rng)
        };
        params.push(format!("{prefix}.b"), b, EntryKind::Param)?;
    }
    Ok(())
}

pub(crate) fn init_bn<T: Scalar>(params: &mut ModelParams<T>, prefix: &str, c: usize) -> Result<()> {
    let s = Shape::new(1, c, 1, 1);
    params.push(format!("{prefix}.gamma"), Tensor::ones(s), EntryKind::Param)?;
    params.push(format!("{prefix}.beta"), Tensor::zeros(s), EntryKind::Param)?;
    params.push(format!("{prefix}.running_mean"), Tensor::zeros(s), EntryKind::Buffer)?;
    params.push(format!("{prefix}.running_var"), Tensor::ones(s), EntryKind::Buffer)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ModelParams::<f64>::new();
        p.push("a", Tensor::scalar(1.0), EntryKind::Param).unwrap();
        assert!(p.push("a", Tensor::scalar(2.0), EntryKind::Param).is_err());
    }

    #[test]
    fn unreachable_parameters_get_zero_gradients() {
        let mut p = ModelParams::<f64>::new();
        p.push("used", Tensor::full(Shape::new(1, 1, 2, 2), 3.0), EntryKind::Param).unwrap();
        p.push("unused", Tensor::full(Shape::new(1, 1, 1, 3), 1.0), EntryKind::Param).unwrap();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let x = p.var(&b, "used").unwrap();
        let loss = tape.sum(x).unwrap();
        let mut g = tape.backward(loss).unwrap();
        p.store_grads(&b, &mut g);
        assert_eq!(p.get("used").unwrap().grad().unwrap(), &[1.0; 4]);
        assert_eq!(p.get("unused").unwrap().grad().unwrap(), &[0.0; 3]);
    }

    #[test]
    fn pair_mut_returns_requested_order() {
        let mut p = ModelParams::<f32>::new();
        p.push("x", Tensor::scalar(1.0), EntryKind::Buffer).unwrap();
        p.push("y", Tensor::scalar(2.0), EntryKind::Buffer).unwrap();
        let (y, x) = p.pair_mut("y", "x").unwrap();
        assert_eq!((y[0], x[0]), (2.0, 1.0));
    }
}
