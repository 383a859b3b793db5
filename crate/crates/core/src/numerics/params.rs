use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::graph::{Graph, Var};
use super::rng::SplitMix64;
use super::tensor::Tensor;
use crate::error::{invalid, Result};

/// A named parameter belonging to one training group.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub group: String,
    pub tensor: Tensor,
}

/// Named parameters, ordered by name so iteration and checksums are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Graph handles for the parameters of a [`ParamStore`].
#[derive(Debug, Default, Clone)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| invalid(format!("parameter {name:?} is not bound")))
    }

    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: impl Into<String>, tensor: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                group: group.into(),
                tensor,
            },
        );
    }

    /// Inserts a trainable `N(0, std^2)` tensor.
    pub fn insert_normal(
        &mut self,
        name: &str,
        group: &str,
        shape: &[usize],
        std: f64,
        rng: &mut SplitMix64,
    ) {
        let n = shape.iter().product();
        let t = Tensor::new(shape.to_vec(), rng.normal_vec(n, std))
            .expect("shape matches")
            .with_requires_grad(true);
        self.insert(name, group, t);
    }

    pub fn insert_full(&mut self, name: &str, group: &str, shape: &[usize], value: f64) {
        self.insert(name, group, Tensor::full(shape.to_vec(), value).with_requires_grad(true));
    }

    /// Moves every parameter of `other` into this store.
    pub fn merge(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| invalid(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| invalid(format!("unknown parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.params.values().map(|p| p.group.clone()).collect()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    /// Sets `requires_grad` on every parameter of `group`.
    pub fn set_group_trainable(&mut self, group: &str, trainable: bool) {
        for p in self.params.values_mut().filter(|p| p.group == group) {
            p.tensor.requires_grad = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.params.values_mut() {
            p.tensor.requires_grad = trainable;
        }
    }

    pub fn any_trainable_in(&self, group: &str) -> bool {
        self.params
            .values()
            .any(|p| p.group == group && p.tensor.requires_grad)
    }

    /// Adds every parameter as a leaf of `g`, tracking gradients for the
    /// trainable ones.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), g.leaf(p.tensor.clone())))
            .collect();
        Bound { vars }
    }

    /// Accumulates graph gradients into each trainable parameter's `grad`.
    pub fn pull_grads(&mut self, g: &Graph, bound: &Bound) {
        for (name, p) in self.params.iter_mut() {
            if !p.tensor.requires_grad {
                continue;
            }
            let Some(&v) = bound.vars.get(name) else { continue };
            let Some(grad) = g.grad(v) else { continue };
            match &mut p.tensor.grad {
                Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(grad.to_vec()),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.tensor.grad = None);
    }

    /// Global L2 norm of the gradients of `group`.
    pub fn grad_norm(&self, group: Option<&str>) -> f64 {
        self.params
            .values()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .filter_map(|p| p.tensor.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// 64-bit FNV-1a over the serialized bytes of `group` (names, shapes and
    /// little-endian values, in name order).
    pub fn group_checksum(&self, group: &str) -> u64 {
        let mut h = Fnv1a::new();
        for (name, p) in self.params.iter().filter(|(_, p)| p.group == group) {
            h.write(name.as_bytes());
            for d in p.tensor.shape() {
                h.write(&(*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.write(&v.to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn checksums(&self) -> BTreeMap<String, u64> {
        self.groups()
            .into_iter()
            .map(|g| {
                let c = self.group_checksum(&g);
                (g, c)
            })
            .collect()
    }

    /// Name/tensor pairs for checkpointing.
    pub fn entries(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(n, p)| (n.clone(), p.tensor.clone()))
            .collect()
    }

    /// Overwrites values from `entries`; names must exist with equal shapes.
    /// Unknown names are ignored so one checkpoint can hold several models.
    pub fn load_entries<'a>(
        &mut self,
        entries: impl IntoIterator<Item = &'a (String, Tensor)>,
    ) -> Result<usize> {
        let mut loaded = 0;
        for (name, t) in entries {
            if let Some(p) = self.params.get_mut(name) {
                if p.tensor.shape() != t.shape() {
                    return Err(invalid(format!(
                        "parameter {name:?}: checkpoint shape {:?} != model shape {:?}",
                        t.shape(),
                        p.tensor.shape()
                    )));
                }
                p.tensor.data_mut().copy_from_slice(t.data());
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        let mut h = Fnv1a::new();
        assert_eq!(h.finish(), 0xcbf29ce484222325);
        h.write(b"a");
        assert_eq!(h.finish(), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::new();
        s.insert_full("a.w", "a", &[2], 1.0);
        s.insert_full("b.w", "b", &[2], 1.0);
        let before = s.checksums();
        s.get_mut("a.w").unwrap().data_mut()[0] = 2.0;
        let after = s.checksums();
        assert_ne!(before["a"], after["a"]);
        assert_eq!(before["b"], after["b"]);
    }
}
