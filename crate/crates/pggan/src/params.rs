//! Named parameters with routing-group tags, kept in insertion order so
//! every iteration (init, update, checkpoint) is deterministic.

use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorData, TensorId};
use std::collections::HashMap;

/// Which sub-network a parameter belongs to; gradients are applied per group.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum RoutingGroup {
    Generator,
    SharedTrunk,
    GlobalHead,
    PatchHead,
}

impl RoutingGroup {
    pub const ALL: [RoutingGroup; 4] = [
        RoutingGroup::Generator,
        RoutingGroup::SharedTrunk,
        RoutingGroup::GlobalHead,
        RoutingGroup::PatchHead,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            RoutingGroup::Generator => "generator",
            RoutingGroup::SharedTrunk => "shared",
            RoutingGroup::GlobalHead => "global_head",
            RoutingGroup::PatchHead => "patch_head",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        RoutingGroup::ALL.into_iter().find(|g| g.tag() == tag)
    }

    pub fn code(&self) -> u8 {
        match self {
            RoutingGroup::Generator => 0,
            RoutingGroup::SharedTrunk => 1,
            RoutingGroup::GlobalHead => 2,
            RoutingGroup::PatchHead => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        RoutingGroup::ALL.into_iter().find(|g| g.code() == code)
    }
}

#[derive(thiserror::Error, Debug)]
pub enum ParamError {
    #[error("duplicate parameter name: {0}")]
    DuplicateName(String),
    #[error("unknown parameter: {0}")]
    Unknown(String),
    #[error("parameter name '{0}' does not start with its routing-group tag")]
    UntaggedName(String),
}

/// A learnable tensor. Its name starts with the routing-group tag, e.g.
/// `generator/down1/conv.weight`.
#[derive(Clone, Debug)]
pub struct Parameter<S> {
    pub name: String,
    pub group: RoutingGroup,
    pub data: TensorData<S>,
    pub grad: Option<Vec<S>>,
}

/// Insertion-ordered parameter table.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: Vec<Parameter<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        group: RoutingGroup,
        data: TensorData<S>,
    ) -> Result<(), ParamError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(ParamError::DuplicateName(name));
        }
        if !name.starts_with(group.tag()) {
            return Err(ParamError::UntaggedName(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Parameter {
            name,
            group,
            data,
            grad: None,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<S>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<S>> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.entries.iter_mut()
    }

    pub fn group(&self, g: RoutingGroup) -> impl Iterator<Item = &Parameter<S>> {
        self.entries.iter().filter(move |p| p.group == g)
    }

    pub fn group_names(&self, g: RoutingGroup) -> Vec<String> {
        self.group(g).map(|p| p.name.clone()).collect()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.data.shape().numel()).sum()
    }

    pub fn numel_group(&self, g: RoutingGroup) -> usize {
        self.group(g).map(|p| p.data.shape().numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.data.is_finite())
    }
}

/// One forward pass: owns the tape, lends out parameter leaves, and
/// guarantees a parameter is mounted once even if referenced twice
/// (shared-trunk gradients then sum across both heads automatically).
pub struct Exec<'a, S> {
    pub tape: &'a mut Tape<S>,
    store: &'a ParamStore<S>,
    mounted: HashMap<String, TensorId>,
}

impl<'a, S: Scalar> Exec<'a, S> {
    pub fn new(tape: &'a mut Tape<S>, store: &'a ParamStore<S>) -> Self {
        Exec {
            tape,
            store,
            mounted: HashMap::new(),
        }
    }

    /// Mount a parameter as a tracked leaf (data shared, not copied).
    pub fn param(&mut self, name: &str) -> Result<TensorId, ParamError> {
        if let Some(&id) = self.mounted.get(name) {
            return Ok(id);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        let id = self.tape.leaf(p.data.clone(), true);
        self.mounted.insert(name.to_string(), id);
        Ok(id)
    }

    /// Copy gradients accumulated on the tape back onto the parameters.
    /// Parameters never mounted keep `grad = None` (read as zero).
    pub fn harvest_grads(self, store: &mut ParamStore<S>) {
        for (name, id) in self.mounted {
            if let Some(g) = self.tape.grad(id) {
                if let Some(p) = store.get_mut(&name) {
                    match &mut p.grad {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(g) {
                                *a = *a + *b;
                            }
                        }
                        slot => *slot = Some(g.to_vec()),
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store
            .insert(
                "generator/a.weight",
                RoutingGroup::Generator,
                TensorData::scalar(1.0),
            )
            .unwrap();
        let err = store
            .insert(
                "generator/a.weight",
                RoutingGroup::Generator,
                TensorData::scalar(2.0),
            )
            .unwrap_err();
        assert!(matches!(err, ParamError::DuplicateName(_)));
    }

    #[test]
    fn names_must_carry_their_group_tag() {
        let mut store = ParamStore::<f64>::new();
        let err = store
            .insert(
                "something/a.weight",
                RoutingGroup::PatchHead,
                TensorData::scalar(1.0),
            )
            .unwrap_err();
        assert!(matches!(err, ParamError::UntaggedName(_)));
    }
}
