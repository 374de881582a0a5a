//! Parameter registry, loss, reverse-mode gradient orchestration, Adam,
//! finite-difference verification, and checkpointing.

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use loss::{compute_loss, LossBreakdown, LossWeights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a registered parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMeta {
    pub name: String,
    pub shape: Vec<usize>,
    /// Scalar offset into the flat parameter buffer.
    pub offset: usize,
    pub len: usize,
}

/// Flat registry of all learnable scalars with same-shape gradient slots.
///
/// Groups are laid out contiguously in registration order; shapes are
/// immutable after construction.
#[derive(Debug, Clone)]
pub struct ParamStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    groups: Vec<GroupMeta>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            values: Vec::new(),
            grads: Vec::new(),
            groups: Vec::new(),
            step: 0,
        }
    }

    /// Registers a group and moves `init` into the flat buffer.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Vec<f64>) -> GroupId {
        let len: usize = shape.iter().product();
        assert_eq!(len, init.len(), "init length mismatch for group {name}");
        let offset = self.values.len();
        self.values.extend_from_slice(&init);
        self.grads.resize(self.values.len(), 0.0);
        self.groups.push(GroupMeta {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        GroupId(self.groups.len() - 1)
    }

    pub fn meta(&self, id: GroupId) -> &GroupMeta {
        &self.groups[id.0]
    }

    pub fn groups(&self) -> &[GroupMeta] {
        &self.groups
    }

    pub fn values(&self, id: GroupId) -> &[f64] {
        let m = &self.groups[id.0];
        &self.values[m.offset..m.offset + m.len]
    }

    pub fn values_mut(&mut self, id: GroupId) -> &mut [f64] {
        let m = &self.groups[id.0];
        &mut self.values[m.offset..m.offset + m.len]
    }

    pub fn grads(&self, id: GroupId) -> &[f64] {
        let m = &self.groups[id.0];
        &self.grads[m.offset..m.offset + m.len]
    }

    pub fn grads_mut(&mut self, id: GroupId) -> &mut [f64] {
        let m = &self.groups[id.0];
        &mut self.grads[m.offset..m.offset + m.len]
    }

    pub fn all_values(&self) -> &[f64] {
        &self.values
    }

    pub fn all_values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn all_grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn all_grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn increment_step(&mut self) {
        self.step += 1;
    }

    /// Name of the group owning flat index `idx`.
    pub fn group_of(&self, idx: usize) -> &GroupMeta {
        self.groups
            .iter()
            .find(|g| idx >= g.offset && idx < g.offset + g.len)
            .expect("index out of range")
    }

    /// Validates that every gradient is finite, naming the offender.
    pub fn check_finite_grads(&self) -> Result<()> {
        for (idx, g) in self.grads.iter().enumerate() {
            if !g.is_finite() {
                let meta = self.group_of(idx);
                return Err(Error::NonFiniteGradient {
                    group: meta.name.clone(),
                    index: idx - meta.offset,
                });
            }
        }
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}
