//! Flat parameter vectors for the optimiser.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{bail, Result};
use crate::types::DrgpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ParamGroup {
    StateMean,
    StateVar,
    SigmaPower,
    SigmaNoise,
    Lengthscale,
    Frequency,
    FrequencyVar,
    Pseudo,
    Phase,
}

impl ParamGroup {
    pub const STATE: [ParamGroup; 2] = [ParamGroup::StateMean, ParamGroup::StateVar];
    pub const LAYER: [ParamGroup; 7] = [
        ParamGroup::SigmaPower,
        ParamGroup::SigmaNoise,
        ParamGroup::Lengthscale,
        ParamGroup::Frequency,
        ParamGroup::FrequencyVar,
        ParamGroup::Pseudo,
        ParamGroup::Phase,
    ];

    /// Whether values of this group pass through the positivity transform.
    pub fn is_positive(self) -> bool {
        matches!(
            self,
            ParamGroup::StateVar
                | ParamGroup::SigmaPower
                | ParamGroup::SigmaNoise
                | ParamGroup::Lengthscale
                | ParamGroup::FrequencyVar
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::StateMean => "state_mean",
            ParamGroup::StateVar => "state_var",
            ParamGroup::SigmaPower => "sigma_power",
            ParamGroup::SigmaNoise => "sigma_noise",
            ParamGroup::Lengthscale => "lengthscale",
            ParamGroup::Frequency => "frequency",
            ParamGroup::FrequencyVar => "frequency_var",
            ParamGroup::Pseudo => "pseudo_input",
            ParamGroup::Phase => "phase",
        }
    }
}

/// A parameter group of one layer. State groups index hidden layers
/// `0..L`, all other groups index GP layers `0..=L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupKey {
    pub layer: usize,
    pub group: ParamGroup,
}

impl GroupKey {
    pub fn new(layer: usize, group: ParamGroup) -> Self {
        Self { layer, group }
    }
}

impl DrgpModel {
    /// Raw storage of a group, `None` when the model has no such group.
    pub fn group(&self, key: GroupKey) -> Option<&[f64]> {
        use ParamGroup::*;
        if matches!(key.group, StateMean | StateVar) {
            let s = self.states.get(key.layer)?;
            return Some(if key.group == StateMean {
                &s.mean
            } else {
                &s.var
            });
        }
        let p = self.layers.get(key.layer)?;
        Some(match key.group {
            SigmaPower => core::slice::from_ref(&p.hyper.sigma_power),
            SigmaNoise => core::slice::from_ref(&p.hyper.sigma_noise),
            Lengthscale => &p.hyper.lengthscales,
            Frequency => p.basis.freq.as_slice(),
            FrequencyVar => p.basis.freq_var.as_ref()?.as_slice(),
            Pseudo => p.basis.pseudo.as_slice(),
            Phase => &p.basis.phase,
            StateMean | StateVar => unreachable!(),
        })
    }

    pub fn group_mut(&mut self, key: GroupKey) -> Option<&mut [f64]> {
        use ParamGroup::*;
        if matches!(key.group, StateMean | StateVar) {
            let s = self.states.get_mut(key.layer)?;
            return Some(if key.group == StateMean {
                &mut s.mean
            } else {
                &mut s.var
            });
        }
        let p = self.layers.get_mut(key.layer)?;
        Some(match key.group {
            SigmaPower => core::slice::from_mut(&mut p.hyper.sigma_power),
            SigmaNoise => core::slice::from_mut(&mut p.hyper.sigma_noise),
            Lengthscale => &mut p.hyper.lengthscales,
            Frequency => p.basis.freq.as_mut_slice(),
            FrequencyVar => p.basis.freq_var.as_mut()?.as_mut_slice(),
            Pseudo => p.basis.pseudo.as_mut_slice(),
            Phase => &mut p.basis.phase,
            StateMean | StateVar => unreachable!(),
        })
    }

    /// Every group present in this model, in canonical order.
    pub fn group_keys(&self) -> Vec<GroupKey> {
        let mut keys = Vec::new();
        for l in 0..self.states.len() {
            keys.extend(ParamGroup::STATE.iter().map(|&g| GroupKey::new(l, g)));
        }
        for l in 0..self.layers.len() {
            for &g in &ParamGroup::LAYER {
                let key = GroupKey::new(l, g);
                if self.group(key).is_some() {
                    keys.push(key);
                }
            }
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub key: GroupKey,
    pub offset: usize,
    pub len: usize,
}

/// Maps slices of a flat vector to parameter groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    slots: Vec<Slot>,
    len: usize,
}

impl ParamLayout {
    /// Layout covering every group of the model.
    pub fn full(model: &DrgpModel) -> Self {
        Self::excluding(model, |_| false)
    }

    /// Layout without the groups for which `frozen` returns true.
    pub fn excluding(model: &DrgpModel, frozen: impl Fn(GroupKey) -> bool) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        for key in model.group_keys() {
            if frozen(key) {
                continue;
            }
            let len = model.group(key).map_or(0, <[f64]>::len);
            slots.push(Slot { key, offset, len });
            offset += len;
        }
        Self { slots, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn range(&self, key: GroupKey) -> Option<Range<usize>> {
        self.slots
            .iter()
            .find(|s| s.key == key)
            .map(|s| s.offset..s.offset + s.len)
    }

    pub fn contains(&self, key: GroupKey) -> bool {
        self.slots.iter().any(|s| s.key == key)
    }

    /// Copies the raw values of every slot into a flat vector.
    pub fn flatten(&self, model: &DrgpModel) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len);
        for slot in &self.slots {
            match model.group(slot.key) {
                Some(v) if v.len() == slot.len => out.extend_from_slice(v),
                _ => bail!(Dimension, "model does not match layout slot {:?}", slot.key),
            }
        }
        Ok(out)
    }

    /// Writes a flat vector back into the model.
    pub fn unflatten(&self, model: &mut DrgpModel, values: &[f64]) -> Result<()> {
        if values.len() != self.len {
            bail!(
                Dimension,
                "flat vector has {} entries, layout needs {}",
                values.len(),
                self.len
            );
        }
        for slot in &self.slots {
            match model.group_mut(slot.key) {
                Some(dst) if dst.len() == slot.len => {
                    dst.copy_from_slice(&values[slot.offset..slot.offset + slot.len])
                }
                _ => bail!(Dimension, "model does not match layout slot {:?}", slot.key),
            }
        }
        Ok(())
    }

    /// Selects this layout's entries from a vector laid out by `full`.
    pub fn restrict(&self, full: &ParamLayout, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len);
        for slot in &self.slots {
            let Some(r) = full.range(slot.key) else {
                bail!(
                    Dimension,
                    "group {:?} is missing from the source layout",
                    slot.key
                );
            };
            out.extend_from_slice(&values[r]);
        }
        Ok(out)
    }
}
