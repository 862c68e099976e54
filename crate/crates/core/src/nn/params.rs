use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter groups. The train-only ones are detached at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Restoration network, including fusion adapters and the modulation encoder.
    Restoration,
    /// LR feature head and the deformable kernels of the AdaSTN stages.
    LrAlignment,
    /// AdaSTN offset estimators.
    OffsetEstimator,
    /// Auxiliary-LR generator.
    AuxGenerator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Restoration,
        ParamGroup::LrAlignment,
        ParamGroup::OffsetEstimator,
        ParamGroup::AuxGenerator,
    ];

    pub fn train_only(self) -> bool {
        matches!(self, ParamGroup::OffsetEstimator | ParamGroup::AuxGenerator)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Restoration => "restoration",
            ParamGroup::LrAlignment => "lr_alignment",
            ParamGroup::OffsetEstimator => "offset_estimator",
            ParamGroup::AuxGenerator => "aux_generator",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Named parameter tensors shared by every network of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    poisoned: Vec<ParamGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    /// Panics if the parameter's group is poisoned.
    pub fn value(&self, id: ParamId) -> &Tensor {
        let p = &self.params[id.0];
        assert!(
            !self.poisoned.contains(&p.group),
            "read of poisoned parameter {} ({})",
            p.name,
            p.group.name()
        );
        &p.value
    }

    /// Makes every later [`ParamStore::value`] read of `group` panic.
    pub fn poison(&mut self, group: ParamGroup) {
        if !self.poisoned.contains(&group) {
            self.poisoned.push(group);
        }
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| groups.contains(&p.group))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Rounds every value to single precision, the checkpoint storage precision.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Copies values for every name present in both stores. Shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<usize> {
        let mut n = 0;
        for p in &mut self.params {
            if let Some(id) = other.id(&p.name) {
                let src = other.value(id);
                if src.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter {} is {:?} in the source, {:?} here",
                        p.name,
                        src.shape(),
                        p.value.shape()
                    )));
                }
                p.value = src.clone();
                n += 1;
            }
        }
        Ok(n)
    }
}

/// He-normal convolution weights `[cout, cin, k, k]`.
pub fn he_normal(rng: &mut impl Rng, cout: usize, cin: usize, k: usize, gain: f64) -> Tensor {
    let fan_in = (cin * k * k) as f64;
    let std = gain * (2.0 / fan_in).sqrt();
    let data = (0..cout * cin * k * k)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec([cout, cin, k, k], data).expect("shape")
}

pub fn zeros_weight(cout: usize, cin: usize, k: usize) -> Tensor {
    Tensor::zeros([cout, cin, k, k])
}

pub fn zeros_bias(cout: usize) -> Tensor {
    Tensor::zeros([cout, 1, 1, 1])
}
