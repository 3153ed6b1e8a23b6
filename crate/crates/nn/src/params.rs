use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{NnError, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Names are dotted paths (`global.stage1.dw.weight`); component parameter
/// counts are taken by prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under `name`.
    ///
    /// # Panics
    /// If the name is already taken; layer construction is deterministic, so
    /// a duplicate is a wiring bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Scalar parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, _, v)| v.len())
            .sum()
    }

    /// Replaces every value with the tensor of the same name from `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.len() != self.len() {
            return Err(NnError::ParamCount {
                expected: self.len(),
                found: other.len(),
            });
        }
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if src.shape() != self.values[i].shape() {
                return Err(NnError::ShapeMismatch {
                    context: name.clone(),
                    expected: self.values[i].shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            self.values[i].assign(src);
        }
        Ok(())
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// He normal, `std = sqrt(2 / fan)`.
    KaimingNormal {
        fan: usize,
    },
    /// `U(-bound, bound)`.
    Uniform {
        bound: f32,
    },
    Normal {
        std: f32,
    },
    /// Normal truncated at two standard deviations.
    TruncatedNormal {
        std: f32,
    },
}

impl Init {
    pub fn sample<R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::KaimingNormal { fan } => {
                let std = (2.0 / fan.max(1) as f32).sqrt();
                normal(n, std, rng)
            }
            Init::Normal { std } => normal(n, std, rng),
            Init::Uniform { bound } => {
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::TruncatedNormal { std } => {
                let dist = Normal::new(0.0f32, 1.0).expect("unit normal");
                (0..n)
                    .map(|_| loop {
                        let z: f32 = dist.sample(rng);
                        if z.abs() <= 2.0 {
                            break z * std;
                        }
                    })
                    .collect()
            }
        };
        ArrayD::from_shape_vec(IxDyn(shape), data).expect("length matches shape")
    }
}

fn normal<R: Rng + ?Sized>(n: usize, std: f32, rng: &mut R) -> Vec<f32> {
    let dist = Normal::new(0.0f32, std.max(0.0)).expect("non-negative std");
    (0..n).map(|_| dist.sample(rng)).collect()
}
