use std::collections::HashMap;

use rand::Rng;

use super::graph::Gradients;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    value: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
    steps: u64,
}

/// Adaptive-moment optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Named trainable tensors with their optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: Vec<Slot>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.slots.len() as u32);
        let zeros = Tensor::zeros(value.shape());
        self.slots.push(Slot {
            name: name.to_string(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            steps: 0,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Inserts a tensor drawn uniformly from `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`.
    ///
    /// Fans are the two dimensions of a matrix; a vector of length `n` uses
    /// `(n, 1)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId, AutodiffError> {
        let (fan_in, fan_out) = match shape {
            [n] => (*n, 1),
            [a, b] => (*a, *b),
            _ => (shape.iter().product(), 1),
        };
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-r..=r)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.index()].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.index()].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.index()].value
    }

    pub fn steps(&self, id: ParamId) -> u64 {
        self.slots[id.index()].steps
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId::from_index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    pub fn total_size(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// One adaptive-moment update for every parameter present in `grads`.
    ///
    /// The whole step is rejected (nothing changes) if any gradient is
    /// non-finite or has the wrong shape.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<(), AutodiffError> {
        for (id, g) in grads.iter() {
            let slot = self
                .slots
                .get(id.index())
                .ok_or_else(|| AutodiffError::UnknownParam(format!("#{}", id.index())))?;
            if g.shape() != slot.value.shape() {
                return Err(AutodiffError::Shape(format!(
                    "gradient for {} has shape {:?}, parameter {:?}",
                    slot.name,
                    g.shape(),
                    slot.value.shape()
                )));
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient(slot.name.clone()));
            }
        }
        for (id, g) in grads.iter() {
            let slot = &mut self.slots[id.index()];
            slot.steps += 1;
            let t = slot.steps as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let m = slot.first_moment.data_mut();
            let v = slot.second_moment.data_mut();
            let p = slot.value.data_mut();
            for (((pi, mi), vi), gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}
