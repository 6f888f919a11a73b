//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered registry of named tensors. Insertion order is stable, which keeps
/// checkpoints and optimizer traversal deterministic. Non-trainable entries
/// hold buffers such as batch-norm running statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.insert_with(name, value, true)
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.insert_with(name, value, false)
    }

    fn insert_with(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter `{}`",
            name
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|i| &self.values[*i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.values[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.index.get(name).map_or(false, |i| self.trainable[*i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Iterate in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.names
            .iter()
            .zip(self.values.iter())
            .zip(self.trainable.iter())
            .map(|((n, v), t)| (n.as_str(), v, *t))
    }

    /// Total number of scalar values across entries whose name matches the
    /// given predicate.
    pub fn count_values(&self, mut keep: impl FnMut(&str) -> bool) -> usize {
        self.iter()
            .filter(|(n, _, _)| keep(n))
            .map(|(_, v, _)| v.numel())
            .sum()
    }

    /// Remove entries whose name matches the predicate. Used to drop the
    /// decoder branches from a checkpoint at inference.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        let mut names = Vec::new();
        let mut values = Vec::new();
        let mut trainable = Vec::new();
        let mut index = HashMap::new();
        for ((n, v), t) in self
            .names
            .drain(..)
            .zip(self.values.drain(..))
            .zip(self.trainable.drain(..))
        {
            if keep(&n) {
                index.insert(n.clone(), names.len());
                names.push(n);
                values.push(v);
                trainable.push(t);
            }
        }
        self.names = names;
        self.values = values;
        self.trainable = trainable;
        self.index = index;
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Adam optimizer state: first/second moment accumulators per parameter plus
/// a step counter.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    moments: HashMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            moments: HashMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One Adam update over every trainable parameter that has a gradient
    /// entry. Parameters are visited in store order so the update sequence
    /// is deterministic.
    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let names: Vec<String> = store
            .iter()
            .filter(|(n, _, trainable)| *trainable && grads.contains_key(*n))
            .map(|(n, _, _)| n.to_string())
            .collect();
        for name in names {
            let g = &grads[&name];
            if !g.all_finite() {
                return Err(Error::NanGradient { param: name });
            }
            let p = store.get_mut(&name).expect("param exists");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            debug_assert_eq!(m.shape(), p.shape(), "moment shape mismatch for {name}");
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            for i in 0..g.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.data_mut()[i] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With eps negligible relative to |g|, the first Adam update is
        // -lr * g / |g| = -lr * sign(g).
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0]));
        let mut adam = Adam::new(AdamConfig::with_lr(0.001));
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![0.5, -3.0]));
        adam.step(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 0.001)).abs() < 1e-6, "w0 = {}", w[0]);
        assert!((w[1] - (-2.0 + 0.001)).abs() < 1e-6, "w1 = {}", w[1]);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.5]));
        let mut adam = Adam::new(AdamConfig::default());
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![0.0]));
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("w").unwrap().data()[0], 1.5);
    }

    #[test]
    fn nan_gradient_is_rejected_with_parameter_name() {
        let mut store = ParamStore::new();
        store.insert("layer.weight", Tensor::vector(vec![1.0]));
        let mut adam = Adam::new(AdamConfig::default());
        let mut grads = HashMap::new();
        grads.insert("layer.weight".to_string(), Tensor::vector(vec![f64::NAN]));
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("layer.weight"));
    }

    #[test]
    fn step_counter_strictly_increases() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0]));
        let mut adam = Adam::new(AdamConfig::default());
        let grads = HashMap::new();
        for expected in 1..=3 {
            adam.step(&mut store, &grads).unwrap();
            assert_eq!(adam.step_count(), expected);
        }
    }

    #[test]
    fn untrainable_buffers_are_not_updated() {
        let mut store = ParamStore::new();
        store.insert_buffer("bn.running_mean", Tensor::vector(vec![0.25]));
        let mut adam = Adam::new(AdamConfig::default());
        let mut grads = HashMap::new();
        grads.insert("bn.running_mean".to_string(), Tensor::vector(vec![1.0]));
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("bn.running_mean").unwrap().data()[0], 0.25);
    }
}
