//! Named parameter store with per-tensor gradients and SGD-with-momentum
//! state.

use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Entry {
    value: ArrayD<f32>,
    grad: ArrayD<f32>,
    momentum: ArrayD<f32>,
    trainable: bool,
}

pub struct ParamStore {
    seed: u64,
    entries: BTreeMap<String, Entry>,
}

/// FNV-1a, used to derive a per-tensor RNG stream from the tensor name.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// He-normal initialization (fan-in from all dims past the first), keyed by
/// (seed, name) so insertion order never matters.
pub fn init_array(seed: u64, name: &str, shape: &[usize], scale: f32) -> ArrayD<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let std = scale * (2.0 / fan_in as f32).sqrt();
    let total: usize = shape.iter().product();
    // Box-Muller on ChaCha uniforms keeps this reproducible across rand
    // version changes to the normal sampler.
    let mut data = Vec::with_capacity(total);
    while data.len() < total {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push((r * theta.cos()) as f32 * std);
        if data.len() < total {
            data.push((r * theta.sin()) as f32 * std);
        }
    }
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/product mismatch")
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            entries: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert_value(&mut self, name: &str, value: ArrayD<f32>, trainable: bool) {
        let grad = ArrayD::zeros(value.raw_dim());
        let momentum = ArrayD::zeros(value.raw_dim());
        self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad,
                momentum,
                trainable,
            },
        );
    }

    pub fn insert_he(&mut self, name: &str, shape: &[usize], trainable: bool) {
        self.insert_value(name, init_array(self.seed, name, shape, 1.0), trainable);
    }

    pub fn insert_he_scaled(&mut self, name: &str, shape: &[usize], scale: f32, trainable: bool) {
        self.insert_value(name, init_array(self.seed, name, shape, scale), trainable);
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize], trainable: bool) {
        self.insert_value(name, ArrayD::zeros(IxDyn(shape)), trainable);
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], value: f32, trainable: bool) {
        self.insert_value(name, ArrayD::from_elem(IxDyn(shape), value), trainable);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> ArrayViewD<'_, f32> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
            .view()
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f32>) {
        let e = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(e.value.shape(), value.shape(), "shape mismatch for {name}");
        e.value = value;
    }

    pub fn grad(&self, name: &str) -> ArrayViewD<'_, f32> {
        self.entries.get(name).unwrap().grad.view()
    }

    pub fn grad_add(&mut self, name: &str, delta: ArrayD<f32>) {
        let e = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        if !e.trainable {
            return;
        }
        e.grad += &delta;
    }

    pub fn grad_scale(&mut self, name: &str, factor: f32) {
        if let Some(e) = self.entries.get_mut(name) {
            e.grad.mapv_inplace(|g| g * factor);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|e| e.trainable).unwrap_or(false)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(e) = self.entries.get_mut(name) {
            e.trainable = trainable;
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn shape(&self, name: &str) -> Vec<usize> {
        self.entries.get(name).unwrap().value.shape().to_vec()
    }

    /// One SGD-with-momentum update over the trainable parameters:
    /// v = mu*v + g; w -= lr*v.
    pub fn sgd_step(&mut self, learning_rate: f32, momentum: f32) {
        for e in self.entries.values_mut() {
            if !e.trainable {
                continue;
            }
            e.momentum.zip_mut_with(&e.grad, |m, &g| *m = momentum * *m + g);
            e.value.zip_mut_with(&e.momentum, |w, &m| *w -= learning_rate * m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_order_free() {
        let a = init_array(5, "layer.w", &[4, 3], 1.0);
        let b = init_array(5, "layer.w", &[4, 3], 1.0);
        assert_eq!(a, b);
        let c = init_array(5, "other.w", &[4, 3], 1.0);
        assert_ne!(a, c);
    }

    #[test]
    fn frozen_entries_ignore_gradients_and_updates() {
        let mut store = ParamStore::new(1);
        store.insert_const("frozen.w", &[2], 1.0, false);
        store.insert_const("live.w", &[2], 1.0, true);
        store.grad_add("frozen.w", ArrayD::from_elem(IxDyn(&[2]), 3.0));
        store.grad_add("live.w", ArrayD::from_elem(IxDyn(&[2]), 3.0));
        store.sgd_step(0.1, 0.0);
        assert_eq!(store.get("frozen.w")[[0]], 1.0);
        assert!((store.get("live.w")[[0]] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn momentum_accumulates() {
        let mut store = ParamStore::new(1);
        store.insert_const("w", &[1], 0.0, true);
        for _ in 0..2 {
            store.zero_grads();
            store.grad_add("w", ArrayD::from_elem(IxDyn(&[1]), 1.0));
            store.sgd_step(1.0, 0.9);
        }
        // step1: v=1, w=-1; step2: v=1.9, w=-2.9
        assert!((store.get("w")[[0]] + 2.9).abs() < 1e-6);
    }
}
