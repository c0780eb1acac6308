//! Named parameter storage and the Adam optimizer.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::Mat;
use crate::{Error, Result};

/// Ordered collection of named parameter matrices. Registration order is the
/// checkpoint order and the gradient index space.
#[derive(Default, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Mat>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Mat) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let idx = self.values.len();
        self.names.push(name.to_string());
        self.values.push(Arc::new(value));
        self.index.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn lookup(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::State(format!("unknown parameter {name:?}")))
    }

    pub fn values(&self, idx: usize) -> &Mat {
        &self.values[idx]
    }

    pub fn shared(&self, idx: usize) -> Arc<Mat> {
        Arc::clone(&self.values[idx])
    }

    pub fn set_values(&mut self, idx: usize, value: Mat) {
        assert_eq!(self.values[idx].dim(), value.dim(), "parameter shape change");
        self.values[idx] = Arc::new(value);
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Iterate `(name, matrix)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter().map(|v| v.as_ref()))
    }
}

/// Gaussian init with the given std.
pub fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Uniform Xavier/Glorot init for a (fan_in, fan_out) matrix.
pub fn xavier_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Adam with bias correction; step order is part of the determinism contract.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = (0..store.len())
            .map(|i| Mat::zeros(store.values(i).dim()))
            .collect();
        let v = (0..store.len())
            .map(|i| Mat::zeros(store.values(i).dim()))
            .collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &super::tape::Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in 0..store.len() {
            let Some(g) = &grads.by_param[p] else { continue };
            let m = &mut self.m[p];
            let v = &mut self.v[p];
            let mut w = store.values(p).clone();
            ndarray::Zip::from(&mut w)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *w -= self.lr * mh / (vh.sqrt() + self.eps);
                });
            store.set_values(p, w);
        }
    }

    /// Optimizer moments for checkpointing, in parameter order.
    pub fn state(&self) -> (&[Mat], &[Mat]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Mat>, v: Vec<Mat>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::tensor::tape::{Grads, Tape};

    #[test]
    fn adam_descends_a_quadratic() {
        let mut rng = stream_rng(11, Stream::ParamInit, 0);
        let mut store = ParamStore::new();
        store.register("x", normal_init(&mut rng, 2, 2, 1.0));
        let mut opt = Adam::new(&store, 0.05);
        let loss_of = |s: &ParamStore| -> f64 { s.values(0).iter().map(|v| v * v).sum() };
        let start = loss_of(&store);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let x = tape.param(&store, 0);
            let sq = tape.mul(x, x);
            let loss = tape.sum_all(sq);
            let grads: Grads = tape.backward(loss, store.len());
            opt.apply(&mut store, &grads);
        }
        let end = loss_of(&store);
        assert!(end < start * 1e-3, "{start} -> {end}");
    }
}
