//! Seeded parameter registration and initialization.
//!
//! Conv weights: zero-mean normal with variance `2 / fan_out`.
//! Dense weights: uniform in `±sqrt(1 / fan_in)`. Biases and BN beta start at 0,
//! BN gamma at 1, running mean/var at 0/1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::BnParams;
use crate::error::TensorError;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{PrecisionMode, Tensor};

pub struct Initializer<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    mode: PrecisionMode,
}

impl<'a> Initializer<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Initializer {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode: PrecisionMode::Single,
        }
    }

    pub fn with_mode(mut self, mode: PrecisionMode) -> Self {
        self.mode = mode;
        self
    }

    fn add(&mut self, name: String, mut t: Tensor, kind: ParamKind) -> Result<ParamId, TensorError> {
        self.mode.round_slice(t.data_mut());
        self.store.add(name, t, kind)
    }

    /// Weight `[cout, cin_per_group, kh, kw]`.
    pub fn conv(&mut self, name: &str, cout: usize, cin_per_group: usize, kh: usize, kw: usize, groups: usize) -> Result<ParamId, TensorError> {
        let fan_out = (kh * kw * cout / groups).max(1);
        let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("positive std");
        let rng = &mut self.rng;
        let t = Tensor::from_fn(&[cout, cin_per_group, kh, kw], |_| normal.sample(rng));
        self.add(format!("{name}.weight"), t, ParamKind::Trainable)
    }

    /// Weight `[out, in]` and bias `[out]`.
    pub fn linear(&mut self, name: &str, out: usize, inp: usize) -> Result<(ParamId, ParamId), TensorError> {
        let limit = (1.0 / inp as f64).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[out, inp], |_| rng.random_range(-limit..=limit));
        let w = self.add(format!("{name}.weight"), w, ParamKind::Trainable)?;
        let b = self.add(format!("{name}.bias"), Tensor::zeros(&[out]), ParamKind::Trainable)?;
        Ok((w, b))
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BnParams, TensorError> {
        Ok(BnParams {
            gamma: self.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), ParamKind::Trainable)?,
            beta: self.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable)?,
            running_mean: self.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer)?,
            running_var: self.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), ParamKind::Buffer)?,
        })
    }
}
