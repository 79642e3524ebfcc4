//! Reverse-mode differentiation over the primitive kernels.
//!
//! Blocks are written once against [`Exec`]. [`Tape`] records every op so a scalar
//! loss can be differentiated; [`Infer`] evaluates in eval mode and drops
//! intermediates as soon as they go out of scope.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::ops::{self, Conv2dOptions};
use crate::params::{Gradients, ParamId, ParamStore, StatUpdate};
use crate::tensor::{PrecisionMode, Tensor};

/// Swish gate coefficient. Held constant, never trained.
pub const SWISH_BETA: f64 = 1.0;

/// Parameter handles of one batch-norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// The op set network blocks are written against.
pub trait Exec {
    type Value;

    fn shape_of<'a>(&'a self, v: &'a Self::Value) -> &'a [usize];
    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: ParamId,
        bias: Option<ParamId>,
        opts: Conv2dOptions,
    ) -> Result<Self::Value, TensorError>;
    fn batch_norm(&mut self, x: &Self::Value, bn: &BnParams) -> Result<Self::Value, TensorError>;
    fn swish(&mut self, x: &Self::Value) -> Result<Self::Value, TensorError>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value, TensorError>;
    fn linear(&mut self, x: &Self::Value, weight: ParamId, bias: Option<ParamId>) -> Result<Self::Value, TensorError>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value, TensorError>;
    fn scale_channels(&mut self, x: &Self::Value, gate: &Self::Value) -> Result<Self::Value, TensorError>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, TensorError>;
    fn concat_channels(&mut self, xs: &[&Self::Value]) -> Result<Self::Value, TensorError>;
    fn dropout(&mut self, x: &Self::Value, rate: f64) -> Result<Self::Value, TensorError>;
    fn softmax(&mut self, x: &Self::Value) -> Result<Self::Value, TensorError>;
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub struct TapeOptions {
    pub mode: PrecisionMode,
    /// Batch statistics and active dropout when true.
    pub training: bool,
    /// Seeds the dropout masks drawn during this pass.
    pub seed: u64,
}

impl Default for TapeOptions {
    fn default() -> Self {
        TapeOptions {
            mode: PrecisionMode::Single,
            training: false,
            seed: 0,
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, opts: Conv2dOptions },
    BatchNorm { x: Var, gamma: Var, beta: Var, normalized: Vec<f64>, inv_std: Vec<f64>, training: bool },
    Swish { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Gap { x: Var },
    Concat { xs: Vec<Var> },
    Scale { x: Var, gate: Var },
    Add { a: Var, b: Var },
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { probs: Var, targets: Vec<usize> },
    Sum { x: Var },
    MulConst { x: Var, c: f64 },
    Dot { x: Var, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Floor applied to probabilities inside the log of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// `-ln(max(p, LOG_CLAMP))`, except that NaN stays NaN so a diverged forward
/// pass cannot hide behind the clamp.
pub fn clamped_nll(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(LOG_CLAMP).ln()
    }
}

/// Records a forward computation for reverse-mode differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    opts: TapeOptions,
    rng: ChaCha8Rng,
    stat_updates: Vec<StatUpdate>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, opts: TapeOptions) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            opts,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            stat_updates: Vec::new(),
        }
    }

    pub fn options(&self) -> TapeOptions {
        self.opts
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-param nodes own their value"),
        }
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        self.opts.mode.round_slice(value.data_mut());
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Running-statistic updates collected from training-mode batch norms.
    pub fn stat_updates(&self) -> &[StatUpdate] {
        &self.stat_updates
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn conv2d_var(&mut self, x: Var, w: Var, b: Option<Var>, opts: Conv2dOptions) -> Result<Var, TensorError> {
        let y = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), opts)?;
        Ok(self.push(y, Op::Conv { x, w, b, opts }))
    }

    pub fn batch_norm_var(&mut self, x: Var, gamma: Var, beta: Var, bn: &BnParams) -> Result<Var, TensorError> {
        let training = self.opts.training;
        let fwd = ops::batch_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            self.params.get(bn.running_mean).data(),
            self.params.get(bn.running_var).data(),
            ops::BN_EPS,
            training,
        )?;
        if let (Some(m), Some(v)) = (&fwd.batch_mean, &fwd.batch_var) {
            for (id, batch) in [(bn.running_mean, m), (bn.running_var, v)] {
                let mut values = self.params.get(id).data().to_vec();
                ops::update_running(&mut values, batch, ops::BN_MOMENTUM);
                self.opts.mode.round_slice(&mut values);
                self.stat_updates.push(StatUpdate { id, values });
            }
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            normalized: fwd.normalized,
            inv_std: fwd.inv_std,
            training,
        };
        Ok(self.push(fwd.output, op))
    }

    pub fn swish_var(&mut self, x: Var) -> Var {
        let y = ops::swish(self.value(x), SWISH_BETA);
        self.push(y, Op::Swish { x })
    }

    pub fn sigmoid_var(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn softmax_var(&mut self, x: Var) -> Result<Var, TensorError> {
        let y = ops::softmax(self.value(x))?;
        Ok(self.push(y, Op::Softmax { x }))
    }

    pub fn linear_var(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let y = ops::fully_connected(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn gap_var(&mut self, x: Var) -> Result<Var, TensorError> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::Gap { x }))
    }

    pub fn concat_var(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let tensors: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&tensors)?;
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn scale_var(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        let y = ops::scale_channels(self.value(x), self.value(gate))?;
        Ok(self.push(y, Op::Scale { x, gate }))
    }

    pub fn add_var(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn dropout_var(&mut self, x: Var, rate: f64) -> Result<Var, TensorError> {
        ops::check_dropout_rate(rate)?;
        if !self.opts.training || rate == 0.0 {
            return Ok(x);
        }
        let mask = ops::dropout_mask(self.value(x).len(), rate, &mut self.rng);
        let t = self.value(x);
        let y = Tensor::from_parts(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(a, m)| a * m).collect());
        Ok(self.push(y, Op::Dropout { x, mask }))
    }

    /// Mean over the batch of `-ln(max(p[target], LOG_CLAMP))`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var, TensorError> {
        const OP: &str = "cross_entropy";
        let (n, c) = self.value(probs).dims2(OP)?;
        if targets.len() != n {
            return Err(TensorError::DimMismatch { op: OP, dim: "target count", expected: n, actual: targets.len() });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::invalid(OP, format!("target {t} out of range for {c} classes")));
        }
        let p = self.value(probs).data();
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| clamped_nll(p[i * c + t]))
            .sum::<f64>()
            / n as f64;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, targets: targets.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let y = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect());
        self.push(y, Op::MulConst { x, c })
    }

    /// `sum(x * weights)` against a constant weight vector.
    pub fn dot_const(&mut self, x: Var, weights: &[f64]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.len() != weights.len() {
            return Err(TensorError::DimMismatch { op: "dot", dim: "length", expected: t.len(), actual: weights.len() });
        }
        let s = t.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, weights: weights.to_vec() }))
    }

    /// Gradient of the scalar `loss` with respect to every parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => {
                    let mut g = g;
                    self.opts.mode.round_slice(&mut g);
                    out.add(*id, g);
                }
                Op::Conv { x, w, b, opts } => {
                    let (gx, gw, gb) = ops::conv2d_backward(self.value(*x), self.value(*w), &g, b.is_some(), *opts)?;
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    if let (Some(b), Some(gb)) = (b, gb) {
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::BatchNorm { x, gamma, beta, normalized, inv_std, training } => {
                    let (gx, gg, gb) = ops::batch_norm_backward(
                        self.value(*x).shape(),
                        &g,
                        normalized,
                        self.value(*gamma).data(),
                        inv_std,
                        *training,
                    );
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                }
                Op::Swish { x } => {
                    let gx = ops::swish_backward(self.value(*x).data(), &g, SWISH_BETA);
                    acc(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let gx = ops::sigmoid_backward(self.value(Var(i)).data(), &g);
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax { x } => {
                    let gx = ops::softmax_backward(self.value(Var(i)), &g);
                    acc(&mut grads, *x, gx);
                }
                Op::Linear { x, w, b } => {
                    let (gx, gw, gb) = ops::fully_connected_backward(self.value(*x), self.value(*w), &g);
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    if let Some(b) = b {
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Gap { x } => {
                    let gx = ops::global_avg_pool_backward(self.value(*x).shape(), &g);
                    acc(&mut grads, *x, gx);
                }
                Op::Concat { xs } => {
                    let channels: Vec<usize> = xs.iter().map(|&v| self.value(v).shape()[1]).collect();
                    let parts = ops::concat_channels_backward(&channels, self.value(Var(i)).shape(), &g);
                    for (v, gp) in xs.iter().zip(parts) {
                        acc(&mut grads, *v, gp);
                    }
                }
                Op::Scale { x, gate } => {
                    let (gx, gg) = ops::scale_channels_backward(self.value(*x), self.value(*gate), &g);
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gate, gg);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Dropout { x, mask } => {
                    let gx = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::CrossEntropy { probs, targets } => {
                    let p = self.value(*probs);
                    let (n, c) = (p.shape()[0], p.shape()[1]);
                    let mut gp = vec![0.0; n * c];
                    for (r, &t) in targets.iter().enumerate() {
                        let pv = p.data()[r * c + t];
                        if pv > LOG_CLAMP {
                            gp[r * c + t] = -g[0] / (n as f64 * pv);
                        }
                    }
                    acc(&mut grads, *probs, gp);
                }
                Op::Sum { x } => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, vec![g[0]; n]);
                }
                Op::MulConst { x, c } => {
                    acc(&mut grads, *x, g.iter().map(|v| v * c).collect());
                }
                Op::Dot { x, weights } => {
                    acc(&mut grads, *x, weights.iter().map(|w| w * g[0]).collect());
                }
            }
        }
        Ok(out)
    }
}

impl Exec for Tape<'_> {
    type Value = Var;

    fn shape_of<'a>(&'a self, v: &'a Var) -> &'a [usize] {
        self.value(*v).shape()
    }

    fn conv2d(&mut self, x: &Var, weight: ParamId, bias: Option<ParamId>, opts: Conv2dOptions) -> Result<Var, TensorError> {
        let w = self.param(weight);
        let b = bias.map(|b| self.param(b));
        self.conv2d_var(*x, w, b, opts)
    }

    fn batch_norm(&mut self, x: &Var, bn: &BnParams) -> Result<Var, TensorError> {
        let gamma = self.param(bn.gamma);
        let beta = self.param(bn.beta);
        self.batch_norm_var(*x, gamma, beta, bn)
    }

    fn swish(&mut self, x: &Var) -> Result<Var, TensorError> {
        Ok(self.swish_var(*x))
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var, TensorError> {
        Ok(self.sigmoid_var(*x))
    }

    fn linear(&mut self, x: &Var, weight: ParamId, bias: Option<ParamId>) -> Result<Var, TensorError> {
        let w = self.param(weight);
        let b = bias.map(|b| self.param(b));
        self.linear_var(*x, w, b)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var, TensorError> {
        self.gap_var(*x)
    }

    fn scale_channels(&mut self, x: &Var, gate: &Var) -> Result<Var, TensorError> {
        self.scale_var(*x, *gate)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        self.add_var(*a, *b)
    }

    fn concat_channels(&mut self, xs: &[&Var]) -> Result<Var, TensorError> {
        let vars: Vec<Var> = xs.iter().map(|v| **v).collect();
        self.concat_var(&vars)
    }

    fn dropout(&mut self, x: &Var, rate: f64) -> Result<Var, TensorError> {
        self.dropout_var(*x, rate)
    }

    fn softmax(&mut self, x: &Var) -> Result<Var, TensorError> {
        self.softmax_var(*x)
    }
}

/// Eval-mode executor over owned tensors. Holds no history.
pub struct Infer<'p> {
    params: &'p ParamStore,
    mode: PrecisionMode,
}

impl<'p> Infer<'p> {
    pub fn new(params: &'p ParamStore, mode: PrecisionMode) -> Self {
        Infer { params, mode }
    }

    fn round(&self, mut t: Tensor) -> Tensor {
        self.mode.round_slice(t.data_mut());
        t
    }
}

impl Exec for Infer<'_> {
    type Value = Tensor;

    fn shape_of<'a>(&'a self, v: &'a Tensor) -> &'a [usize] {
        v.shape()
    }

    fn conv2d(&mut self, x: &Tensor, weight: ParamId, bias: Option<ParamId>, opts: Conv2dOptions) -> Result<Tensor, TensorError> {
        let p = self.params;
        Ok(self.round(ops::conv2d(x, p.get(weight), bias.map(|b| p.get(b)), opts)?))
    }

    fn batch_norm(&mut self, x: &Tensor, bn: &BnParams) -> Result<Tensor, TensorError> {
        let p = self.params;
        let fwd = ops::batch_norm_forward(
            x,
            p.get(bn.gamma).data(),
            p.get(bn.beta).data(),
            p.get(bn.running_mean).data(),
            p.get(bn.running_var).data(),
            ops::BN_EPS,
            false,
        )?;
        Ok(self.round(fwd.output))
    }

    fn swish(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.round(ops::swish(x, SWISH_BETA)))
    }

    fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.round(ops::sigmoid(x)))
    }

    fn linear(&mut self, x: &Tensor, weight: ParamId, bias: Option<ParamId>) -> Result<Tensor, TensorError> {
        let p = self.params;
        Ok(self.round(ops::fully_connected(x, p.get(weight), bias.map(|b| p.get(b)))?))
    }

    fn global_avg_pool(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.round(ops::global_avg_pool(x)?))
    }

    fn scale_channels(&mut self, x: &Tensor, gate: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.round(ops::scale_channels(x, gate)?))
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.round(ops::add(a, b)?))
    }

    fn concat_channels(&mut self, xs: &[&Tensor]) -> Result<Tensor, TensorError> {
        ops::concat_channels(xs)
    }

    fn dropout(&mut self, x: &Tensor, rate: f64) -> Result<Tensor, TensorError> {
        ops::check_dropout_rate(rate)?;
        Ok(x.clone())
    }

    fn softmax(&mut self, x: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.round(ops::softmax(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    #[test]
    fn linear_sum_gradient_is_input_broadcast() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::from_fn(&[3, 2], |i| i as f64 * 0.1), ParamKind::Trainable)
            .unwrap();
        let unused = store.add("unused", Tensor::full(&[4], 1.0), ParamKind::Trainable).unwrap();
        let x = Tensor::new(vec![1, 2], vec![2.0, -3.0]).unwrap();
        let mut tape = Tape::new(&store, TapeOptions { mode: PrecisionMode::Double, ..Default::default() });
        let xv = tape.input(x);
        let y = tape.linear(&xv, w, None).unwrap();
        let _ = tape.param(unused);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        // d sum(Wx) / dW[j,k] = x[k] for every row j.
        assert_eq!(grads.get(w).unwrap(), &[2.0, -3.0, 2.0, -3.0, 2.0, -3.0]);
        assert!(grads.get(unused).is_none());

        store.accumulate(&grads);
        store.accumulate(&grads);
        assert_eq!(store.get(w).grad().unwrap(), &[4.0, -6.0, 4.0, -6.0, 4.0, -6.0]);
        // A parameter with no path to the loss never receives a gradient.
        assert!(store.get(unused).grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, TapeOptions::default());
        let x = tape.input(Tensor::zeros(&[1, 3]));
        let err = tape.backward(x).unwrap_err();
        assert_eq!(err, TensorError::NonScalarLoss(vec![1, 3]));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Tensor::from_fn(&[4, 2, 3, 3], |i| ((i * 37) % 11) as f64 / 11.0 - 0.5), ParamKind::Trainable)
            .unwrap();
        let x = Tensor::from_fn(&[2, 2, 6, 6], |i| ((i * 13) % 7) as f64 / 7.0);
        let run = || {
            let mut inf = Infer::new(&store, PrecisionMode::Single);
            let y = inf.conv2d(&x, w, None, Conv2dOptions::stride(2)).unwrap();
            inf.swish(&y).unwrap()
        };
        assert_eq!(run(), run());
    }
}
