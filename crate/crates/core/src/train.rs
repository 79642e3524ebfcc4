//! Loss, Adam, the training loop with best-weight checkpointing, evaluation
//! and the refinement-unit sweep.

use std::io::Write;

use crate::autodiff::{Infer, Tape, TapeOptions, Var};
use crate::data::Dataset;
use crate::error::{CheckpointError, Error, Result, TensorError};
use crate::metrics::{Accumulator, MetricsReport};
use crate::model::checkpoint::{parse_spec_echo, SPEC_TENSOR};
use crate::model::{count_params, load_checkpoint_for, read_tensors, save_checkpoint, write_tensors, Model, ModelSpec, NamedTensor};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{PrecisionMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments per trainable parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    moments: Vec<(ParamId, Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let moments = params
            .trainable_ids()
            .map(|id| {
                let n = params.get(id).len();
                (id, vec![0.0; n], vec![0.0; n])
            })
            .collect();
        AdamState { step: 0, moments }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient in `grads`
/// are left untouched, moments included. Parameters and moments are kept in
/// single precision so a saved state resumes exactly.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: &OptimizerConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let r = |v: f64| PrecisionMode::Single.round(v);
    for (id, m, v) in &mut state.moments {
        let Some(g) = grads.get(*id) else { continue };
        let p = params.get_mut(*id).data_mut();
        for i in 0..p.len() {
            m[i] = r(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
            v[i] = r(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
            let update = cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p[i] = r(p[i] - update);
        }
    }
}

/// `Σ_h weight_h · mean_batch(-ln max(p_h[target], 1e-12))` on the tape.
pub fn cross_entropy_loss(tape: &mut Tape<'_>, probs: &[Var], targets: &[&[usize]], weights: &[f64]) -> Result<Var, TensorError> {
    if probs.len() != targets.len() || probs.len() != weights.len() || probs.is_empty() {
        return Err(TensorError::invalid("cross_entropy", "need one target list and one weight per head"));
    }
    let mut total: Option<Var> = None;
    for ((&p, t), &w) in probs.iter().zip(targets).zip(weights) {
        let ce = tape.cross_entropy(p, t)?;
        let term = tape.mul_const(ce, w);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add_var(acc, term)?,
        });
    }
    Ok(total.expect("at least one head"))
}

/// Same loss evaluated directly on probability matrices.
pub fn cross_entropy_value(probs: &[&Tensor], targets: &[&[usize]], weights: &[f64]) -> f64 {
    probs
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((p, t), w)| {
            let c = p.shape()[1];
            w * t.iter().enumerate().map(|(i, &k)| crate::autodiff::clamped_nll(p.data()[i * c + k])).sum::<f64>() / t.len() as f64
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Hierarchy level whose labels each head is trained on, in head order.
    pub head_levels: Vec<usize>,
    /// Loss weight per head; `None` means 1 for every head.
    pub head_weights: Option<Vec<f64>>,
}

impl TrainConfig {
    pub fn new(head_levels: Vec<usize>) -> Self {
        TrainConfig { epochs: 50, batch_size: 32, optimizer: OptimizerConfig::default(), seed: 0, head_levels, head_weights: None }
    }

    fn weights(&self) -> Vec<f64> {
        self.head_weights.clone().unwrap_or_else(|| vec![1.0; self.head_levels.len()])
    }

    fn validate(&self, model: &Model) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.head_levels.len() != model.spec().heads.len() || self.weights().len() != self.head_levels.len() {
            return Err(Error::Config(format!(
                "{} heads need as many levels and weights, got {} and {}",
                model.spec().heads.len(),
                self.head_levels.len(),
                self.weights().len()
            )));
        }
        Ok(())
    }

    fn finest_head(&self) -> usize {
        (0..self.head_levels.len()).max_by_key(|&h| (self.head_levels[h], h)).unwrap_or(0)
    }
}

/// One row of the learning curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Finest-head top-1 of the training-mode forward passes.
    pub train_top1: f64,
    pub val_loss: f64,
    /// Finest-head top-1 on the validation split, eval mode.
    pub val_top1: f64,
}

pub fn write_curves_csv<W: Write>(out: W, curves: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |source| Error::Csv { path: "<curves>".into(), source };
    w.write_record(["epoch", "train_loss", "train_top1", "val_loss", "val_top1"]).map_err(map)?;
    for r in curves {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.train_top1.to_string(), r.val_loss.to_string(), r.val_top1.to_string()])
            .map_err(map)?;
    }
    w.flush().map_err(|e| Error::io("<curves>", e))
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub adam: AdamState,
    pub curves: Vec<EpochRecord>,
    /// Correct finest-head validation predictions of the best epoch so far.
    pub best_correct: Option<u64>,
    pub best_epoch: Option<usize>,
    /// Checkpoint bytes of the best weights so far.
    pub best_checkpoint: Vec<u8>,
}

const STATE_PREFIX_M: &str = "__adam_m__/";
const STATE_PREFIX_V: &str = "__adam_v__/";
const STATE_META: &str = "__train_meta__";
const STATE_CURVES: &str = "__curves__";
const STATE_BEST_PREFIX: &str = "__best__/";

impl TrainState {
    pub fn new(model: &Model) -> Self {
        TrainState {
            epoch: 0,
            adam: AdamState::new(model.params()),
            curves: Vec::new(),
            best_correct: None,
            best_epoch: None,
            best_checkpoint: save_checkpoint(model),
        }
    }

    /// Serializes the model and this state in the checkpoint container.
    /// Integers are split into 16-bit pieces so they survive the f32 encoding.
    /// The best weights ride along under a name prefix.
    pub fn to_bytes(&self, model: &Model) -> Vec<u8> {
        let model_tensors = read_tensors(&save_checkpoint(model)).expect("freshly written checkpoint parses");
        let mut tensors = model_tensors;
        for (id, m, v) in &self.adam.moments {
            let name = model.params().name(*id);
            let shape = model.params().get(*id).shape().to_vec();
            tensors.push(NamedTensor { name: format!("{STATE_PREFIX_M}{name}"), shape: shape.clone(), values: m.iter().map(|&x| x as f32).collect() });
            tensors.push(NamedTensor { name: format!("{STATE_PREFIX_V}{name}"), shape, values: v.iter().map(|&x| x as f32).collect() });
        }
        let split = |v: u64| [(v >> 48) as f32, ((v >> 32) & 0xffff) as f32, ((v >> 16) & 0xffff) as f32, (v & 0xffff) as f32];
        let mut meta = Vec::new();
        for v in [self.adam.step, self.epoch as u64, self.best_correct.map_or(u64::MAX, |c| c), self.best_epoch.map_or(u64::MAX, |e| e as u64)] {
            meta.extend(split(v));
        }
        tensors.push(NamedTensor { name: STATE_META.into(), shape: vec![meta.len()], values: meta });
        if !self.curves.is_empty() {
            // Curves keep full f64 precision: each value's bit pattern in four pieces.
            let values = self
                .curves
                .iter()
                .flat_map(|r| [r.epoch as f64, r.train_loss, r.train_top1, r.val_loss, r.val_top1])
                .flat_map(|v| split(v.to_bits()))
                .collect();
            tensors.push(NamedTensor { name: STATE_CURVES.into(), shape: vec![self.curves.len(), 20], values });
        }
        let best = read_tensors(&self.best_checkpoint).expect("best checkpoint was written by this crate");
        tensors.extend(best.into_iter().map(|t| NamedTensor { name: format!("{STATE_BEST_PREFIX}{}", t.name), ..t }));
        write_tensors(&tensors)
    }

    /// Restores the model weights from `bytes` into `model` and returns the state.
    pub fn from_bytes(model: &mut Model, bytes: &[u8]) -> Result<Self> {
        let tensors = read_tensors(bytes)?;
        let n_model = model.params().len() + 1;
        if tensors.len() < n_model {
            return Err(CheckpointError::CountMismatch { expected: n_model, found: tensors.len() }.into());
        }
        load_checkpoint_for(model, &write_tensors(&tensors[..n_model]))?;
        let find = |name: &str| tensors.iter().find(|t| t.name == name);
        let missing = |name: &str| Error::from(CheckpointError::MissingTensor(name.to_string()));
        let mut adam = AdamState::new(model.params());
        for (id, m, v) in &mut adam.moments {
            let name = model.params().name(*id);
            for (prefix, dst) in [(STATE_PREFIX_M, &mut *m), (STATE_PREFIX_V, &mut *v)] {
                let full = format!("{prefix}{name}");
                let t = find(&full).ok_or_else(|| missing(&full))?;
                if t.values.len() != dst.len() {
                    return Err(CheckpointError::ShapeMismatch { name: full, expected: vec![dst.len()], found: t.shape.clone() }.into());
                }
                dst.iter_mut().zip(&t.values).for_each(|(d, &s)| *d = s as f64);
            }
        }
        let meta = find(STATE_META).ok_or_else(|| missing(STATE_META))?;
        if meta.values.len() != 16 {
            return Err(CheckpointError::BadSpec("training metadata has the wrong length".into()).into());
        }
        let join = |i: usize| meta.values[4 * i..4 * i + 4].iter().fold(0u64, |acc, &h| (acc << 16) | h as u64);
        adam.step = join(0);
        let opt = |v: u64| (v != u64::MAX).then_some(v);
        let curves = find(STATE_CURVES).map_or_else(Vec::new, |t| {
            t.values
                .chunks_exact(20)
                .map(|row| {
                    let r: Vec<f64> = row.chunks_exact(4).map(|p| f64::from_bits(p.iter().fold(0u64, |acc, &h| (acc << 16) | h as u64))).collect();
                    EpochRecord { epoch: r[0] as usize, train_loss: r[1], train_top1: r[2], val_loss: r[3], val_top1: r[4] }
                })
                .collect()
        });
        let best: Vec<NamedTensor> = tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(STATE_BEST_PREFIX).map(|n| NamedTensor { name: n.to_string(), ..t.clone() }))
            .collect();
        if best.is_empty() {
            return Err(missing(STATE_BEST_PREFIX));
        }
        Ok(TrainState {
            epoch: join(1) as usize,
            adam,
            curves,
            best_correct: opt(join(2)),
            best_epoch: opt(join(3)).map(|e| e as usize),
            best_checkpoint: write_tensors(&best),
        })
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curves: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_top1: f64,
    /// Checkpoint of the best weights, or of the initial weights when no epoch ran.
    pub best_checkpoint: Vec<u8>,
    pub steps: u64,
    pub state: TrainState,
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut h = seed ^ 0x5851_f42d_4c95_7f2d;
    for v in [epoch as u64, batch as u64] {
        h = (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(29);
    }
    h
}

/// Trains from scratch. See [`train_resumable`].
pub fn train(model: &mut Model, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_resumable(model, train_set, val_set, cfg, None, |_, _| Ok(()))
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`. After every epoch the best
/// checkpoint is refreshed when finest-head validation top-1 strictly improves,
/// then `on_epoch` sees the model and the updated state (for persisting it).
pub fn train_resumable(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(model)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!("training needs non-empty splits (train {}, val {})", train_set.len(), val_set.len())));
    }
    let weights = cfg.weights();
    let finest = cfg.finest_head();
    let mut state = resume.unwrap_or_else(|| TrainState::new(model));
    for epoch in state.epoch + 1..=cfg.epochs {
        let (mut loss_sum, mut seen, mut correct) = (0.0, 0usize, 0usize);
        for (bi, batch) in train_set.batches(cfg.batch_size, cfg.seed, epoch).enumerate() {
            let opts = TapeOptions { mode: PrecisionMode::Single, training: true, seed: batch_seed(cfg.seed, epoch, bi) };
            let (grads, updates, loss, batch_correct) = {
                let mut tape = Tape::new(model.params(), opts);
                let x = tape.input(batch.images.clone());
                let out = model.forward(&mut tape, &x)?;
                let targets: Vec<&[usize]> = cfg.head_levels.iter().map(|&l| batch.labels[l].as_slice()).collect();
                let loss = cross_entropy_loss(&mut tape, &out.probs, &targets, &weights)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                let probs = tape.value(out.probs[finest]);
                let c = probs.shape()[1];
                let fine_targets = targets[finest];
                let ok = probs.data().chunks_exact(c).zip(fine_targets).filter(|(row, &t)| crate::metrics::argmax(row) == t).count();
                (tape.backward(loss)?, tape.take_stat_updates(), value, ok)
            };
            adam_step(model.params_mut(), &grads, &mut state.adam, &cfg.optimizer);
            model.params_mut().apply_stat_updates(&updates);
            let n = batch.labels[0].len();
            loss_sum += loss * n as f64;
            seen += n;
            correct += batch_correct;
        }
        let report = evaluate(model, val_set, &cfg.head_levels, &weights, cfg.batch_size)?;
        let val = report.heads[finest].1.clone();
        let val_correct = val.confusion_trace();
        state.curves.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_top1: correct as f64 / seen as f64,
            val_loss: report.loss,
            val_top1: val.top1,
        });
        if state.best_correct.is_none_or(|b| val_correct > b) {
            state.best_correct = Some(val_correct);
            state.best_epoch = Some(epoch);
            state.best_checkpoint = save_checkpoint(model);
        }
        state.epoch = epoch;
        log::info!("epoch {epoch}: train loss {:.4}, val top-1 {:.4}", loss_sum / seen as f64, val.top1);
        on_epoch(model, &state)?;
    }
    Ok(TrainOutcome {
        curves: state.curves.clone(),
        best_epoch: state.best_epoch,
        best_val_top1: state.best_correct.map_or(0.0, |c| c as f64 / val_set.len() as f64),
        best_checkpoint: state.best_checkpoint.clone(),
        steps: state.adam.step,
        state,
    })
}

/// Eval-mode metrics of every head on `data`.
pub fn evaluate(model: &Model, data: &Dataset, head_levels: &[usize], weights: &[f64], batch_size: usize) -> Result<MetricsReport> {
    if head_levels.len() != model.spec().heads.len() || weights.len() != head_levels.len() {
        return Err(Error::Config("one hierarchy level and weight per head required".into()));
    }
    let mut accs: Vec<Accumulator> = model.spec().heads.iter().map(|&c| Accumulator::new(c)).collect();
    let mut loss_sum = 0.0;
    for batch in data.ordered_batches(batch_size) {
        let mut ex = Infer::new(model.params(), PrecisionMode::Single);
        let out = model.forward(&mut ex, &batch.images)?;
        let targets: Vec<&[usize]> = head_levels.iter().map(|&l| batch.labels[l].as_slice()).collect();
        for ((acc, p), t) in accs.iter_mut().zip(&out.probs).zip(&targets) {
            acc.add_rows(p.data(), t);
        }
        let probs: Vec<&Tensor> = out.probs.iter().collect();
        loss_sum += cross_entropy_value(&probs, &targets, weights) * batch.labels[0].len() as f64;
    }
    Ok(MetricsReport {
        heads: head_levels.iter().copied().zip(accs.iter().map(Accumulator::finish)).collect(),
        loss: if data.is_empty() { 0.0 } else { loss_sum / data.len() as f64 },
    })
}

/// One row of the refinement-unit sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub num_units: usize,
    pub params: u64,
    pub val_top1: f64,
}

/// Trains one model per refinement-unit count, all from the same seed.
pub fn sweep_refinement_blocks(base: &ModelSpec, counts: &[usize], train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<Vec<SweepRow>> {
    if counts.is_empty() {
        return Err(Error::Config("sweep needs at least one unit count".into()));
    }
    counts
        .iter()
        .map(|&n| {
            let mut spec = base.clone();
            spec.refinement.num_units = n;
            let mut model = Model::build(&spec, cfg.seed)?;
            let params = count_params(&model)?.total;
            let outcome = train(&mut model, train_set, val_set, cfg)?;
            log::info!("sweep: {n} units, {params} params, best val top-1 {:.4}", outcome.best_val_top1);
            Ok(SweepRow { num_units: n, params, val_top1: outcome.best_val_top1 })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |source| Error::Csv { path: "<sweep>".into(), source };
    w.write_record(["num_units", "params", "val_top1"]).map_err(map)?;
    for r in rows {
        w.write_record([r.num_units.to_string(), r.params.to_string(), r.val_top1.to_string()]).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io("<sweep>", e))
}

/// Spec stored in a checkpoint, without building the model.
pub fn checkpoint_spec(bytes: &[u8]) -> Result<ModelSpec> {
    let tensors = read_tensors(bytes)?;
    if tensors.first().is_none_or(|t| t.name != SPEC_TENSOR) {
        return Err(CheckpointError::MissingSpec.into());
    }
    Ok(parse_spec_echo(&tensors)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::relative_error;
    use crate::init::Initializer;
    use crate::params::ParamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_closed_forms() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, TapeOptions { mode: PrecisionMode::Double, ..Default::default() });
        let onehot = tape.input(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let uniform = tape.input(Tensor::full(&[2, 5], 0.2));
        let loss = cross_entropy_loss(&mut tape, &[onehot, uniform], &[&[0, 2], &[1, 4]], &[1.0, 0.5]).unwrap();
        assert!((tape.value(loss).data()[0] - 0.5 * 5f64.ln()).abs() < 1e-12);
        let uniform2 = tape.input(Tensor::full(&[1, 82], 1.0 / 82.0));
        let u3 = tape.input(Tensor::full(&[1, 6], 1.0 / 6.0));
        let l = cross_entropy_loss(&mut tape, &[u3, uniform2], &[&[0], &[81]], &[1.0, 1.0]).unwrap();
        assert!((tape.value(l).data()[0] - (6f64.ln() + 82f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits_t = Tensor::from_fn(&[4, 5], |_| rng.random_range(-2.0..2.0));
        let id = store.add("logits", logits_t.clone(), ParamKind::Trainable).unwrap();
        let targets = [0usize, 3, 4, 1];
        let mut tape = Tape::new(&store, TapeOptions { mode: PrecisionMode::Double, ..Default::default() });
        let z = tape.param(id);
        let p = tape.softmax_var(z).unwrap();
        let loss = cross_entropy_loss(&mut tape, &[p], &[&targets], &[1.0]).unwrap();
        let g = tape.backward(loss).unwrap();
        let probs = tape.value(p).clone();
        for (i, &gv) in g.get(id).unwrap().iter().enumerate() {
            let (r, c) = (i / 5, i % 5);
            let expected = (probs.data()[i] - if targets[r] == c { 1.0 } else { 0.0 }) / 4.0;
            assert!(relative_error(gv, expected) < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut store = ParamStore::new();
        let (w, _) = Initializer::new(&mut store, 2).linear("fc", 3, 4).unwrap();
        let before = store.get(w).clone();
        let mut state = AdamState::new(&store);
        let mut grads = Gradients::default();
        grads.add(w, vec![0.0; 12]);
        adam_step(&mut store, &grads, &mut state, &OptimizerConfig::default());
        assert_eq!(store.get(w).data(), before.data());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::full(&[3], 1.0), ParamKind::Trainable).unwrap();
        let mut grads = Gradients::default();
        grads.add(id, vec![0.5, -2.0, 3.0]);
        let mut state = AdamState::new(&store);
        let cfg = OptimizerConfig { learning_rate: 1e-3, ..Default::default() };
        adam_step(&mut store, &grads, &mut state, &cfg);
        let moved: Vec<f64> = store.get(id).data().iter().map(|p| 1.0 - p).collect();
        for (d, g) in moved.iter().zip([0.5f64, -2.0, 3.0]) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
            assert!((d - 1e-3 * g.signum()).abs() < 1e-7, "{d}");
        }
        let mut again = ParamStore::new();
        let id2 = again.add("p", Tensor::full(&[3], 1.0), ParamKind::Trainable).unwrap();
        let mut s2 = AdamState::new(&again);
        let mut g2 = Gradients::default();
        g2.add(id2, vec![0.5, -2.0, 3.0]);
        adam_step(&mut again, &g2, &mut s2, &cfg);
        assert_eq!(again.get(id2).data(), store.get(id).data());
        assert_eq!(s2, state);
    }

    #[test]
    fn invalid_optimizer_rejected() {
        assert!(OptimizerConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
