//! Helpers shared by the integration and acceptance tests: the gradient suite,
//! brute-force metric oracles, an independent bilinear resampler and toy-corpus
//! fixtures.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ypose::autodiff::{Tape, Var};
use ypose::blocks::{InvertedResidual, MbConv, MbConvConfig, RefinementConfig, RefinementUnit};
use ypose::data::{load_manifest, Dataset, Pipeline};
use ypose::gradcheck::{grad_check, probe_loss, relative_error, GradCheckOptions};
use ypose::init::Initializer;
use ypose::ops::{Conv2dOptions, Padding};
use ypose::params::{ParamId, ParamKind, ParamStore};
use ypose::toy::{generate, ToyCorpus, ToyCorpusOptions};
use ypose::{PrecisionMode, Tensor, TensorError};

pub fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn leaf(store: &mut ParamStore, name: &str, shape: &[usize], seed: u64) -> ParamId {
    store.add(name, random(shape, -1.0, 1.0, seed), ParamKind::Trainable).unwrap()
}

fn init(store: &mut ParamStore, seed: u64) -> Initializer<'_> {
    Initializer::new(store, seed).with_mode(PrecisionMode::Double)
}

/// Outcome of one finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Worst element: parameter name, analytic and numeric derivative.
    pub worst: (String, f64, f64),
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

const TOL: f64 = 1e-4;

fn case<F>(name: &'static str, store: &mut ParamStore, training: bool, f: F) -> GradCase
where
    F: Fn(&mut Tape<'_>) -> Result<Var, TensorError>,
{
    let report = grad_check(store, GradCheckOptions { training, seed: 99, ..Default::default() }, f).unwrap();
    GradCase { name, max_rel_error: report.max_rel_error, tolerance: TOL, checked: report.checked, worst: (report.worst_param, report.analytic, report.numeric) }
}

fn conv_case(name: &'static str, input: &[usize], cout: usize, k: usize, opts: Conv2dOptions, seed: u64) -> GradCase {
    let mut s = ParamStore::new();
    let x = leaf(&mut s, "x", input, seed);
    let w = init(&mut s, seed + 1).conv("c", cout, input[1] / opts.groups, k, k, opts.groups).unwrap();
    let b = leaf(&mut s, "b", &[cout], seed + 2);
    case(name, &mut s, false, |t| {
        let (xv, wv, bv) = (t.param(x), t.param(w), t.param(b));
        let y = t.conv2d_var(xv, wv, Some(bv), opts)?;
        probe_loss(t, y, seed + 3)
    })
}

fn unary_case(name: &'static str, op: fn(&mut Tape<'_>, Var) -> Result<Var, TensorError>, shape: &[usize], seed: u64) -> GradCase {
    let mut s = ParamStore::new();
    let x = leaf(&mut s, "x", shape, seed);
    case(name, &mut s, true, |t| {
        let xv = t.param(x);
        let y = op(t, xv)?;
        probe_loss(t, y, seed + 1)
    })
}

fn batch_norm_case(name: &'static str, training: bool, seed: u64) -> GradCase {
    let mut s = ParamStore::new();
    let x = leaf(&mut s, "x", &[3, 4, 3, 3], seed);
    let bn = init(&mut s, seed).batch_norm("bn", 4).unwrap();
    *s.get_mut(bn.gamma) = random(&[4], 0.5, 1.5, seed + 1);
    *s.get_mut(bn.beta) = random(&[4], -0.5, 0.5, seed + 2);
    *s.get_mut(bn.running_mean) = random(&[4], -0.3, 0.3, seed + 3);
    *s.get_mut(bn.running_var) = random(&[4], 0.5, 2.0, seed + 4);
    case(name, &mut s, training, |t| {
        let (xv, g, b) = (t.param(x), t.param(bn.gamma), t.param(bn.beta));
        let y = t.batch_norm_var(xv, g, b, &bn)?;
        probe_loss(t, y, seed + 5)
    })
}

/// Finite-difference checks of every primitive op and composite block, at
/// tiny sizes, in double precision.
pub fn gradient_suite() -> Vec<GradCase> {
    let mut out = vec![
        conv_case("conv2d same stride 1", &[2, 3, 5, 5], 4, 3, Conv2dOptions::default(), 1),
        conv_case("conv2d same stride 2 (odd padding)", &[2, 2, 6, 6], 3, 3, Conv2dOptions::stride(2), 5),
        conv_case("conv2d valid", &[1, 2, 5, 4], 2, 3, Conv2dOptions { padding: Padding::Valid, ..Default::default() }, 9),
        conv_case("depthwise conv2d 5x5 stride 2", &[2, 3, 7, 7], 3, 5, Conv2dOptions::depthwise(3, 2), 13),
        batch_norm_case("batch norm (batch statistics)", true, 17),
        batch_norm_case("batch norm (running statistics)", false, 23),
        unary_case("swish", |t, x| Ok(t.swish_var(x)), &[2, 3, 2, 2], 29),
        unary_case("sigmoid", |t, x| Ok(t.sigmoid_var(x)), &[3, 5], 31),
        unary_case("softmax", |t, x| t.softmax_var(x), &[3, 5], 37),
        unary_case("global average pool", |t, x| t.gap_var(x), &[2, 3, 3, 2], 41),
        unary_case("dropout (fixed mask)", |t, x| t.dropout_var(x, 0.4), &[4, 6], 43),
    ];

    let mut s = ParamStore::new();
    let x = leaf(&mut s, "x", &[3, 4], 47);
    let (w, b) = init(&mut s, 48).linear("fc", 5, 4).unwrap();
    *s.get_mut(b) = random(&[5], -0.5, 0.5, 49);
    out.push(case("fully connected", &mut s, false, |t| {
        let (xv, wv, bv) = (t.param(x), t.param(w), t.param(b));
        let y = t.linear_var(xv, wv, Some(bv))?;
        probe_loss(t, y, 50)
    }));

    let mut s = ParamStore::new();
    let x = leaf(&mut s, "x", &[2, 3, 2, 2], 51);
    let g = leaf(&mut s, "gate", &[2, 3], 52);
    out.push(case("channel scaling", &mut s, false, |t| {
        let (xv, gv) = (t.param(x), t.param(g));
        let y = t.scale_var(xv, gv)?;
        probe_loss(t, y, 53)
    }));

    let mut s = ParamStore::new();
    let a = leaf(&mut s, "a", &[2, 2, 2, 2], 54);
    let b = leaf(&mut s, "b", &[2, 2, 2, 2], 55);
    out.push(case("add", &mut s, false, |t| {
        let (av, bv) = (t.param(a), t.param(b));
        let y = t.add_var(av, bv)?;
        probe_loss(t, y, 57)
    }));

    let mut s = ParamStore::new();
    let a = leaf(&mut s, "a", &[2, 2, 2, 2], 54);
    let c = leaf(&mut s, "c", &[2, 3, 2, 2], 56);
    out.push(case("channel concat", &mut s, false, |t| {
        let (av, cv) = (t.param(a), t.param(c));
        let y = t.concat_var(&[av, cv])?;
        probe_loss(t, y, 58)
    }));

    let mut s = ParamStore::new();
    let p = s.add("probs", random(&[3, 4], 0.05, 1.0, 59), ParamKind::Trainable).unwrap();
    out.push(case("cross entropy", &mut s, false, |t| {
        let pv = t.param(p);
        t.cross_entropy(pv, &[0, 3, 1])
    }));

    let mut s = ParamStore::new();
    let cfg = MbConvConfig { in_channels: 4, out_channels: 4, expansion: 6, kernel: 3, stride: 1, se_ratio: Some(0.25) };
    let block = MbConv::new(&mut init(&mut s, 60), "mb", cfg).unwrap();
    let x = leaf(&mut s, "x", &[2, 4, 4, 4], 61);
    out.push(case("MBConv block (SE, skip)", &mut s, true, |t| {
        let xv = t.param(x);
        let y = block.forward(t, &xv)?;
        probe_loss(t, y, 62)
    }));

    let mut s = ParamStore::new();
    let cfg = MbConvConfig { in_channels: 3, out_channels: 5, expansion: 6, kernel: 3, stride: 2, se_ratio: None };
    let block = InvertedResidual::new(&mut init(&mut s, 63), "ir", cfg).unwrap();
    let x = leaf(&mut s, "x", &[2, 3, 5, 5], 64);
    out.push(case("inverted residual block", &mut s, true, |t| {
        let xv = t.param(x);
        let y = block.forward(t, &xv)?;
        probe_loss(t, y, 65)
    }));

    let mut s = ParamStore::new();
    let cfg = RefinementConfig { growth_rate: 2, bottleneck_factor: 4, num_units: 1 };
    let unit = RefinementUnit::new(&mut init(&mut s, 66), "ref", 6, &cfg).unwrap();
    let x = leaf(&mut s, "x", &[2, 6, 3, 3], 67);
    out.push(case("refinement unit", &mut s, true, |t| {
        let xv = t.param(x);
        let y = unit.forward(t, &xv)?;
        probe_loss(t, y, 68)
    }));

    // Classification head: pool, dropout, fully connected, softmax, cross-entropy.
    let mut s = ParamStore::new();
    let x = leaf(&mut s, "x", &[3, 6, 2, 2], 69);
    let (w, b) = init(&mut s, 70).linear("head", 4, 6).unwrap();
    out.push(case("classification head", &mut s, true, |t| {
        let (xv, wv, bv) = (t.param(x), t.param(w), t.param(b));
        let pooled = t.gap_var(xv)?;
        let dropped = t.dropout_var(pooled, 0.4)?;
        let logits = t.linear_var(dropped, wv, Some(bv))?;
        let probs = t.softmax_var(logits)?;
        t.cross_entropy(probs, &[2, 0, 3])
    }));
    out
}

/// Cross-entropy of softmax against the analytic identity `(p - onehot) / n`
/// and against finite differences. Returns both maximum relative errors.
pub fn softmax_cross_entropy_identity() -> (f64, f64) {
    let (n, c) = (4, 6);
    let targets = [1, 5, 0, 3];
    let mut s = ParamStore::new();
    let logits = leaf(&mut s, "logits", &[n, c], 71);
    let f = |t: &mut Tape<'_>| {
        let z = t.param(logits);
        let p = t.softmax_var(z)?;
        t.cross_entropy(p, &targets)
    };
    let z = s.get(logits).data().to_vec();
    let mut identity_err: f64 = 0.0;
    {
        let mut tape = Tape::new(&s, ypose::autodiff::TapeOptions { mode: PrecisionMode::Double, ..Default::default() });
        let loss = f(&mut tape).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(logits).unwrap();
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for k in 0..c {
                let p = (row[k] - m).exp() / denom;
                let expected = (p - if k == targets[i] { 1.0 } else { 0.0 }) / n as f64;
                identity_err = identity_err.max(relative_error(g[i * c + k], expected));
            }
        }
    }
    let report = grad_check(&mut s, GradCheckOptions::default(), f).unwrap();
    (identity_err, report.max_rel_error)
}

/// Per-class precision, recall and F1 counted straight from the definitions.
pub struct OracleMetrics {
    pub top1: f64,
    pub top5: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Brute force: sort each row with an explicit comparator, then count.
pub fn metrics_oracle(rows: &[Vec<f64>], targets: &[usize], classes: usize) -> OracleMetrics {
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (row, &t) in rows.iter().zip(targets) {
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let pos = order.iter().position(|&k| k == t).unwrap();
        top1 += (pos == 0) as usize;
        top5 += (pos < 5) as usize;
        confusion[t][order[0]] += 1;
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for k in 0..classes {
        let tp = rows.iter().zip(targets).filter(|(row, &t)| t == k && argmax_oracle(row) == k).count() as f64;
        let fp = rows.iter().zip(targets).filter(|(row, &t)| t != k && argmax_oracle(row) == k).count() as f64;
        let fn_ = rows.iter().zip(targets).filter(|(row, &t)| t == k && argmax_oracle(row) != k).count() as f64;
        let pk = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rk = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let fk = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        p += pk;
        r += rk;
        f += fk;
    }
    let n = rows.len() as f64;
    let c = classes as f64;
    OracleMetrics { top1: top1 as f64 / n, top5: top5 as f64 / n, precision: p / c, recall: r / c, f1: f / c, confusion }
}

fn argmax_oracle(row: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Random probability rows (with some exact ties) and targets.
pub fn random_predictions(n: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            // Quantized scores make ties common enough to exercise tie-breaking.
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0..6) as f64 + 0.5).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        })
        .collect();
    let targets = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (rows, targets)
}

/// Bilinear resampling written from the textbook formula: each output pixel
/// center maps to `(o + 0.5) * in / out - 0.5` in source coordinates, clamped to
/// the image, and blends its four neighbours.
pub fn bilinear_oracle(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize, channel: usize, x: usize, y: usize) -> f64 {
    let map = |o: usize, inp: usize, out: usize| ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
    let sx = map(x, w, out_w);
    let sy = map(y, h, out_h);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let at = |xx: usize, yy: usize| src[channel * w * h + yy * w + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Two fine classes, eight images each, no synthetic flags.
pub fn overfit_corpus(dir: &Path) -> ToyCorpus {
    generate(dir, &[0, 1], &ToyCorpusOptions { images_per_class: 8, synthetic_every: 0, seed: 7, ..Default::default() }).unwrap()
}

/// Loads every record of a toy corpus at the toy input size.
pub fn load_all(corpus: &ToyCorpus, input_size: usize) -> Dataset {
    let manifest = load_manifest(&corpus.manifest, &corpus.hierarchy).unwrap();
    let records: Vec<_> = manifest.records.iter().collect();
    Dataset::load(&records, &Pipeline::new(input_size, true))
}
