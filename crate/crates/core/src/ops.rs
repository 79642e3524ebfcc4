//! Primitive tensor kernels: forward passes and the matching backward kernels.
//!
//! Every function here is pure given its arguments. Reductions run in a fixed
//! order per output element, so results do not depend on the rayon pool size.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.9;
/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output is `ceil(in / stride)`. When the total padding is odd the extra
    /// row/column goes on the bottom/right.
    Same,
    /// No padding; output is `floor((in - k) / stride) + 1`.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            padding: Padding::Same,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn stride(stride: usize) -> Self {
        Conv2dOptions {
            stride,
            ..Default::default()
        }
    }

    pub fn depthwise(channels: usize, stride: usize) -> Self {
        Conv2dOptions {
            stride,
            padding: Padding::Same,
            groups: channels,
        }
    }
}

/// Output length and leading pad of one spatial axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, needed / 2))
        }
        Padding::Valid => {
            if kernel > input {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn new(input: &[usize], weight: &[usize], opts: Conv2dOptions) -> Result<Self, TensorError> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = input[..] else {
            return Err(TensorError::Rank { op: OP, expected: 4, shape: input.to_vec() });
        };
        let [cout, cin_g, kh, kw] = weight[..] else {
            return Err(TensorError::Rank { op: OP, expected: 4, shape: weight.to_vec() });
        };
        if opts.stride == 0 {
            return Err(TensorError::invalid(OP, "stride must be >= 1"));
        }
        let g = opts.groups;
        if g == 0 || cin % g != 0 {
            return Err(TensorError::invalid(
                OP,
                format!("input channels {cin} not divisible by groups {g}"),
            ));
        }
        if cout % g != 0 {
            return Err(TensorError::invalid(
                OP,
                format!("output channels {cout} not divisible by groups {g}"),
            ));
        }
        if cin_g != cin / g {
            return Err(TensorError::DimMismatch {
                op: OP,
                dim: "weight input channels (Cin/groups)",
                expected: cin / g,
                actual: cin_g,
            });
        }
        let too_small = |dim: &'static str, k: usize, len: usize| TensorError::DimMismatch {
            op: OP,
            dim,
            expected: k,
            actual: len,
        };
        let (oh, pad_top) =
            conv_out_len(h, kh, opts.stride, opts.padding).ok_or_else(|| too_small("input height", kh, h))?;
        let (ow, pad_left) =
            conv_out_len(w, kw, opts.stride, opts.padding).ok_or_else(|| too_small("input width", kw, w))?;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            cin_g,
            cout_g: cout / g,
            kh,
            kw,
            oh,
            ow,
            stride: opts.stride,
            pad_top,
            pad_left,
        })
    }

    /// Range of output indices `o` for which `o * stride + k - pad` lands inside `[0, len)`.
    #[inline]
    fn valid(out_len: usize, in_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let limit = in_len + pad;
        let hi = if limit > k { (limit - k).div_ceil(stride).min(out_len) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// 2-D cross-correlation over an NCHW input with grouped channels.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    opts: Conv2dOptions,
) -> Result<Tensor, TensorError> {
    let g = ConvGeom::new(input.shape(), weight.shape(), opts)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: g.cout,
                actual: b.len(),
            });
        }
    }
    let x = input.data();
    let wt = weight.data();
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(p, o)| {
        let (b, co) = (p / g.cout, p % g.cout);
        let group = co / g.cout_g;
        if let Some(bias) = bias {
            o.fill(bias.data()[co]);
        }
        for cil in 0..g.cin_g {
            let ci = group * g.cin_g + cil;
            let inp = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = ConvGeom::valid(g.oh, g.h, g.stride, ky, g.pad_top);
                for kx in 0..g.kw {
                    let wv = wt[((co * g.cin_g + cil) * g.kh + ky) * g.kw + kx];
                    let (ox0, ox1) = ConvGeom::valid(g.ow, g.w, g.stride, kx, g.pad_left);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad_top;
                        let row = &inp[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let off = kx as isize - g.pad_left as isize;
                            let src = &row[(ox0 as isize + off) as usize..(ox1 as isize + off) as usize];
                            for (dst, s) in orow[ox0..ox1].iter_mut().zip(src) {
                                *dst += wv * s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * row[ox * g.stride + kx - g.pad_left];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.oh, g.ow], out))
}

/// Gradients of `conv2d` with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f64],
    with_bias: bool,
    opts: Conv2dOptions,
) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), TensorError> {
    let g = ConvGeom::new(input.shape(), weight.shape(), opts)?;
    let x = input.data();
    let wt = weight.data();
    let plane = g.oh * g.ow;
    let in_plane = g.h * g.w;

    let mut gx = vec![0.0; x.len()];
    gx.par_chunks_mut(in_plane).enumerate().for_each(|(p, gi)| {
        let (b, ci) = (p / g.cin, p % g.cin);
        let group = ci / g.cin_g;
        let cil = ci % g.cin_g;
        for j in 0..g.cout_g {
            let co = group * g.cout_g + j;
            let go = &grad_out[(b * g.cout + co) * plane..][..plane];
            for ky in 0..g.kh {
                let (oy0, oy1) = ConvGeom::valid(g.oh, g.h, g.stride, ky, g.pad_top);
                for kx in 0..g.kw {
                    let wv = wt[((co * g.cin_g + cil) * g.kh + ky) * g.kw + kx];
                    let (ox0, ox1) = ConvGeom::valid(g.ow, g.w, g.stride, kx, g.pad_left);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad_top;
                        for ox in ox0..ox1 {
                            gi[iy * g.w + ox * g.stride + kx - g.pad_left] += wv * go[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    });

    let wlen = g.cin_g * g.kh * g.kw;
    let mut gw = vec![0.0; wt.len()];
    gw.par_chunks_mut(wlen).enumerate().for_each(|(co, gwc)| {
        let group = co / g.cout_g;
        for cil in 0..g.cin_g {
            let ci = group * g.cin_g + cil;
            for ky in 0..g.kh {
                let (oy0, oy1) = ConvGeom::valid(g.oh, g.h, g.stride, ky, g.pad_top);
                for kx in 0..g.kw {
                    let (ox0, ox1) = ConvGeom::valid(g.ow, g.w, g.stride, kx, g.pad_left);
                    let mut acc = 0.0;
                    for b in 0..g.n {
                        let go = &grad_out[(b * g.cout + co) * plane..][..plane];
                        let inp = &x[(b * g.cin + ci) * in_plane..][..in_plane];
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad_top;
                            for ox in ox0..ox1 {
                                acc += go[oy * g.ow + ox] * inp[iy * g.w + ox * g.stride + kx - g.pad_left];
                            }
                        }
                    }
                    gwc[(cil * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });

    let gb = with_bias.then(|| {
        (0..g.cout)
            .map(|co| {
                (0..g.n)
                    .map(|b| grad_out[(b * g.cout + co) * plane..][..plane].iter().sum::<f64>())
                    .sum()
            })
            .collect()
    });
    Ok((gx, gw, gb))
}

/// Channel count and the number of values per channel (`N * H * W`), for rank-2 or rank-4 input.
fn channel_layout(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize), TensorError> {
    match shape[..] {
        [n, c] => Ok((n, c, 1)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(TensorError::Rank { op, expected: 4, shape: shape.to_vec() }),
    }
}

fn check_channels(op: &'static str, dim: &'static str, c: usize, t: &[f64]) -> Result<(), TensorError> {
    if t.len() != c {
        return Err(TensorError::DimMismatch { op, dim, expected: c, actual: t.len() });
    }
    Ok(())
}

/// Result of a batch-norm forward pass, with what backward needs.
#[derive(Debug, Clone)]
pub struct BatchNormForward {
    pub output: Tensor,
    /// Normalized input before the affine transform.
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Batch statistics (training mode only).
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
}

/// Core batch-norm kernel. Training mode normalizes with the biased batch
/// variance; eval mode uses the supplied running statistics.
pub fn batch_norm_forward(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    training: bool,
) -> Result<BatchNormForward, TensorError> {
    const OP: &str = "batch_norm";
    if eps <= 0.0 || eps.is_nan() {
        return Err(TensorError::invalid(OP, format!("eps must be > 0, got {eps}")));
    }
    let (n, c, hw) = channel_layout(input.shape(), OP)?;
    check_channels(OP, "gamma length", c, gamma)?;
    check_channels(OP, "beta length", c, beta)?;
    check_channels(OP, "running_mean length", c, running_mean)?;
    check_channels(OP, "running_var length", c, running_var)?;
    let x = input.data();
    let count = (n * hw) as f64;
    let chan = |b: usize, ch: usize| &x[(b * c + ch) * hw..][..hw];

    let (mean, var) = if training {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let s: f64 = (0..n).map(|b| chan(b, ch).iter().sum::<f64>()).sum();
            let m = s / count;
            let v: f64 = (0..n)
                .map(|b| chan(b, ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum::<f64>()
                / count;
            mean[ch] = m;
            var[ch] = v;
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                normalized[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(BatchNormForward {
        output: Tensor::from_parts(input.shape().to_vec(), out),
        normalized,
        inv_std,
        batch_mean: training.then_some(mean),
        batch_var: training.then_some(var),
    })
}

/// Batch normalization with running-statistics update in training mode:
/// `running = momentum * running + (1 - momentum) * batch`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    eps: f64,
    momentum: f64,
    training: bool,
) -> Result<Tensor, TensorError> {
    let fwd = batch_norm_forward(
        input,
        gamma.data(),
        beta.data(),
        running_mean.data(),
        running_var.data(),
        eps,
        training,
    )?;
    if let (Some(m), Some(v)) = (&fwd.batch_mean, &fwd.batch_var) {
        update_running(running_mean.data_mut(), m, momentum);
        update_running(running_var.data_mut(), v, momentum);
    }
    Ok(fwd.output)
}

pub fn update_running(running: &mut [f64], batch: &[f64], momentum: f64) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(
    shape: &[usize],
    grad_out: &[f64],
    normalized: &[f64],
    gamma: &[f64],
    inv_std: &[f64],
    training: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, c, hw) = channel_layout(shape, "batch_norm").expect("shape validated in forward");
    let count = (n * hw) as f64;
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                gb[ch] += grad_out[i];
                gg[ch] += grad_out[i] * normalized[i];
            }
        }
    }
    let mut gx = vec![0.0; grad_out.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let scale = gamma[ch] * inv_std[ch];
            for i in base..base + hw {
                gx[i] = if training {
                    scale * (grad_out[i] - gb[ch] / count - normalized[i] * gg[ch] / count)
                } else {
                    scale * grad_out[i]
                };
            }
        }
    }
    (gx, gg, gb)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(input: &Tensor, f: impl Fn(f64) -> f64 + Sync) -> Tensor {
    let mut out = vec![0.0; input.len()];
    out.par_chunks_mut(1 << 14)
        .zip(input.data().par_chunks(1 << 14))
        .for_each(|(o, x)| o.iter_mut().zip(x).for_each(|(o, &x)| *o = f(x)));
    Tensor::from_parts(input.shape().to_vec(), out)
}

/// `x * sigmoid(beta * x)`.
pub fn swish(input: &Tensor, beta: f64) -> Tensor {
    map(input, |x| x * sigmoid_scalar(beta * x))
}

pub fn swish_backward(input: &[f64], grad_out: &[f64], beta: f64) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| {
            let s = sigmoid_scalar(beta * x);
            g * (s + beta * x * s * (1.0 - s))
        })
        .collect()
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    map(input, sigmoid_scalar)
}

pub fn sigmoid_backward(output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    output.iter().zip(grad_out).map(|(&s, &g)| g * s * (1.0 - s)).collect()
}

/// Row-wise softmax over the last axis of a 2-D tensor, stabilized by max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor, TensorError> {
    let (n, c) = logits.dims2("softmax")?;
    let mut out = vec![0.0; n * c];
    for (row, o) in logits.data().chunks(c).zip(out.chunks_mut(c)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &x) in o.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        o.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn softmax_backward(probs: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    let c = probs.shape()[1];
    let mut gx = vec![0.0; probs.len()];
    for ((p, g), o) in probs.data().chunks(c).zip(grad_out.chunks(c)).zip(gx.chunks_mut(c)) {
        let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
        for ((o, p), g) in o.iter_mut().zip(p).zip(g) {
            *o = p * (g - dot);
        }
    }
    gx
}

/// `z = x W^T + b` for `x: [N, M]`, `W: [C, M]`, `b: [C]`.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, TensorError> {
    const OP: &str = "fully_connected";
    let (n, m) = input.dims2(OP)?;
    let (c, wm) = weight.dims2(OP)?;
    if wm != m {
        return Err(TensorError::DimMismatch { op: OP, dim: "inner dimension", expected: m, actual: wm });
    }
    if let Some(b) = bias {
        if b.len() != c {
            return Err(TensorError::DimMismatch { op: OP, dim: "bias length", expected: c, actual: b.len() });
        }
    }
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; n * c];
    out.par_chunks_mut(c).enumerate().for_each(|(i, o)| {
        let xi = &x[i * m..(i + 1) * m];
        for (j, o) in o.iter_mut().enumerate() {
            let wj = &w[j * m..(j + 1) * m];
            let mut acc = bias.map_or(0.0, |b| b.data()[j]);
            for (a, b) in xi.iter().zip(wj) {
                acc += a * b;
            }
            *o = acc;
        }
    });
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn fully_connected_backward(input: &Tensor, weight: &Tensor, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, m) = (input.shape()[0], input.shape()[1]);
    let c = weight.shape()[0];
    let x = input.data();
    let w = weight.data();
    let mut gx = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..c {
            let g = grad_out[i * c + j];
            for k in 0..m {
                gx[i * m + k] += g * w[j * m + k];
            }
        }
    }
    let mut gw = vec![0.0; c * m];
    for j in 0..c {
        for i in 0..n {
            let g = grad_out[i * c + j];
            for k in 0..m {
                gw[j * m + k] += g * x[i * m + k];
            }
        }
    }
    let gb = (0..c).map(|j| (0..n).map(|i| grad_out[i * c + j]).sum()).collect();
    (gx, gw, gb)
}

/// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let hw = h * w;
    let out = input
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool_backward(shape: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let hw = shape[2] * shape[3];
    let mut gx = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out {
        gx.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    gx
}

/// Concatenates NCHW tensors along the channel axis, preserving input order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    const OP: &str = "concat_channels";
    let first = inputs.first().ok_or_else(|| TensorError::invalid(OP, "no inputs"))?;
    let (n, _, h, w) = first.dims4(OP)?;
    let mut total_c = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4(OP)?;
        for (dim, expected, actual) in [("batch", n, tn), ("height", h, th), ("width", w, tw)] {
            if expected != actual {
                return Err(TensorError::DimMismatch { op: OP, dim, expected, actual });
            }
        }
        total_c += tc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for b in 0..n {
        for t in inputs {
            let c = t.shape()[1];
            out.extend_from_slice(&t.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total_c, h, w], out))
}

/// Splits a concat gradient back into per-input gradients.
pub fn concat_channels_backward(channels: &[usize], shape: &[usize], grad_out: &[f64]) -> Vec<Vec<f64>> {
    let (n, total, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut grads: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * hw)).collect();
    for b in 0..n {
        let mut offset = 0;
        for (g, &c) in grads.iter_mut().zip(channels) {
            let start = (b * total + offset) * hw;
            g.extend_from_slice(&grad_out[start..start + c * hw]);
            offset += c;
        }
    }
    grads
}

/// Squeeze-and-excitation gating: `y[n,c,h,w] = x[n,c,h,w] * gate[n,c]`.
pub fn scale_channels(input: &Tensor, gate: &Tensor) -> Result<Tensor, TensorError> {
    const OP: &str = "scale_channels";
    let (n, c, h, w) = input.dims4(OP)?;
    let (gn, gc) = gate.dims2(OP)?;
    if (gn, gc) != (n, c) {
        return Err(TensorError::DimMismatch { op: OP, dim: "gate channels", expected: c, actual: gc });
    }
    let hw = h * w;
    let mut out = input.data().to_vec();
    out.chunks_mut(hw).zip(gate.data()).for_each(|(p, &s)| p.iter_mut().for_each(|v| *v *= s));
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

/// Returns `(grad_input, grad_gate)`.
pub fn scale_channels_backward(input: &Tensor, gate: &Tensor, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hw = input.shape()[2] * input.shape()[3];
    let mut gx = grad_out.to_vec();
    gx.chunks_mut(hw).zip(gate.data()).for_each(|(p, &s)| p.iter_mut().for_each(|v| *v *= s));
    let gg = grad_out
        .chunks(hw)
        .zip(input.data().chunks(hw))
        .map(|(g, x)| g.iter().zip(x).map(|(g, x)| g * x).sum())
        .collect();
    (gx, gg)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::invalid(
            "add",
            format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

pub fn check_dropout_rate(rate: f64) -> Result<(), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::invalid("dropout", format!("rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Seeded inverted dropout. Eval mode (and rate 0) is the identity.
pub fn dropout(input: &Tensor, rate: f64, training: bool, seed: u64) -> Result<Tensor, TensorError> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(input.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(input.len(), rate, &mut rng);
    let out = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}
