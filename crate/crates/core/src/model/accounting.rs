//! Structural parameter and multiply-accumulate accounting.
//!
//! A shape-only executor walks the same forward code as training and inference,
//! so the tables can never drift from the real network.

use std::io::Write;
use std::path::Path;

use crate::autodiff::{BnParams, Exec};
use crate::error::{Error, Result, TensorError};
use crate::ops::{conv_out_len, Conv2dOptions};
use crate::params::{ParamId, ParamKind, ParamStore};

use super::Model;

/// One row of the per-layer table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    /// Trainable scalars: conv/FC weights, biases, BN gamma and beta.
    pub total: u64,
    /// Non-trainable running statistics, reported separately.
    pub buffers: u64,
    pub layers: Vec<LayerRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacReport {
    pub total: u64,
    pub input_size: usize,
    pub layers: Vec<LayerRow>,
}

impl MacReport {
    pub fn gmacs(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

struct Profiler<'p> {
    params: &'p ParamStore,
    rows: Vec<LayerRow>,
}

impl Profiler<'_> {
    fn trainable(&self, id: ParamId) -> u64 {
        let e = self.params.entry(id);
        if e.kind == ParamKind::Trainable {
            e.tensor.len() as u64
        } else {
            0
        }
    }

    fn record(&mut self, id: ParamId, extra: &[ParamId], macs: u64) {
        let name = self.params.name(id);
        let layer = name.rsplit_once('.').map_or(name, |(prefix, _)| prefix).to_string();
        let params = self.trainable(id) + extra.iter().map(|&p| self.trainable(p)).sum::<u64>();
        self.rows.push(LayerRow { name: layer, params, macs });
    }
}

fn rank4(op: &'static str, s: &[usize]) -> Result<[usize; 4], TensorError> {
    s.try_into().map_err(|_| TensorError::Rank { op, expected: 4, shape: s.to_vec() })
}

impl Exec for Profiler<'_> {
    type Value = Vec<usize>;

    fn shape_of<'a>(&'a self, v: &'a Vec<usize>) -> &'a [usize] {
        v
    }

    fn conv2d(&mut self, x: &Vec<usize>, weight: ParamId, bias: Option<ParamId>, opts: Conv2dOptions) -> Result<Vec<usize>, TensorError> {
        let [n, cin, h, w] = rank4("conv2d", x)?;
        let [cout, cin_g, kh, kw] = rank4("conv2d", self.params.get(weight).shape())?;
        if cin_g * opts.groups != cin {
            return Err(TensorError::DimMismatch { op: "conv2d", dim: "input channels", expected: cin_g * opts.groups, actual: cin });
        }
        let geometry = |len, k| {
            conv_out_len(len, k, opts.stride, opts.padding)
                .map(|(o, _)| o)
                .ok_or_else(|| TensorError::invalid("conv2d", format!("kernel {k} larger than input {len}")))
        };
        let (oh, ow) = (geometry(h, kh)?, geometry(w, kw)?);
        let macs = (cout * cin_g * kh * kw * oh * ow * n) as u64;
        self.record(weight, bias.as_slice(), macs);
        Ok(vec![n, cout, oh, ow])
    }

    fn batch_norm(&mut self, x: &Vec<usize>, bn: &BnParams) -> Result<Vec<usize>, TensorError> {
        self.record(bn.gamma, &[bn.beta], 0);
        Ok(x.clone())
    }

    fn swish(&mut self, x: &Vec<usize>) -> Result<Vec<usize>, TensorError> {
        Ok(x.clone())
    }

    fn sigmoid(&mut self, x: &Vec<usize>) -> Result<Vec<usize>, TensorError> {
        Ok(x.clone())
    }

    fn linear(&mut self, x: &Vec<usize>, weight: ParamId, bias: Option<ParamId>) -> Result<Vec<usize>, TensorError> {
        let [n, inp] = x[..] else {
            return Err(TensorError::Rank { op: "linear", expected: 2, shape: x.clone() });
        };
        let [out, w_in] = self.params.get(weight).shape()[..] else {
            return Err(TensorError::invalid("linear", "weight must be rank 2"));
        };
        if w_in != inp {
            return Err(TensorError::DimMismatch { op: "linear", dim: "features", expected: w_in, actual: inp });
        }
        self.record(weight, bias.as_slice(), (n * inp * out) as u64);
        Ok(vec![n, out])
    }

    fn global_avg_pool(&mut self, x: &Vec<usize>) -> Result<Vec<usize>, TensorError> {
        let [n, c, _, _] = rank4("global_avg_pool", x)?;
        Ok(vec![n, c])
    }

    fn scale_channels(&mut self, x: &Vec<usize>, _gate: &Vec<usize>) -> Result<Vec<usize>, TensorError> {
        Ok(x.clone())
    }

    fn add(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>, TensorError> {
        if a != b {
            return Err(TensorError::invalid("add", format!("shape mismatch {a:?} vs {b:?}")));
        }
        Ok(a.clone())
    }

    fn concat_channels(&mut self, xs: &[&Vec<usize>]) -> Result<Vec<usize>, TensorError> {
        let first = xs.first().ok_or_else(|| TensorError::invalid("concat_channels", "no inputs"))?;
        let mut out = (*first).clone();
        out[1] = xs.iter().map(|s| s[1]).sum();
        Ok(out)
    }

    fn dropout(&mut self, x: &Vec<usize>, _rate: f64) -> Result<Vec<usize>, TensorError> {
        Ok(x.clone())
    }

    fn softmax(&mut self, x: &Vec<usize>) -> Result<Vec<usize>, TensorError> {
        Ok(x.clone())
    }
}

/// Per-layer rows of one batch-1 forward at `input_size`, in execution order.
pub fn layer_table(model: &Model, input_size: usize) -> Result<Vec<LayerRow>> {
    let mut prof = Profiler { params: model.params(), rows: Vec::new() };
    model.forward(&mut prof, &vec![1, 3, input_size, input_size])?;
    Ok(prof.rows)
}

/// Structure-only parameter count; independent of parameter values.
pub fn count_params(model: &Model) -> Result<ParamReport> {
    let layers = layer_table(model, model.spec().input_size)?;
    let store = model.params();
    let buffers = store
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Buffer)
        .map(|e| e.tensor.len() as u64)
        .sum();
    let total = store.trainable_count() as u64;
    debug_assert_eq!(total, layers.iter().map(|r| r.params).sum::<u64>());
    Ok(ParamReport { total, buffers, layers })
}

/// MACs of one image at `input_size`; BN, activations and pooling count as zero.
pub fn count_macs(model: &Model, input_size: usize) -> Result<MacReport> {
    if input_size == 0 || input_size % 32 != 0 {
        return Err(Error::Config(format!("input size {input_size} is not a positive multiple of 32")));
    }
    let layers = layer_table(model, input_size)?;
    let total = layers.iter().map(|r| r.macs).sum();
    Ok(MacReport { total, input_size, layers })
}

/// Writes `layer_name,params,macs` rows with a header.
pub fn write_layer_csv<W: Write>(out: W, rows: &[LayerRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::Csv { path: Path::new("<layer table>").into(), source: e };
    w.write_record(["layer_name", "params", "macs"]).map_err(map)?;
    for r in rows {
        w.write_record([r.name.as_str(), &r.params.to_string(), &r.macs.to_string()]).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io("<layer table>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Initializer;
    use crate::model::ModelSpec;
    use crate::ops::Padding;

    #[test]
    fn fc_counts() {
        let mut store = ParamStore::new();
        let (w, b) = Initializer::new(&mut store, 0).linear("fc", 5, 10).unwrap();
        let mut prof = Profiler { params: &store, rows: Vec::new() };
        prof.linear(&vec![1, 10], w, Some(b)).unwrap();
        assert_eq!(prof.rows, vec![LayerRow { name: "fc".into(), params: 55, macs: 50 }]);
    }

    #[test]
    fn small_conv_macs() {
        let mut store = ParamStore::new();
        let w = Initializer::new(&mut store, 0).conv("c", 1, 1, 3, 3, 1).unwrap();
        let mut prof = Profiler { params: &store, rows: Vec::new() };
        let opts = Conv2dOptions { stride: 1, padding: Padding::Same, groups: 1 };
        assert_eq!(prof.conv2d(&vec![1, 1, 4, 4], w, None, opts).unwrap(), vec![1, 1, 4, 4]);
        assert_eq!(prof.rows[0].macs, 144);
        assert_eq!(prof.rows[0].params, 9);
    }

    #[test]
    fn profiler_shapes_match_real_forward() {
        let model = Model::build(&ModelSpec::toy(), 3).unwrap();
        let real = model.predict(&crate::Tensor::zeros(&[1, 3, 32, 32])).unwrap();
        let mut prof = Profiler { params: model.params(), rows: Vec::new() };
        let shapes = model.forward(&mut prof, &vec![1, 3, 32, 32]).unwrap();
        assert_eq!(shapes.features, real.features.shape());
        for (s, p) in shapes.probs.iter().zip(&real.probs) {
            assert_eq!(s.as_slice(), p.shape());
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        let rows = [LayerRow { name: "a".into(), params: 1, macs: 2 }];
        write_layer_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "layer_name,params,macs\na,1,2\n");
    }
}
