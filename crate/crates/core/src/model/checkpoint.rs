//! Binary checkpoint format.
//!
//! Layout, all integers little-endian u32: magic `YPSE`, version, tensor count,
//! then per tensor the name length, name bytes, rank, dims and f32 values.
//! The first tensor, `__spec__`, carries the model spec as UTF-8 text with one
//! byte per element so a checkpoint is self-describing.

use crate::config::KeyValues;
use crate::error::{CheckpointError, Result};
use crate::tensor::Tensor;

use super::{Model, ModelSpec};

pub const MAGIC: [u8; 4] = *b"YPSE";
pub const FORMAT_VERSION: u32 = 1;
pub(crate) const SPEC_TENSOR: &str = "__spec__";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        NamedTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::new(self.shape.clone(), self.values.iter().map(|&v| v as f64).collect())?)
    }

    pub fn from_text(name: impl Into<String>, text: &str) -> Self {
        let values: Vec<f32> = text.bytes().map(f32::from).collect();
        NamedTensor { name: name.into(), shape: vec![values.len()], values }
    }

    pub fn as_text(&self) -> Option<String> {
        let bytes = self
            .values
            .iter()
            .map(|&v| (v.fract() == 0.0 && (0.0..=255.0).contains(&v)).then_some(v as u8))
            .collect::<Option<Vec<u8>>>()?;
        String::from_utf8(bytes).ok()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| 12 + t.name.len() + 4 * t.shape.len() + 4 * t.values.len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize);
    put_u32(&mut out, tensors.len());
    for t in tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { offset: self.pos, what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnknownVersion(version));
    }
    let count = r.u32("tensor count")?;
    // Each tensor needs at least 12 header bytes; cap the allocation accordingly.
    let mut tensors = Vec::with_capacity(count.min(bytes.len() / 12));
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| CheckpointError::BadName)?.to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")?);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let raw = match n.and_then(|n| n.checked_mul(4)) {
            Some(bytes) => r.take(bytes, "values")?,
            None => return Err(CheckpointError::Truncated { offset: r.pos, what: "values" }),
        };
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(NamedTensor { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(tensors)
}

fn spec_text(model: &Model) -> String {
    let mut kv = model.spec().to_key_values();
    kv.set("seed", model.metadata().seed);
    kv.to_text()
}

/// Model tensors in store order, spec echo first.
pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let mut tensors = vec![NamedTensor::from_text(SPEC_TENSOR, &spec_text(model))];
    tensors.extend(model.params().entries().iter().map(|e| NamedTensor::from_tensor(e.name.clone(), &e.tensor)));
    write_tensors(&tensors)
}

/// Spec and seed recorded in a checkpoint's echo tensor.
pub(crate) fn parse_spec_echo(tensors: &[NamedTensor]) -> Result<(ModelSpec, u64)> {
    let echo = tensors.first().filter(|t| t.name == SPEC_TENSOR).ok_or(CheckpointError::MissingSpec)?;
    let text = echo.as_text().ok_or_else(|| CheckpointError::BadSpec("not UTF-8 text".into()))?;
    let kv = KeyValues::parse(&text).map_err(|e| CheckpointError::BadSpec(e.to_string()))?;
    let spec = ModelSpec::from_key_values(&kv, &ModelSpec::ypose()).map_err(|e| CheckpointError::BadSpec(e.to_string()))?;
    let seed = kv.get("seed").map_err(|e| CheckpointError::BadSpec(e.to_string()))?.unwrap_or(0);
    Ok((spec, seed))
}

/// Rebuilds the model described by the checkpoint's spec echo and fills in its tensors.
pub fn load_checkpoint(bytes: &[u8]) -> Result<Model> {
    let tensors = read_tensors(bytes)?;
    let (spec, seed) = parse_spec_echo(&tensors)?;
    let mut model = Model::build(&spec, seed)?;
    assign(&mut model, &tensors[1..])?;
    Ok(model)
}

/// Loads tensors into an existing model, rejecting at the first tensor whose
/// name or shape differs from what the model expects. On success the model
/// also takes over the checkpoint's recorded seed.
pub fn load_checkpoint_for(model: &mut Model, bytes: &[u8]) -> Result<()> {
    let tensors = read_tensors(bytes)?;
    let (_, seed) = parse_spec_echo(&tensors)?;
    assign(model, &tensors[1..])?;
    model.metadata.seed = seed;
    Ok(())
}

fn assign(model: &mut Model, tensors: &[NamedTensor]) -> Result<()> {
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for (index, (&id, t)) in ids.iter().zip(tensors).enumerate() {
        let expected = store.name(id);
        if expected != t.name {
            return Err(CheckpointError::NameMismatch { index, expected: expected.to_string(), found: t.name.clone() }.into());
        }
        if store.get(id).shape() != t.shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                name: t.name.clone(),
                expected: store.get(id).shape().to_vec(),
                found: t.shape.clone(),
            }
            .into());
        }
    }
    if ids.len() != tensors.len() {
        return Err(CheckpointError::CountMismatch { expected: ids.len(), found: tensors.len() }.into());
    }
    for (&id, t) in ids.iter().zip(tensors) {
        let dst = store.get_mut(id).data_mut();
        dst.iter_mut().zip(&t.values).for_each(|(d, &v)| *d = v as f64);
    }
    Ok(())
}
