//! Binary checkpoint container.
//!
//! Layout (little-endian): `"GCDN"`, format version `u32`, tensor count
//! `u32`, then per tensor: name length `u32`, UTF-8 name, rank `u32`, extents
//! `u64` each, `f32` values; finally a `u32`-length-prefixed UTF-8 block of
//! `key=value` lines holding the model configuration and training counters.

use std::io::Write;
use std::path::Path;

use super::config::ModelConfig;
use super::model::{build_network, Model};
use super::train::TrainState;
use crate::autodiff::AdamState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GCDN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub train: Option<TrainState>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let m = &self.model;
        let mut tensors: Vec<(String, &Tensor<f32>)> = m
            .params()
            .iter()
            .chain(m.running().iter())
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        if let Some(s) = &self.train {
            for (i, st) in s.adam.iter().enumerate() {
                tensors.push((format!("adam.m.{}", m.params().name(i)), &st.m));
            }
            for (i, st) in s.adam.iter().enumerate() {
                tensors.push((format!("adam.v.{}", m.params().name(i)), &st.v));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in &tensors {
            put_tensor(&mut out, name, t);
        }
        let mut kv = m.config().to_kv();
        if let Some(s) = &self.train {
            kv.push_str(&format!("iteration={}\n", s.iteration));
            kv.push_str(&format!("adam_step={}\n", s.adam.first().map_or(0, |a| a.step)));
        }
        put_u32(&mut out, kv.len() as u32);
        out.extend_from_slice(kv.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err("missing GCDN magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.err("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| r.err("extent too large"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| r.err("tensor size overflows"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err("tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        let kv_len = r.u32()? as usize;
        let kv = std::str::from_utf8(r.take(kv_len)?).map_err(|_| r.err("config block is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes after config block"));
        }
        let mut cfg_text = String::new();
        let (mut iteration, mut adam_step) = (None, None);
        for line in kv.lines() {
            match line.split_once('=') {
                Some(("iteration", v)) => iteration = Some(v.parse::<usize>().map_err(|_| r.err("bad iteration"))?),
                Some(("adam_step", v)) => adam_step = Some(v.parse::<u64>().map_err(|_| r.err("bad adam_step"))?),
                _ => {
                    cfg_text.push_str(line);
                    cfg_text.push('\n');
                }
            }
        }
        let config = ModelConfig::from_kv(&cfg_text)?;
        let mut model = build_network::<f32>(&config, 0)?;
        let mut seen = std::collections::HashSet::new();
        let mut adam_m = vec![None; model.params().len()];
        let mut adam_v = vec![None; model.params().len()];
        for (name, t) in tensors {
            if !seen.insert(name.clone()) {
                return Err(r.err(&format!("duplicate tensor {name}")));
            }
            let (slot, target_shape): (&mut Option<Tensor<f32>>, Vec<usize>);
            if let Some(p) = name.strip_prefix("adam.m.").and_then(|p| model.params().position(p)) {
                target_shape = model.params().tensor(p).shape().to_vec();
                slot = &mut adam_m[p];
            } else if let Some(p) = name.strip_prefix("adam.v.").and_then(|p| model.params().position(p)) {
                target_shape = model.params().tensor(p).shape().to_vec();
                slot = &mut adam_v[p];
            } else {
                let dest = if model.params().position(&name).is_some() {
                    model.params_mut().get_mut(&name)?
                } else if model.running().position(&name).is_some() {
                    model.running_mut().get_mut(&name)?
                } else {
                    return Err(r.err(&format!("unexpected tensor {name}")));
                };
                if dest.shape() != t.shape() {
                    return Err(Error::shape(format!(
                        "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                        t.shape(),
                        dest.shape()
                    )));
                }
                *dest = t;
                continue;
            }
            if t.shape() != target_shape.as_slice() {
                return Err(Error::shape(format!("optimiser tensor {name} has shape {:?}", t.shape())));
            }
            *slot = Some(t);
        }
        let expected = model.params().len() + model.running().len();
        let loaded = seen.iter().filter(|n| !n.starts_with("adam.")).count();
        if loaded != expected {
            return Err(r.err(&format!("{loaded} model tensors present, {expected} expected")));
        }
        let train = match iteration {
            None => None,
            Some(iteration) => {
                let step = adam_step.unwrap_or(0);
                let adam = adam_m
                    .into_iter()
                    .zip(adam_v)
                    .map(|(m, v)| match (m, v) {
                        (Some(m), Some(v)) => Ok(AdamState { m, v, step }),
                        _ => Err(r.err("incomplete optimiser state")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(TrainState { adam, iteration })
            }
        };
        Ok(Checkpoint { model, train })
    }

    /// Write atomically: a temporary file in the same directory, then rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
        let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
        let bytes = self.encode();
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Format {
            kind: "checkpoint",
            msg: format!("{msg} (at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
