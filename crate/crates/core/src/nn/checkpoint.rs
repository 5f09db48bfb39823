//! Binary model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "OTOCKPT1"
//! seed         u64
//! spec_len     u32, then spec_len bytes of UTF-8 network description
//! meta_len     u32, then meta_len bytes of UTF-8 JSON (free-form run metadata)
//! n_tensors    u32
//! tensor*      n_tensors parameter tensors
//! has_adam     u8 (0 or 1)
//! [adam]       lr f64, beta1 f64, beta2 f64, eps f64, step u64,
//!              n_tensors first-moment tensors, n_tensors second-moment tensors
//!
//! tensor:      name_len u16, name bytes, ndim u8, ndim x u64 extents,
//!              product(extents) x f64 values (row-major)
//! ```

use std::fs;
use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use super::model::Model;
use super::tensor::Tensor;
use super::NnError;
use crate::netspec::parse_netspec;

const MAGIC: &[u8; 8] = b"OTOCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    pub meta: serde_json::Value,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            NnError::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String, NnError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NnError::Checkpoint(format!("invalid UTF-8 before byte {}", self.pos)))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), NnError> {
        let name_len = self.u16()? as usize;
        let name = self.string(name_len)?;
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(NnError::Checkpoint(format!("tensor `{name}` overruns the file")));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok((name, Tensor::new(shape, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.model.seed.to_le_bytes());
        let spec = self.model.spec().serialize();
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.as_bytes());
        let meta = self.meta.to_string();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        let names = self.model.param_names();
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for (name, t) in names.iter().zip(&self.model.params) {
            put_tensor(&mut out, name, t);
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                for v in [a.config.learning_rate, a.config.beta1, a.config.beta2, a.config.epsilon] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&a.step.to_le_bytes());
                for (name, t) in names.iter().zip(&a.m) {
                    put_tensor(&mut out, &format!("{name}.m"), t);
                }
                for (name, t) in names.iter().zip(&a.v) {
                    put_tensor(&mut out, &format!("{name}.v"), t);
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let seed = r.u64()?;
        let spec_len = r.u32()? as usize;
        let spec_text = r.string(spec_len)?;
        let spec = parse_netspec(&spec_text)
            .map_err(|d| NnError::Checkpoint(format!("stored network description: {d}")))?;
        let meta_len = r.u32()? as usize;
        let meta_text = r.string(meta_len)?;
        let meta = serde_json::from_str(&meta_text)
            .map_err(|e| NnError::Checkpoint(format!("metadata: {e}")))?;
        let n = r.u32()? as usize;
        let params = (0..n).map(|_| r.tensor().map(|(_, t)| t)).collect::<Result<Vec<_>, _>>()?;
        let model = Model::from_parts(spec, params, seed)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    learning_rate: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    epsilon: r.f64()?,
                };
                let step = r.u64()?;
                let m = (0..n).map(|_| r.tensor().map(|(_, t)| t)).collect::<Result<Vec<_>, _>>()?;
                let v = (0..n).map(|_| r.tensor().map(|(_, t)| t)).collect::<Result<Vec<_>, _>>()?;
                for (a, b) in m.iter().chain(&v).zip(model.params.iter().chain(&model.params)) {
                    if a.shape() != b.shape() {
                        return Err(NnError::Checkpoint("optimizer moments do not mirror parameters".into()));
                    }
                }
                Some(AdamState { config, step, m, v })
            }
            other => return Err(NnError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.pos != buf.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { model, adam, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_bytes()).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let buf = fs::read(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
