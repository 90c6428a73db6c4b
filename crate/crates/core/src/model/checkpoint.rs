//! Binary checkpoints: `MCAN-CKPT`, u32 version, length-prefixed model
//! config text, then named little-endian f64 arrays (parameters first, batch
//! norm running statistics after).

use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

const MAGIC: &[u8; 9] = b"MCAN-CKPT";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn array(&mut self) -> std::result::Result<(String, Vec<usize>, Vec<f64>), String> {
        let name = self.string()?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(8).ok_or("array too large")?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok((name, shape, data))
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let cfg = self.config.to_kv().to_text();
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());
        let bns: Vec<_> = self.batch_norms().collect();
        put_u32(&mut out, (self.params.len() + 2 * bns.len()) as u32);
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            put_array(&mut out, name, t.shape(), t.data());
        }
        for (name, bn) in bns {
            put_array(&mut out, &format!("{name}.running_mean"), &[bn.channels()], &bn.running_mean);
            put_array(&mut out, &format!("{name}.running_var"), &[bn.channels()], &bn.running_var);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err("not a checkpoint".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let cfg_text = r.string()?;
        let kv = KvMap::parse(&cfg_text).map_err(|e| e.to_string())?;
        let config = ModelConfig::from_kv(&kv).map_err(|e| e.to_string())?;
        let mut model = Model::new(config).map_err(|e| e.to_string())?;
        let count = r.u32()? as usize;
        let expected = model.params.len() + 2 * model.batch_norms().count();
        if count != expected {
            return Err(format!("{count} arrays, architecture has {expected}"));
        }
        let mut seen = vec![false; model.params.len()];
        for _ in 0..count {
            let (name, shape, data) = r.array()?;
            if let Some(id) = model.params.find(&name) {
                let t = model.params.get_mut(id);
                if t.shape() != shape.as_slice() {
                    return Err(format!("{name}: shape {shape:?}, expected {:?}", t.shape()));
                }
                let mut fresh = Tensor::new(shape, data).map_err(|e| e.to_string())?;
                fresh.set_requires_grad(true);
                *t = fresh;
                seen[id.0] = true;
                continue;
            }
            let (layer, field) = name.rsplit_once('.').ok_or_else(|| format!("unknown array {name}"))?;
            let bn = model.batch_norm_mut(layer).ok_or_else(|| format!("unknown array {name}"))?;
            if shape != [bn.channels()] {
                return Err(format!("{name}: shape {shape:?}, expected [{}]", bn.channels()));
            }
            match field {
                "running_mean" => bn.running_mean = data,
                "running_var" => bn.running_var = data,
                _ => return Err(format!("unknown array {name}")),
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(format!("missing parameter {}", model.params.names()[i]));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
