//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"DRVCKPT\0"
//! version u32 (= 1)
//! kind    u32 length + UTF-8 bytes ("dense-net" | "prior-model")
//! count   u32
//! count x { name: u32 length + UTF-8, ndim: u32, dims: ndim x u64,
//!           payload: prod(dims) x f64 }
//! b"FROZ" count: u32, count x u8 (1 = frozen)
//! ```

use std::fs;
use std::path::Path;

use super::dense::DenseNet;
use super::prior::{PriorModel, PromptContext};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

const MAGIC: &[u8; 8] = b"DRVCKPT\0";
const VERSION: u32 = 1;
const FROZEN_TAG: &[u8; 4] = b"FROZ";

pub const KIND_NET: &str = "dense-net";
pub const KIND_PRIOR: &str = "prior-model";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub array: DenseArray,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub tensors: Vec<Tensor>,
}

fn net_tensors(net: &DenseNet, prefix: &str, frozen: bool) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (i, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        out.push(Tensor {
            name: format!("{prefix}layer{i}.weight"),
            array: w.clone(),
            frozen,
        });
        out.push(Tensor {
            name: format!("{prefix}layer{i}.bias"),
            array: b.clone(),
            frozen,
        });
    }
    out
}

impl Checkpoint {
    pub fn from_net(net: &DenseNet) -> Self {
        Self {
            kind: KIND_NET.into(),
            tensors: net_tensors(net, "", false),
        }
    }

    pub fn from_prior(prior: &PriorModel, context: &PromptContext) -> Self {
        let frozen = prior.is_frozen();
        let mut tensors = net_tensors(prior.encoder(), "encoder.", frozen);
        tensors.push(Tensor {
            name: "class_embeddings".into(),
            array: prior.class_embeddings().clone(),
            frozen,
        });
        tensors.push(Tensor {
            name: "temperature".into(),
            array: DenseArray::scalar(prior.temperature()),
            frozen,
        });
        tensors.push(Tensor {
            name: "prompt_context".into(),
            array: context.values().clone(),
            frozen: false,
        });
        Self {
            kind: KIND_PRIOR.into(),
            tensors,
        }
    }

    fn take(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    fn net_with_prefix(&self, prefix: &str) -> Result<DenseNet> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0.. {
            let wname = format!("{prefix}layer{i}.weight");
            if !self.tensors.iter().any(|t| t.name == wname) {
                break;
            }
            weights.push(self.take(&wname)?.array.clone());
            biases.push(self.take(&format!("{prefix}layer{i}.bias"))?.array.clone());
        }
        DenseNet::from_parts(weights, biases)
    }

    pub fn to_net(&self) -> Result<DenseNet> {
        if self.kind != KIND_NET {
            return Err(Error::Checkpoint(format!("expected {KIND_NET}, found {}", self.kind)));
        }
        self.net_with_prefix("")
    }

    pub fn to_prior(&self) -> Result<(PriorModel, PromptContext)> {
        if self.kind != KIND_PRIOR {
            return Err(Error::Checkpoint(format!("expected {KIND_PRIOR}, found {}", self.kind)));
        }
        let encoder = self.net_with_prefix("encoder.")?;
        let emb = self.take("class_embeddings")?;
        let temperature = self.take("temperature")?.array.item()?;
        let ctx = self.take("prompt_context")?.array.clone();
        let prior = PriorModel::from_parts(encoder, emb.array.clone(), temperature, emb.frozen)?;
        Ok((prior, PromptContext::new(ctx.into_data())))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.array.shape().len() as u32).to_le_bytes());
            for &d in t.array.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.array.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(FROZEN_TAG);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.extend(self.tensors.iter().map(|t| u8::from(t.frozen)));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim != 2 {
                return Err(Error::Checkpoint(format!("`{name}` has rank {ndim}, expected 2")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n <= (r.bytes.len() - r.pos) / 8)
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` payload truncated")))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor {
                name,
                array: DenseArray::new(rows, cols, data)?,
                frozen: false,
            });
        }
        if r.take(4)? != FROZEN_TAG {
            return Err(Error::Checkpoint("missing frozen-flags section".into()));
        }
        if r.u32()? as usize != count {
            return Err(Error::Checkpoint("frozen-flag count mismatch".into()));
        }
        for t in tensors.iter_mut() {
            t.frozen = match r.take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Checkpoint(format!("bad frozen flag {other}"))),
            };
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { kind, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
