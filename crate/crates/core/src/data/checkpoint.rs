//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PDT1" | version u32 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | dtype u8 (1 = f64) | rank u8
//!             | dims u32 * rank | values f64 * product(dims)
//! vocabulary length u32 | UTF-8 "token<TAB>id" lines
//! config length u32     | UTF-8 JSON
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{load_params, Module};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PDT1";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<StoredTensor>,
    pub vocab: String,
    pub config: String,
}

impl Checkpoint {
    pub fn new(vocab: impl Into<String>, config: impl Into<String>) -> Self {
        Checkpoint {
            tensors: Vec::new(),
            vocab: vocab.into(),
            config: config.into(),
        }
    }

    /// Adds every parameter of `module` under `prefix`. Names must be new.
    pub fn add_module(&mut self, prefix: &str, module: &dyn Module) -> Result<()> {
        for (name, t) in module.named_params(prefix) {
            self.add(name, &t)?;
        }
        Ok(())
    }

    pub fn add(&mut self, name: String, t: &Tensor) -> Result<()> {
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("tensor `{name}` stored twice")));
        }
        self.tensors.push(StoredTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.get(name)
            .map(|s| Tensor::new(s.data.clone(), &s.shape).expect("stored shapes are valid"))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.tensors.iter().any(|t| t.name.starts_with(&dotted))
    }

    /// Copies stored values into the parameters of `module` under `prefix`.
    pub fn load_module(&self, prefix: &str, module: &dyn Module) -> Result<()> {
        load_params(&module.named_params(prefix), &|n| self.tensor(n))
    }

    /// Tensors of `other` are appended; names already present are an error.
    pub fn merge(&mut self, other: &Checkpoint) -> Result<()> {
        for t in &other.tensors {
            if self.get(&t.name).is_some() {
                return Err(Error::invalid(format!(
                    "tensor `{}` present in two checkpoints",
                    t.name
                )));
            }
            self.tensors.push(t.clone());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::invalid(format!("name `{}` too long", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(DTYPE_F64);
            let rank = u8::try_from(t.shape.len()).map_err(|_| Error::invalid("rank above 255"))?;
            out.push(rank);
            for &d in &t.shape {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape("checkpoint", &t.shape, &[t.data.len()]));
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for block in [&self.vocab, &self.config] {
            out.extend_from_slice(&u32_len(block.len(), "block")?.to_le_bytes());
            out.extend_from_slice(block.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic bytes".into(),
            });
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: at,
                msg: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = r.utf8(name_len)?;
            let at = r.pos;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("unknown dtype code {dtype}"),
                });
            }
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let at = r.pos;
            if rank == 0 || shape.contains(&0) {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("tensor `{name}` has an empty shape {shape:?}"),
                });
            }
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format {
                offset: at,
                msg: "tensor size overflows".into(),
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(StoredTensor { name, shape, data });
        }
        let vocab_len = r.u32()? as usize;
        let vocab = r.utf8(vocab_len)?;
        let config_len = r.u32()? as usize;
        let config = r.utf8(config_len)?;
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            tensors,
            vocab,
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} does not fit in 32 bits")))
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
            .ok_or_else(|| Error::Format {
                offset: self.pos,
                msg: format!(
                    "truncated: needed {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: at,
            msg: "invalid UTF-8".into(),
        })
    }
}
