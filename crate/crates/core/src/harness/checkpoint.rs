//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic "PFUSECKP" | version u32
//! config  u64 length + UTF-8 text
//! vocab   u64 length + UTF-8 text
//! step u64 | best validation hits@1 f64
//! tensor count u64, then per tensor:
//!   name u32 length + UTF-8 | dtype tag u8 | trainable u8 | ndim u32
//!   extents u64 x ndim | raw values | first 8 bytes of SHA-256 over the tensor record
//! trailer: u64 length of everything above | SHA-256 of everything above
//! ```

use std::path::Path;

use ndcore::{DType, ParamStore, Scalar, Tensor};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::matchers::{Family, Model};

pub const MAGIC: &[u8; 8] = b"PFUSECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub trainable: bool,
    pub shape: Vec<usize>,
    /// Raw little-endian element bytes.
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config_text: String,
    pub vocab_text: String,
    pub step: u64,
    pub best_valid_hits1: f64,
    pub tensors: Vec<NamedTensor>,
}

fn dtype_of<T: Scalar>() -> DType {
    if std::mem::size_of::<T>() == 4 {
        DType::F32
    } else {
        DType::F64
    }
}

impl ModelCheckpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, config: &TrainConfig, vocab: &Vocab, step: u64, best_valid_hits1: f64) -> Self {
        let tensors = model
            .store
            .iter()
            .map(|(_, p)| {
                let mut data = Vec::with_capacity(p.value.len() * std::mem::size_of::<T>());
                for &v in p.value.data() {
                    v.write_le(&mut data);
                }
                NamedTensor {
                    name: p.name.clone(),
                    dtype: dtype_of::<T>(),
                    trainable: p.trainable,
                    shape: p.value.shape().to_vec(),
                    data,
                }
            })
            .collect();
        Self {
            config_text: config.to_text(),
            vocab_text: vocab.to_text(),
            step,
            best_valid_hits1,
            tensors,
        }
    }

    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_text(&self.config_text)
    }

    /// Errors unless the checkpoint was trained as `family` with `strategy`.
    pub fn check_matches(&self, family: Family, strategy: FusionStrategy) -> Result<()> {
        let model = self.config()?.model;
        if model.family != family || model.strategy != strategy {
            return Err(Error::Mismatch(format!(
                "checkpoint holds {}-{}, requested {family}-{strategy}",
                model.family, model.strategy
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_text(&self.vocab_text)
    }

    /// Rebuilds the model. The element type must match the stored dtype.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let config = self.config()?;
        let want = dtype_of::<T>();
        let mut store = ParamStore::new();
        for t in &self.tensors {
            if t.dtype != want {
                return Err(Error::Mismatch(format!(
                    "tensor `{}` stored as {}, loading as {}",
                    t.name,
                    t.dtype.name(),
                    want.name()
                )));
            }
            let width = t.dtype.byte_width();
            let values: Vec<T> = t.data.chunks_exact(width).map(T::read_le).collect();
            store.add(&t.name, Tensor::new(t.shape.clone(), values)?, t.trainable)?;
        }
        Model::from_store(config.model, store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for text in [&self.config_text, &self.vocab_text] {
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.best_valid_hits1.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            let start = out.len();
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.tag());
            out.push(u8::from(t.trainable));
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.data);
            let sum = Sha256::digest(&out[start..]);
            out.extend_from_slice(&sum[..8]);
        }
        let len = out.len() as u64;
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        if bytes.len() < 12 + 40 {
            return Err(bad("truncated checkpoint"));
        }
        let body_len = bytes.len() - 40;
        let declared = u64::from_le_bytes(bytes[body_len..body_len + 8].try_into().unwrap());
        if declared != body_len as u64 {
            return Err(Error::Checkpoint(format!(
                "truncated or padded checkpoint: trailer records {declared} bytes, found {body_len}"
            )));
        }
        if Sha256::digest(&bytes[..body_len])[..] != bytes[body_len + 8..] {
            return Err(bad("checkpoint checksum mismatch"));
        }
        let mut r = Reader {
            bytes: &bytes[..body_len],
            pos: 12,
        };
        let config_text = r.text_u64()?;
        let vocab_text = r.text_u64()?;
        let step = r.u64()?;
        let best_valid_hits1 = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let start = r.pos;
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {tag} for `{name}`")))?;
            let trainable = r.take(1)?[0] != 0;
            let ndim = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| bad("extent overflows"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.byte_width()))
                .ok_or_else(|| bad("tensor size overflows"))?;
            let data = r.take(n)?.to_vec();
            let sum = Sha256::digest(&r.bytes[start..r.pos]);
            if r.take(8)? != &sum[..8] {
                return Err(Error::Checkpoint(format!("checksum mismatch in tensor `{name}`")));
            }
            tensors.push(NamedTensor {
                name,
                dtype,
                trainable,
                shape,
                data,
            });
        }
        if r.pos != r.bytes.len() {
            return Err(bad("trailing bytes after tensor table"));
        }
        Ok(Self {
            config_text,
            vocab_text,
            step,
            best_valid_hits1,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text_u64(&mut self) -> Result<String> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows".into()))?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("text section is not UTF-8".into()))
    }
}

pub fn save_checkpoint(checkpoint: &ModelCheckpoint, path: &Path) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(path)
}
