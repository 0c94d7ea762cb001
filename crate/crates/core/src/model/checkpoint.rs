use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderConfig, HeadConfig, Pooling};
use super::vocab::Vocabulary;
use super::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLZPETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    heads: HeadConfig,
}

/// Weights, vocabulary and head configuration of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub encoder: Encoder<f32>,
    pub vocab: Vocabulary,
}

impl ModelCheckpoint {
    /// Fresh randomly initialized model; `config.vocab_size` is taken from `vocab`.
    pub fn new(mut config: EncoderConfig, heads: HeadConfig, vocab: Vocabulary) -> Result<Self, ModelError> {
        config.vocab_size = vocab.len();
        Ok(Self {
            encoder: Encoder::new(config, heads)?,
            vocab,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn heads(&self) -> &HeadConfig {
        self.encoder.heads()
    }

    pub fn weights(&self, name: &str) -> Option<&[f32]> {
        self.encoder.param(name)
    }

    /// Copy of this model with a freshly initialized `k`-way classifier head (MLM head kept).
    pub fn with_classifier(&self, k: usize, seed: u64) -> Result<Self, ModelError> {
        let heads = HeadConfig {
            mlm: self.heads().mlm,
            classifier: Some(k),
            pooling: self.heads().pooling,
        };
        Ok(Self {
            encoder: self.encoder.with_heads(heads, seed)?,
            vocab: self.vocab.clone(),
        })
    }

    pub fn with_pooling(&self, pooling: Pooling) -> Result<Self, ModelError> {
        let heads = HeadConfig {
            pooling,
            ..self.heads().clone()
        };
        Encoder::from_params(self.config().clone(), heads, self.encoder.params.clone()).map(|encoder| Self {
            encoder,
            vocab: self.vocab.clone(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(&Header {
            config: self.config().clone(),
            heads: self.heads().clone(),
        })
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        write_bytes(&mut w, &header)?;
        write_u32(&mut w, self.vocab.len())?;
        for t in self.vocab.tokens() {
            write_bytes(&mut w, t.as_bytes())?;
        }
        let layout = self.encoder.layout();
        write_u32(&mut w, layout.len())?;
        for e in layout {
            write_bytes(&mut w, e.name.as_bytes())?;
            write_u32(&mut w, e.shape.len())?;
            for &d in &e.shape {
                write_u32(&mut w, d)?;
            }
            let mut buf = Vec::with_capacity(e.len() * 4);
            for v in &self.encoder.params[e.range()] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header =
            serde_json::from_slice(&read_bytes(&mut r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let n_vocab = read_u32(&mut r)? as usize;
        let mut tokens = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            let b = read_bytes(&mut r)?;
            tokens.push(String::from_utf8(b).map_err(|e| ModelError::Checkpoint(e.to_string()))?);
        }
        let vocab = Vocabulary::new(tokens)?;
        if vocab.len() != header.config.vocab_size {
            return Err(ModelError::Checkpoint("vocabulary size disagrees with config".into()));
        }
        let layout = super::encoder::param_layout(&header.config, &header.heads);
        let n_arrays = read_u32(&mut r)? as usize;
        if n_arrays != layout.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} arrays, found {n_arrays}",
                layout.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.last().map_or(0, |e| e.offset + e.len()));
        for e in &layout {
            let name = String::from_utf8(read_bytes(&mut r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if name != e.name || shape != e.shape {
                return Err(ModelError::Checkpoint(format!(
                    "array {name} {shape:?} does not match expected {} {:?}",
                    e.name, e.shape
                )));
            }
            let mut buf = vec![0u8; e.len() * 4];
            r.read_exact(&mut buf)?;
            params.extend(
                buf.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
        }
        Ok(Self {
            encoder: Encoder::from_params(header.config, header.heads, params)?,
            vocab,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Checkpoint("value exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<(), ModelError> {
    write_u32(w, b.len())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, ModelError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 26 {
        return Err(ModelError::Checkpoint("implausible field length".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}
