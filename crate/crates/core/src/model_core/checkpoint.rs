//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian), stable across releases:
//!
//! ```text
//! magic           4 bytes  "HLGF"
//! format version  u32      currently 1
//! header length   u64      followed by that many bytes of JSON holding
//!                          the encoder config, run mode, and read pass
//! vocab count     u64      then per token: u64 byte length + UTF-8 bytes
//! tensor count    u64      then per tensor, in declared parameter order:
//!                          u64 name length + name bytes,
//!                          u64 rows, u64 cols,
//!                          rows*cols f64 values, row-major
//! center flag     u8       1 if a training-set center follows
//! [center]        u64 len + len f64 values
//! checksum        32 bytes SHA-256 over everything above
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hlogformer::{ReadPass, RunMode};
use crate::tokenizer::Vocab;

use super::{EncoderConfig, EncoderStack, Tensor};

const MAGIC: &[u8; 4] = b"HLGF";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    mode: RunMode,
    read_pass: ReadPass,
}

/// A trained model with everything needed to run it: parameters, the
/// vocabulary it was trained with, its run mode, and (after training) the
/// training-set summary center.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stack: EncoderStack,
    pub vocab: Vocab,
    pub mode: RunMode,
    pub read_pass: ReadPass,
    pub center: Option<Array1<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        let header = Header {
            encoder: self.stack.config.clone(),
            mode: self.mode,
            read_pass: self.read_pass,
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");
        write_bytes(&mut out, &header_json);

        out.extend_from_slice(&(self.vocab.token_list().len() as u64).to_le_bytes());
        for token in self.vocab.token_list() {
            write_bytes(&mut out, token.as_bytes());
        }

        out.extend_from_slice(&(self.stack.params.len() as u64).to_le_bytes());
        for tensor in &self.stack.params {
            write_bytes(&mut out, tensor.name.as_bytes());
            out.extend_from_slice(&(tensor.value.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(tensor.value.ncols() as u64).to_le_bytes());
            for v in tensor.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }

        match &self.center {
            Some(center) => {
                out.push(1);
                out.extend_from_slice(&(center.len() as u64).to_le_bytes());
                for v in center.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }

        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing checkpoint to {}", path.display()), e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
        if bytes.len() < 4 + 4 + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let expected = Sha256::digest(body);
        if digest != expected.as_slice() {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let header_json = r.take_len_prefixed()?;
        let header: Header = serde_json::from_slice(header_json)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad header: {e}")))?;

        let vocab_count = r.take_u64()? as usize;
        let mut tokens = Vec::with_capacity(vocab_count);
        for _ in 0..vocab_count {
            let raw = r.take_len_prefixed()?;
            tokens.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| corrupt("vocab token is not UTF-8"))?,
            );
        }
        let vocab = Vocab::from_token_list(tokens)?;

        let tensor_count = r.take_u64()? as usize;
        let mut params = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let name = String::from_utf8(r.take_len_prefixed()?.to_vec())
                .map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let rows = r.take_u64()? as usize;
            let cols = r.take_u64()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let value = Array2::from_shape_vec((rows, cols), data)
                .map_err(|_| corrupt("tensor shape mismatch"))?;
            params.push(Tensor { name, value });
        }
        let stack = EncoderStack {
            config: header.encoder,
            params,
        };
        if stack.actual_param_count() != super::count_params(&stack.config) {
            return Err(corrupt("parameter count disagrees with config"));
        }

        let center = match r.take(1)?[0] {
            0 => None,
            1 => {
                let len = r.take_u64()? as usize;
                let mut data = Vec::with_capacity(len);
                for _ in 0..len {
                    data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
                }
                Some(Array1::from_vec(data))
            }
            _ => return Err(corrupt("bad center flag")),
        };
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            stack,
            vocab,
            mode: header.mode,
            read_pass: header.read_pass,
            center,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading checkpoint from {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("unexpected end of file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_len_prefixed(&mut self) -> Result<&'a [u8]> {
        let len = self.take_u64()? as usize;
        self.take(len)
    }
}
