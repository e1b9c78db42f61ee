// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic         4 bytes   "TLMC"
//! version       u32       currently 1
//! config        u64 x 6   n_layers d_model d_mlp n_heads vocab_size max_seq_len
//!               u64       rng_seed
//! meta          u64       training steps
//!               f64       final training loss
//! vocab         u32       entry count, then per entry: u32 byte length + UTF-8
//! arrays        u32       array count, then per array:
//!                 u32 name length + UTF-8 name
//!                 u8  dtype tag (1 = f64)
//!                 u32 rank, then rank x u64 dims
//!                 prod(dims) x f64, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{ModelCheckpoint, ModelConfig, ModelParams, TrainingMeta};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TLMC";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn save_checkpoint(m: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    decode(&fs::read(path)?)
}

pub(crate) fn encode(m: &ModelCheckpoint) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let c = &m.config;
    for v in [c.n_layers, c.d_model, c.d_mlp, c.n_heads, c.vocab_size, c.max_seq_len] {
        b.extend_from_slice(&(v as u64).to_le_bytes());
    }
    b.extend_from_slice(&c.rng_seed.to_le_bytes());
    b.extend_from_slice(&m.meta.steps.to_le_bytes());
    b.extend_from_slice(&m.meta.final_loss.to_le_bytes());
    put_u32(&mut b, m.tokenizer.len() as u32);
    for w in m.tokenizer.vocab() {
        put_str(&mut b, w);
    }
    let arrays = m.params.arrays();
    put_u32(&mut b, arrays.len() as u32);
    for (name, a) in arrays {
        put_str(&mut b, &name);
        b.push(DTYPE_F64);
        put_u32(&mut b, a.ndim() as u32);
        for &d in a.shape() {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in a.iter() {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.err_at(0, "bad magic, expected \"TLMC\""));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let config = ModelConfig {
        n_layers: dims[0],
        d_model: dims[1],
        d_mlp: dims[2],
        n_heads: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        rng_seed: r.u64()?,
    };
    let config_end = r.pos;
    config.validate().map_err(|e| r.err_at(config_end, &e.to_string()))?;
    let meta = TrainingMeta { steps: r.u64()?, final_loss: r.f64()? };

    let n_vocab = r.u32()? as usize;
    let mut vocab = Vec::with_capacity(n_vocab.min(1 << 20));
    for _ in 0..n_vocab {
        vocab.push(r.string()?);
    }
    let vocab_end = r.pos;
    let tokenizer = Tokenizer::from_vocab(vocab).map_err(|e| r.err_at(vocab_end, &e.to_string()))?;
    if tokenizer.len() != config.vocab_size {
        return Err(r.err_at(vocab_end, "vocabulary length differs from config.vocab_size"));
    }

    let n_arrays = r.u32()? as usize;
    let mut named = Vec::with_capacity(n_arrays.min(4096));
    for _ in 0..n_arrays {
        let name = r.string()?;
        let tag_at = r.pos;
        if r.u8()? != DTYPE_F64 {
            return Err(r.err_at(tag_at, &format!("array {name}: unsupported dtype tag")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let count = count.ok_or_else(|| r.err_at(r.pos, &format!("array {name}: shape overflows")))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| r.err_at(r.pos, "array too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, shape, data));
    }
    let arrays_end = r.pos;
    if arrays_end != bytes.len() {
        return Err(r.err_at(arrays_end, "trailing bytes after last array"));
    }
    let params = ModelParams::from_named(&config, named).map_err(|e| r.err_at(arrays_end, &e.to_string()))?;
    Ok(ModelCheckpoint { config, params, tokenizer, meta })
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len() as u32);
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, message: &str) -> Error {
        Error::Format { offset: offset as u64, message: message.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err_at(self.pos, &format!("unexpected end of file, needed {n} more bytes"))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64()?).map_err(|_| self.err_at(at, "dimension does not fit in usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err_at(at, "invalid UTF-8 string"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelCheckpoint {
        let tok = Tokenizer::from_words(["a", "b", "c"]);
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 4,
            d_mlp: 8,
            n_heads: 2,
            vocab_size: tok.len(),
            max_seq_len: 5,
            rng_seed: 1,
        };
        let mut m = ModelCheckpoint::init(cfg, tok).unwrap();
        m.meta = TrainingMeta { steps: 12, final_loss: 0.25 };
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(back.params_bit_identical(&m));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&model());
        for cut in [0, 3, 7, 30, bytes.len() / 2, bytes.len() - 1] {
            match decode(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn bumped_version_names_both() {
        let mut bytes = encode(&model());
        bytes[4] += 1;
        match decode(&bytes) {
            Err(e @ Error::Version { found: 2, expected: 1 }) => {
                let msg = e.to_string();
                assert!(msg.contains('2') && msg.contains('1'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = encode(&model());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
        bytes.pop();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
    }
}
