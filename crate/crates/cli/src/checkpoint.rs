//! Binary checkpoint: `TRNN`, u32 version, length-prefixed JSON header, then
//! a table of named f32 tensors. All integers little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topicrnn::corpus::Vocabulary;
use topicrnn::engine::Tensor;
use topicrnn::model::{ModelConfig, TopicRnn};

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"TRNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vocabulary,
    vocab_hash: String,
}

/// Hex SHA-256 over the token list and stop flags, one `token\tflag` line
/// per id.
pub fn vocab_hash(vocab: &Vocabulary) -> String {
    let mut h = Sha256::new();
    for (tok, stop) in vocab.tokens().iter().zip(vocab.stop_flags()) {
        h.update(tok.as_bytes());
        h.update(if *stop { b"\t1\n" } else { b"\t0\n" });
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CliError> {
    let v = u32::try_from(v).map_err(|_| CliError::Format(format!("{v} does not fit in a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &TopicRnn) -> Result<Vec<u8>, CliError> {
    let header = Header {
        model: model.config,
        vocab: model.vocab.clone(),
        vocab_hash: vocab_hash(&model.vocab),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 4 * model.params.num_scalars() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    let ids: Vec<_> = model.params.ids().collect();
    put_u32(&mut out, ids.len())?;
    for id in ids {
        let name = model.params.name(id);
        let t = model.params.value(id);
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CliError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CliError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<TopicRnn, CliError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CliError::Format("not a checkpoint: bad magic bytes".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "checkpoint format version {version} is not supported (expected {VERSION})"
        )));
    }
    let len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let actual = vocab_hash(&header.vocab);
    if actual != header.vocab_hash {
        return Err(CliError::VocabMismatch(format!(
            "embedded vocabulary hashes to {actual}, header records {}",
            header.vocab_hash
        )));
    }
    let mut model = TopicRnn::zeros(header.model, header.vocab)?;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(CliError::Format(format!(
            "checkpoint has {count} tensors, model expects {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| CliError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let size = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CliError::Format(format!("tensor {name} is too large")))?;
        let bytes = r.take(size.checked_mul(4).ok_or_else(|| CliError::Format(format!("tensor {name} is too large")))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        model.params.set(&name, Tensor::new(shape, data)?)?;
    }
    if r.pos != buf.len() {
        return Err(CliError::Format(format!("{} trailing bytes after tensor table", buf.len() - r.pos)));
    }
    if !model.params.all_finite() {
        return Err(CliError::NonFinite("checkpoint contains non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save(model: &TopicRnn, path: &Path) -> Result<(), CliError> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

pub fn load(path: &Path) -> Result<TopicRnn, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    from_bytes(&bytes)
}
