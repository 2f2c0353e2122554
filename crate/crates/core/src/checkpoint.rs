//! Model checkpoint file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes  "CMXMODEL"
//! version  u32
//! config   u64 length + UTF-8 `key = value` text
//! chars    u64 count + one u32 code point each (row order, UNK excluded)
//! tensors  u64 count, then per tensor:
//!          u64 name length + name, u64 rows, u64 cols, rows*cols f64
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::config::TrainConfig;
use crate::diffmath::Parameters;
use crate::embeddings::{read_f64, read_u32, read_u64, CharVocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};

const MAGIC: &[u8; 8] = b"CMXMODEL";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model, cfg: &TrainConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = cfg.to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.chars.chars().len() as u64).to_le_bytes());
    for &c in model.chars.chars() {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    let tensors = model.params.tensors();
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(model: &Model, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, cfg)).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model; the config's layer sizes decide every expected
/// tensor shape, and any mismatch names the tensor.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(Model, TrainConfig)> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a model checkpoint", origin.display())));
    }
    let version = read_u32(&mut r, origin)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("version {version}, this build reads {VERSION}")));
    }
    let text = read_string(&mut r, origin)?;
    let cfg = TrainConfig::parse(&text)?;
    let arch = cfg.architecture();
    arch.validate()?;

    let n_chars = read_u64(&mut r, origin)? as usize;
    let mut chars = Vec::with_capacity(n_chars);
    for _ in 0..n_chars {
        let code = read_u32(&mut r, origin)?;
        chars.push(char::from_u32(code).ok_or_else(|| Error::Checkpoint(format!("invalid char {code}")))?);
    }
    let vocab = CharVocab::new(chars);
    if vocab.chars().len() != n_chars {
        return Err(Error::Checkpoint("duplicate characters in vocabulary".into()));
    }

    let mut params = ModelParams::zeros(&arch, vocab.len());
    let count = read_u64(&mut r, origin)? as usize;
    let mut expected = params.tensors_mut();
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("{count} tensors, expected {}", expected.len())));
    }
    for (want, t) in expected.iter_mut() {
        let name = read_string(&mut r, origin)?;
        if name != *want {
            return Err(Error::Checkpoint(format!("tensor {name:?} where {want:?} was expected")));
        }
        let rows = read_u64(&mut r, origin)? as usize;
        let cols = read_u64(&mut r, origin)? as usize;
        if (rows, cols) != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored {rows}x{cols}, config implies {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        for v in t.data_mut() {
            *v = read_f64(&mut r, origin)?;
        }
    }
    drop(expected);
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((Model { arch, chars: vocab, params }, cfg))
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, TrainConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn read_string(r: &mut impl Read, origin: &Path) -> Result<String> {
    let len = read_u64(r, origin)? as usize;
    if len > 1 << 24 {
        return Err(Error::Checkpoint(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| Error::io(origin, e))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::embeddings::init_char_table;

    fn toy() -> (Model, TrainConfig) {
        let cfg = TrainConfig {
            char_dim: 3,
            char_hidden: 2,
            word_dim: 4,
            sent_hidden: 2,
            ..TrainConfig::default()
        };
        let s = Sentence::new("1", vec!["añb".into()], None);
        let chars = init_char_table([&s], 3, 0.05, 1);
        (Model::new(cfg.architecture(), chars, 5).unwrap(), cfg)
    }

    #[test]
    fn round_trip() {
        let (m, cfg) = toy();
        let bytes = encode(&m, &cfg);
        let (back, cfg2) = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(cfg2, cfg);
        assert_eq!(encode(&back, &cfg2), bytes);
    }

    #[test]
    fn rejects_version_and_shape_mismatch() {
        let (m, cfg) = toy();
        let mut bytes = encode(&m, &cfg);
        bytes[8] = 99;
        assert!(decode(&bytes, Path::new("mem")).unwrap_err().to_string().contains("version"));

        let bigger = TrainConfig { sent_hidden: 3, ..cfg.clone() };
        // tensors from the 2-wide model under a config claiming width 3
        let mut forged = encode(&Model::zeroed(cfg.architecture(), m.chars.clone()).unwrap(), &bigger);
        let err = decode(&forged, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("sent_fwd.w_f"), "{err}");

        forged.truncate(20);
        assert!(decode(&forged, Path::new("mem")).is_err());
        assert!(decode(b"nope", Path::new("mem")).is_err());
    }
}
