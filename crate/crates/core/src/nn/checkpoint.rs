//! Binary checkpoints: the 8-byte magic `CTABNET1`, one line of JSON
//! header terminated by `\n`, then every tensor as little-endian f64 in
//! header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTABNET1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    #[serde(default)]
    pub vocab: Vec<String>,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(
    model_kind: &str,
    config: serde_json::Value,
    vocab: Vec<String>,
    params: &ParameterSet,
) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        tensors.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += 8 * t.len() as u64;
    }
    let header = CheckpointHeader { model_kind: model_kind.to_string(), config, seed: params.seed, vocab, tensors };
    let mut out = Vec::with_capacity(offset as usize + 4096);
    out.extend_from_slice(MAGIC);
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ParameterSet)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let rest = &bytes[8..];
    let nl = rest
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Checkpoint("unterminated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let data = &rest[nl + 1..];
    let mut params = ParameterSet::new(header.seed);
    let mut expected = 0u64;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if entry.offset != expected {
            return Err(Error::Checkpoint(format!("tensor {} offset {} != {expected}", entry.name, entry.offset)));
        }
        let start = entry.offset as usize;
        let end = start + 8 * n;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} with shape {:?} runs past end of data",
                entry.name, entry.shape
            )));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), values)?;
        if !t.is_finite() {
            return Err(Error::Checkpoint(format!("tensor {} has non-finite values", entry.name)));
        }
        params.insert(&entry.name, t);
        expected = end as u64;
    }
    if expected as usize != data.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", data.len() - expected as usize)));
    }
    Ok((header, params))
}

pub fn save_checkpoint(
    path: &Path,
    model_kind: &str,
    config: serde_json::Value,
    vocab: Vec<String>,
    params: &ParameterSet,
) -> Result<()> {
    let bytes = encode_checkpoint(model_kind, config, vocab, params)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterSet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new(11);
        p.init("a", &[3, 2], Init::Xavier);
        p.init("b", &[4], Init::Ones);
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let bytes = encode_checkpoint("generator", serde_json::json!({"d_model": 4}), vec!["x".into()], &p).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (h, q) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(h.model_kind, "generator");
        assert_eq!(h.seed, 11);
        assert_eq!(h.tensors[1].offset, 48);
        assert_eq!(p, q);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = sample();
        let bytes = encode_checkpoint("retriever", serde_json::Value::Null, vec![], &p).unwrap();
        let nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        let mut header: CheckpointHeader = serde_json::from_slice(&bytes[8..nl]).unwrap();
        header.tensors[1].shape = vec![5];
        let mut bad = MAGIC.to_vec();
        serde_json::to_writer(&mut bad, &header).unwrap();
        bad.extend_from_slice(&bytes[nl..]);
        let err = decode_checkpoint(&bad).unwrap_err();
        assert!(err.to_string().contains("tensor b"), "{err}");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode_checkpoint(b"CTABNET0{}\n").is_err());
    }
}
