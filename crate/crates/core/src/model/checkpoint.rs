//! Checkpoint file: one JSON header line, then every tensor in header
//! order as little-endian f64.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{ModelDims, ModelParams, ParamId};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "e2e-lpcnet-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dims: ModelDims,
    tensors: Vec<TensorEntry>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    frozen: Vec<String>,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    let header = Header {
        format: MAGIC.into(),
        version: CHECKPOINT_VERSION,
        dims: *params.dims(),
        tensors: ParamId::ALL
            .iter()
            .map(|&id| TensorEntry {
                name: id.name().into(),
                shape: params.get(id).shape().to_vec(),
            })
            .collect(),
        feature_mean: params.feature_mean.clone(),
        feature_scale: params.feature_scale.clone(),
        frozen: ParamId::ALL
            .iter()
            .filter(|&&id| params.is_frozen(id))
            .map(|id| id.name().to_string())
            .collect(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for id in ParamId::ALL {
        for v in params.get(id).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<ModelParams> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if header.format != MAGIC || header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    let mut params = ModelParams::zeros(header.dims)?;
    params.set_normalization(header.feature_mean, header.feature_scale)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut off = 0;
    for entry in &header.tensors {
        let id = ParamId::from_name(&entry.name)
            .ok_or_else(|| Error::Format(format!("unknown tensor {}", entry.name)))?;
        let n: usize = entry.shape.iter().product();
        let end = off + 8 * n;
        if end > bytes.len() {
            return Err(Error::Format(format!("checkpoint truncated in {}", entry.name)));
        }
        let data = bytes[off..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.set(id, Tensor::new(entry.shape.clone(), data)?)?;
        off = end;
    }
    if header.tensors.len() != ParamId::ALL.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, expected {}",
            header.tensors.len(),
            ParamId::ALL.len()
        )));
    }
    if off != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - off)));
    }
    for name in &header.frozen {
        let id = ParamId::from_name(name)
            .ok_or_else(|| Error::Format(format!("unknown frozen tensor {name}")))?;
        params.set_frozen(id, true);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut p = ModelParams::init(ModelDims::micro(), 1).unwrap();
        p.feature_mean[3] = -2.5;
        p.set_frozen(ParamId::Fc1W, true);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let q = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_damaged_files() {
        let p = ModelParams::init(ModelDims::micro(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 8]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
        assert!(read_checkpoint(&b"not json\n"[..]).is_err());
    }
}
