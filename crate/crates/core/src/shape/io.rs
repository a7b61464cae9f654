use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::ShapeModel;
use crate::error::{Error, Result};

const MAGIC: &str = "SGMSSM 1";

/// Text header (`dim`, landmark count, mode count) followed by little-endian f64 mean,
/// modes in column-major order, and variances.
pub fn encode_model(model: &ShapeModel) -> Vec<u8> {
    let header = format!(
        "{MAGIC}\ndim {}\nlandmarks {}\nmodes {}\nend\n",
        model.dim(),
        model.landmark_count(),
        model.mode_count()
    );
    let mut out = header.into_bytes();
    let values = model.mean().iter().chain(model.modes().as_slice()).chain(model.variances());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ShapeModel> {
    let mut fields = [0usize; 3];
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String> {
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("shape model header is truncated".into()))?;
        let line = std::str::from_utf8(&bytes[*pos..*pos + end])
            .map_err(|_| Error::Format("shape model header is not UTF-8".into()))?
            .to_string();
        *pos += end + 1;
        Ok(line)
    };
    if next_line(&mut pos)? != MAGIC {
        return Err(Error::Format("not a shape model file".into()));
    }
    for (slot, key) in fields.iter_mut().zip(["dim", "landmarks", "modes"]) {
        let line = next_line(&mut pos)?;
        *slot = line
            .strip_prefix(key)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("expected '{key}' record, found '{line}'")))?;
    }
    if next_line(&mut pos)? != "end" {
        return Err(Error::Format("shape model header is not terminated".into()));
    }
    let [dim, count, k] = fields;
    let size = dim * count;
    let expected = (size + size * k + k) * 8;
    if bytes.len() - pos != expected {
        return Err(Error::Format(format!("shape model payload is {} bytes, expected {expected}", bytes.len() - pos)));
    }
    let values: Vec<f64> = bytes[pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mean = values[..size].to_vec();
    let modes = DMatrix::from_column_slice(size, k, &values[size..size + size * k]);
    let variances = values[size + size * k..].to_vec();
    ShapeModel::new(dim, mean, modes, variances).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model(model: &ShapeModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ShapeModel> {
    decode_model(&fs::read(path)?)
}
