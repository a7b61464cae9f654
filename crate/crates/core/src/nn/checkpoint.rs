//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `SGMQNET\0`, one version byte, a UTF-8 header of
//! newline-terminated records closed by `end`, then every tensor's values as
//! little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::params::{Moments, Params};
use super::{NnError, Tensor};

pub const MAGIC: &[u8; 8] = b"SGMQNET\0";
pub const VERSION: u8 = 1;

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x")
}

pub fn encode(params: &Params) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(&format!("step {}\n", params.step));
    let optimizer = if params.moments.is_some() { "adam" } else { "none" };
    header.push_str(&format!("optimizer {optimizer}\n"));
    let mut order: Vec<(&str, &String, &Tensor)> = Vec::new();
    for (k, v) in &params.weights {
        order.push(("weight", k, v));
    }
    if let Some(m) = &params.moments {
        for (k, v) in &m.first {
            order.push(("moment1", k, v));
        }
        for (k, v) in &m.second {
            order.push(("moment2", k, v));
        }
    }
    let mut payload = 0usize;
    for (kind, name, t) in &order {
        header.push_str(&format!("{kind} {name} f32 {}\n", shape_str(t.shape())));
        payload += t.len() * 4;
    }
    header.push_str(&format!("payload_bytes {payload}\nend\n"));

    let mut out = Vec::with_capacity(9 + header.len() + payload);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(header.as_bytes());
    for (_, _, t) in &order {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn integrity(msg: impl Into<String>) -> NnError {
    NnError::Integrity(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Params, NnError> {
    if bytes.len() < 9 || &bytes[..8] != MAGIC {
        return Err(integrity("bad magic"));
    }
    if bytes[8] != VERSION {
        return Err(integrity(format!("unsupported version {}", bytes[8])));
    }
    let rest = &bytes[9..];
    let end_marker = b"\nend\n";
    let hdr_end = rest
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| integrity("header terminator missing"))?
        + end_marker.len();
    let header = std::str::from_utf8(&rest[..hdr_end]).map_err(|_| integrity("header is not UTF-8"))?;
    let mut payload = &rest[hdr_end..];

    let mut step = None;
    let mut optimizer = None;
    let mut declared = None;
    let mut entries: Vec<(String, String, Vec<usize>)> = Vec::new();
    for line in header.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["step", n] => step = Some(n.parse::<u64>().map_err(|_| integrity("bad step"))?),
            ["optimizer", o] => optimizer = Some(o.to_string()),
            [kind @ ("weight" | "moment1" | "moment2"), name, "f32", shape] => {
                let shape = shape
                    .split('x')
                    .map(|e| e.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| integrity(format!("bad shape for {name}")))?;
                if shape.is_empty() || shape.contains(&0) {
                    return Err(integrity(format!("bad shape for {name}")));
                }
                entries.push((kind.to_string(), name.to_string(), shape));
            }
            ["payload_bytes", n] => {
                declared = Some(n.parse::<usize>().map_err(|_| integrity("bad payload size"))?)
            }
            ["end"] => {}
            _ => return Err(integrity(format!("unrecognised header line {line:?}"))),
        }
    }
    let step = step.ok_or_else(|| integrity("missing step"))?;
    let optimizer = optimizer.ok_or_else(|| integrity("missing optimizer"))?;
    let expected: usize = entries.iter().map(|(_, _, s)| s.iter().product::<usize>() * 4).sum();
    if declared != Some(expected) || payload.len() != expected {
        return Err(integrity(format!(
            "payload holds {} bytes, header describes {expected}",
            payload.len()
        )));
    }

    let mut weights = BTreeMap::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for (kind, name, shape) in entries {
        let n: usize = shape.iter().product();
        let (chunk, tail) = payload.split_at(n * 4);
        payload = tail;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(shape, data)?;
        let slot = match kind.as_str() {
            "weight" => &mut weights,
            "moment1" => &mut first,
            _ => &mut second,
        };
        if slot.insert(name.clone(), tensor).is_some() {
            return Err(integrity(format!("duplicate tensor {name}")));
        }
    }
    let moments = match optimizer.as_str() {
        "none" if first.is_empty() && second.is_empty() => None,
        "adam" => {
            let keys_match = |m: &BTreeMap<String, Tensor>| {
                m.len() == weights.len() && m.keys().zip(weights.keys()).all(|(a, b)| a == b)
            };
            if !keys_match(&first) || !keys_match(&second) {
                return Err(integrity("optimizer moments do not match the weights"));
            }
            Some(Moments { first, second })
        }
        _ => return Err(integrity(format!("inconsistent optimizer record {optimizer}"))),
    };
    Ok(Params { weights, step, moments })
}

pub fn save(params: &Params, path: &Path) -> Result<(), NnError> {
    fs::write(path, encode(params)).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Params, NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
