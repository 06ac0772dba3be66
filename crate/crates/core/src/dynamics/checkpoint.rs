//! Binary checkpoint.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `GKLSTM01` |
//! | 4×u32 | `K`, `D`, `layers`, `hidden` |
//! | f64…  | per layer: `w_ih` (`4H×in`, row-major, gate blocks `i,f,g,o`), `w_hh` (`4H×H`), `bias` (`4H`) |
//! | f64…  | `head.weight` (`D×H`), `head.bias` (`D`) |
//! | f64…  | normalizer: `input_shift` (`2D`), `input_scale` (`2D`), `output_scale` (`D`) |
//!
//! Layer 0 has `in = 2D`, deeper layers `in = H`. Nothing follows the last value.

use std::fs;
use std::path::Path;

use super::model::{LstmModel, ModelConfig, Normalizer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GKLSTM01";

pub fn encode(model: &LstmModel) -> Vec<u8> {
    let cfg = model.config;
    let d = cfg.state_dim();
    let n = model.parameter_count() + 5 * d;
    let mut out = Vec::with_capacity(8 + 16 + 8 * n);
    out.extend_from_slice(MAGIC);
    for v in [cfg.landmarks, d, cfg.layers, cfg.hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut push = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    model.for_each_param(|_, p| push(p));
    let nz = &model.normalizer;
    for arr in [&nz.input_shift, &nz.input_scale, &nz.output_scale] {
        push(arr.as_slice().expect("contiguous"));
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<LstmModel> {
    let bad = |m: String| Error::InvalidArgument(format!("checkpoint: {m}"));
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(bad("missing GKLSTM01 magic".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (k, d, layers, hidden) = (u(0), u(1), u(2), u(3));
    let config = ModelConfig { landmarks: k, layers, hidden };
    if d != config.state_dim() {
        return Err(bad(format!("D = {d} but K = {k}")));
    }
    let mut model = LstmModel::new(config, 0)?;
    let n_params = model.parameter_count();
    let expected = 24 + 8 * (n_params + 5 * d);
    if bytes.len() != expected {
        return Err(bad(format!("{} bytes, expected {expected}", bytes.len())));
    }
    let floats: Vec<f64> =
        bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    model.set_flat_params(&floats[..n_params])?;
    let mut rest = &floats[n_params..];
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        ndarray::Array1::from(head.to_vec())
    };
    let normalizer = Normalizer { input_shift: take(2 * d), input_scale: take(2 * d), output_scale: take(d) };
    model.with_normalizer(normalizer)
}

pub fn save(model: &LstmModel, path: &Path) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LstmModel> {
    decode(&fs::read(path)?).map_err(|e| match e {
        Error::InvalidArgument(message) => Error::Format { path: path.to_path_buf(), message },
        other => other,
    })
}
