//! Grid files: ASCII PGM (P2, maxval 65535) per part plus a JSON sidecar.
//!
//! A multi-part export is a directory holding `part_<k>.pgm` for every part
//! and `meta.json` with `{K, H, W, scale}`. Each part is mapped linearly from
//! `[0, max cell]` onto `[0, 65535]`; `scale[k]` records that part's max so a
//! reader can restore the original magnitudes to within one quantization step.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAXVAL: u32 = 65535;
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct GridMeta {
    pub K: usize,
    pub H: usize,
    pub W: usize,
    pub scale: Vec<f64>,
}

/// Encodes one grid as P2 text, returning it with the scale used.
pub fn encode_pgm(grid: ArrayView2<'_, f64>) -> Result<(String, f64)> {
    let (h, w) = grid.dim();
    let mut max = 0.0_f64;
    for &v in grid.iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!("cannot export value {v} to PGM")));
        }
        max = max.max(v);
    }
    let mut out = format!("P2\n{w} {h}\n{MAXVAL}\n");
    for row in grid.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let q = if max > 0.0 { (v / max * f64::from(MAXVAL)).round() } else { 0.0 };
                (q as u32).to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Ok((out, max))
}

/// Parses P2 text into raw sample values (not rescaled) and the file maxval.
pub fn decode_pgm(text: &str) -> std::result::Result<(Array2<f64>, u32), String> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err("missing P2 magic".into());
    }
    let mut num = |what: &str| -> std::result::Result<u32, String> {
        tokens
            .next()
            .ok_or_else(|| format!("truncated before {what}"))?
            .parse::<u32>()
            .map_err(|e| format!("{what}: {e}"))
    };
    let w = num("width")? as usize;
    let h = num("height")? as usize;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > MAXVAL {
        return Err(format!("maxval {maxval} out of range"));
    }
    let mut data = Array2::zeros((h, w));
    for v in data.iter_mut() {
        let s = num("sample")?;
        if s > maxval {
            return Err(format!("sample {s} exceeds maxval {maxval}"));
        }
        *v = f64::from(s);
    }
    Ok((data, maxval))
}

pub fn part_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("part_{k}.pgm"))
}

/// Writes every part of `grids` (`[part, row, col]`) into `dir`.
pub fn write_parts(dir: &Path, grids: &Array3<f64>) -> Result<GridMeta> {
    fs::create_dir_all(dir)?;
    let (k, h, w) = grids.dim();
    let mut scale = Vec::with_capacity(k);
    for (i, grid) in grids.outer_iter().enumerate() {
        let (text, max) = encode_pgm(grid)?;
        fs::write(part_path(dir, i), text)?;
        scale.push(max);
    }
    let meta = GridMeta { K: k, H: h, W: w, scale };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

/// Reads a directory written by [`write_parts`]. Without a sidecar, parts are
/// discovered by name and values are left in `[0, 1]`.
pub fn read_parts(dir: &Path) -> Result<Array3<f64>> {
    let meta_path = dir.join(META_FILE);
    let meta: Option<GridMeta> =
        if meta_path.exists() { Some(serde_json::from_str(&fs::read_to_string(&meta_path)?)?) } else { None };
    let k = match &meta {
        Some(m) => m.K,
        None => (0..).take_while(|&i| part_path(dir, i).exists()).count(),
    };
    if k == 0 {
        return Err(Error::Format { path: dir.to_path_buf(), message: "no part_<k>.pgm files".into() });
    }
    let mut grids: Option<Array3<f64>> = None;
    for i in 0..k {
        let path = part_path(dir, i);
        let text = fs::read_to_string(&path)?;
        let (raw, maxval) = decode_pgm(&text).map_err(|message| Error::Format { path: path.clone(), message })?;
        let (h, w) = raw.dim();
        let target = grids.get_or_insert_with(|| Array3::zeros((k, h, w)));
        if target.dim() != (k, h, w) {
            return Err(Error::Format {
                path,
                message: format!("grid {h}x{w} differs from part 0 ({}x{})", target.dim().1, target.dim().2),
            });
        }
        let scale = meta.as_ref().map_or(1.0, |m| m.scale.get(i).copied().unwrap_or(1.0));
        let factor = scale / f64::from(maxval);
        target.index_axis_mut(ndarray::Axis(0), i).assign(&raw.mapv(|s| s * factor));
    }
    let grids = grids.expect("k > 0");
    if let Some(m) = &meta {
        if (m.H, m.W) != (grids.dim().1, grids.dim().2) {
            return Err(Error::Format { path: meta_path, message: "sidecar H/W disagree with PGM files".into() });
        }
    }
    Ok(grids)
}
