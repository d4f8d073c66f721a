//! File formats: BTF tensors, CSV matrices, 16-bit PGM heatmaps, flat
//! `key = value` config files and JSON reports. Every writer goes through a
//! temporary file in the target directory followed by a rename.
//!
//! BTF layout: `"BTF1"`, a `u8` dimension count, that many `u32` LE dims, then
//! `f32` LE values in band-sequential order. Tensors are written with dims
//! `[L1, L2, K]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::{IterationRecord, Scale, SolverConfig};
use crate::tensor::{Mat, Tensor3};

pub const BTF_MAGIC: &[u8; 4] = b"BTF1";

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn encode_btf(t: &Tensor3) -> Result<Vec<u8>> {
    let (l1, l2, k) = t.dims();
    let mut out = Vec::with_capacity(5 + 12 + 4 * t.data().len());
    out.extend_from_slice(BTF_MAGIC);
    out.push(3);
    for d in [l1, l2, k] {
        let d = u32::try_from(d).map_err(|_| Error::InvalidInput(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses a BTF byte stream. One- and two-dimensional payloads are read as
/// `L1 × 1 × 1` and `L1 × L2 × 1`.
pub fn decode_btf(bytes: &[u8]) -> Result<Tensor3> {
    let fmt = |offset: usize, message: String| Error::Format { offset: offset as u64, message };
    if bytes.len() < 4 || &bytes[..4] != BTF_MAGIC {
        return Err(fmt(0, "bad magic (expected \"BTF1\")".into()));
    }
    let ndims = *bytes.get(4).ok_or_else(|| fmt(4, "missing dimension count".into()))? as usize;
    if !(1..=3).contains(&ndims) {
        return Err(fmt(4, format!("unsupported dimension count {ndims} (expected 1 to 3)")));
    }
    let mut dims = [1usize; 3];
    let mut count: usize = 1;
    for (i, d) in dims.iter_mut().take(ndims).enumerate() {
        let off = 5 + 4 * i;
        let raw = bytes
            .get(off..off + 4)
            .ok_or_else(|| fmt(off, format!("header truncated while reading dimension {i}")))?;
        *d = u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize;
        if *d == 0 {
            return Err(fmt(off, format!("dimension {i} is zero")));
        }
        count = count
            .checked_mul(*d)
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| fmt(off, "dimension product overflows".into()))?;
    }
    let start = 5 + 4 * ndims;
    let expected = count * 4;
    let actual = bytes.len() - start;
    if actual != expected {
        return Err(fmt(
            start + actual.min(expected),
            format!("payload has {actual} bytes, expected {expected} ({count} f32 values)"),
        ));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor3::new(dims[0], dims[1], dims[2], data)
}

pub fn write_btf(path: &Path, t: &Tensor3) -> Result<()> {
    write_atomic(path, &encode_btf(t)?)
}

pub fn read_btf(path: &Path) -> Result<Tensor3> {
    decode_btf(&fs::read(path)?)
}

/// Comma-separated rows, no header; values use the shortest round-trip form.
pub fn encode_csv(m: &Mat) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn decode_csv(text: &str) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::InvalidInput(format!("line {}: '{f}' is not a finite number", ln + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidInput(format!(
                    "line {}: {} fields, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("CSV matrix is empty".into()));
    }
    Mat::from_rows(&rows)
}

pub fn write_csv(path: &Path, m: &Mat) -> Result<()> {
    write_atomic(path, encode_csv(m).as_bytes())
}

pub fn read_csv(path: &Path) -> Result<Mat> {
    decode_csv(&fs::read_to_string(path)?)
}

/// Reads a list of numbers, one per line or comma-separated.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    Ok(read_csv(path)?.into_data())
}

/// 16-bit binary PGM of an `l1 × l2` row-major image, mapping `[0, scale]` to
/// `[0, 65535]` with clipping.
pub fn encode_heatmap(image: &[f64], l1: usize, l2: usize, scale: f64) -> Result<Vec<u8>> {
    if image.len() != l1 * l2 {
        return Err(Error::InvalidInput(format!("image has {} values, expected {}", image.len(), l1 * l2)));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("heatmap scale must be positive, got {scale}")));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("heatmap values must be finite".into()));
    }
    let mut out = format!("P5\n{l2} {l1}\n65535\n").into_bytes();
    out.reserve(2 * image.len());
    for &v in image {
        let q = ((v / scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_heatmap(path: &Path, image: &[f64], l1: usize, l2: usize, scale: f64) -> Result<()> {
    write_atomic(path, &encode_heatmap(image, l1, l2, scale)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn encode_diagnostics(rows: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,objective,primal_residual,lambda4_dag\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.iteration, r.objective, r.primal_residual, r.lambda4_dag));
    }
    s
}

/// One value per line with a header.
pub fn encode_series(header: &str, values: &[f64]) -> String {
    let mut s = format!("iteration,{header}\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    s
}

/// `key = value` pairs; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected 'key = value'", ln + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("config line {}: empty key", ln + 1)));
        }
        out.push((k.to_ascii_lowercase(), v.to_string()));
    }
    Ok(out)
}

pub const CONFIG_KEYS: &[&str] = &[
    "lambda1",
    "lambda2",
    "lambda3_dag",
    "lambda4_dag_init",
    "lambda4_growth",
    "scale",
    "mu",
    "outer_iters",
    "admm_iters",
    "prior",
    "denoiser",
    "mv_variant",
    "n_sources",
    "seed",
    "tau",
    "initializer",
    "recompute_weights",
    "tol",
    "qdip_iters",
    "qdip_lr",
    "qdip_widths",
    "qdip_entangle",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

/// Applies one setting to a solver configuration.
pub fn apply_setting(cfg: &mut SolverConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "lambda1" => cfg.lambda1 = parse_num(key, v)?,
        "lambda2" => cfg.lambda2 = parse_num(key, v)?,
        "lambda3_dag" => cfg.lambda3_dag = parse_num(key, v)?,
        "lambda4_dag_init" => cfg.lambda4_dag_init = parse_num(key, v)?,
        "lambda4_growth" => cfg.lambda4_growth = parse_num(key, v)?,
        "scale" => cfg.scale = v.parse::<Scale>()?,
        "mu" => cfg.mu = parse_num(key, v)?,
        "outer_iters" => cfg.outer_iters = parse_num(key, v)?,
        "admm_iters" => cfg.admm_iters = parse_num(key, v)?,
        "prior" => cfg.prior = v.parse()?,
        "denoiser" => cfg.denoiser = v.parse()?,
        "mv_variant" => cfg.mv_variant = v.parse()?,
        "n_sources" => cfg.n_sources = parse_num(key, v)?,
        "seed" => cfg.seed = parse_num(key, v)?,
        "tau" => {
            cfg.tau = if v.eq_ignore_ascii_case("auto") { None } else { Some(parse_num(key, v)?) };
        }
        "initializer" => cfg.initializer = v.parse()?,
        "recompute_weights" => cfg.recompute_weights = parse_bool(key, v)?,
        "tol" => {
            cfg.tol = if v.eq_ignore_ascii_case("none") { None } else { Some(parse_num(key, v)?) };
        }
        "qdip_iters" => cfg.qdip.iterations = parse_num(key, v)?,
        "qdip_lr" => cfg.qdip.learning_rate = parse_num(key, v)?,
        "qdip_widths" => {
            cfg.qdip.hidden_widths = if v.eq_ignore_ascii_case("auto") {
                None
            } else {
                Some(v.split(',').map(|w| parse_num(key, w.trim())).collect::<Result<Vec<usize>>>()?)
            };
        }
        "qdip_entangle" => cfg.qdip.entangle = parse_bool(key, v)?,
        other => {
            return Err(Error::Config(format!(
                "unknown config key '{other}'; valid keys: {}",
                CONFIG_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

pub fn apply_config(cfg: &mut SolverConfig, text: &str) -> Result<()> {
    for (k, v) in parse_config(text)? {
        apply_setting(cfg, &k, &v)?;
    }
    Ok(())
}
