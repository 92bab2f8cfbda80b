//! Dataset cache: `<name>-<seed>-<n>.bin` (little-endian `f64` matrix) with
//! a `.meta` sidecar holding generator parameters as `key = "value"` lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::data::{Dataset, DatasetSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMFD";
const VERSION: u32 = 1;

pub fn file_stem(name: &str, seed: u64, n: usize) -> String {
    format!("{name}-{seed}-{n}")
}

pub fn paths(dir: &Path, name: &str, seed: u64, n: usize) -> (PathBuf, PathBuf) {
    let stem = file_stem(name, seed, n);
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.meta")))
}

pub fn encode(samples: &Array2<f64>, channels: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * samples.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(samples.ncols() as u64).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    for v in samples.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Array2<f64>, usize)> {
    let bad = |m: &str| Error::Parse(format!("dataset file: {m}"));
    if bytes.len() < 28 || &bytes[..4] != MAGIC {
        return Err(bad("bad header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let (rows, cols) = (u64_at(8) as usize, u64_at(16) as usize);
    let channels = u32_at(24) as usize;
    let body = &bytes[28..];
    if body.len() != 8 * rows * cols {
        return Err(bad("truncated body"));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let m = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))?;
    Ok((m, channels))
}

pub fn save(dir: &Path, d: &Dataset, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (bin, meta) = paths(dir, &d.name, seed, d.len());
    fs::write(&bin, encode(&d.samples, d.channels))?;
    fs::write(&meta, toml::to_string(&d.meta).map_err(|e| Error::Parse(e.to_string()))?)?;
    Ok(bin)
}

pub fn load(dir: &Path, name: &str, seed: u64, n: usize) -> Result<Dataset> {
    let (bin, meta) = paths(dir, name, seed, n);
    if !bin.exists() {
        return Err(Error::MissingArtifact(bin.display().to_string()));
    }
    let (samples, channels) = decode(&fs::read(&bin)?)?;
    let meta: BTreeMap<String, String> = match fs::read_to_string(&meta) {
        Ok(text) => toml::from_str(&text)?,
        Err(_) => BTreeMap::new(),
    };
    Ok(Dataset { name: name.into(), samples, channels, meta })
}

/// Loads the cached dataset when its parameters match `spec`, otherwise
/// generates and caches it.
pub fn load_or_generate(dir: &Path, spec: &DatasetSpec, n: usize, seed: u64) -> Result<Dataset> {
    if let Ok(d) = load(dir, spec.name(), seed, n) {
        let wanted = spec.describe();
        if wanted.iter().all(|(k, v)| d.meta.get(k) == Some(v)) && d.len() == n && d.dim() == spec.dim() {
            return Ok(d);
        }
    }
    let d = spec.generate(n, seed)?;
    save(dir, &d, seed)?;
    Ok(d)
}

/// Writes samples as CSV with `x0, x1, …` headers.
pub fn export_csv(path: &Path, samples: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let header: Vec<String> = (0..samples.ncols()).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for row in samples.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
