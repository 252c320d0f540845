//! Columnar binary dataset files.
//!
//! Layout: an 8-byte magic, a little-endian u32 header length, a JSON
//! header, then the raw columns — targets (`n` f64 LE), flags (`n` u8),
//! inputs (`n * d` f64 LE, row-major). Writing the same dataset twice
//! produces byte-identical files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use abstention_core::synthdata::{Dataset, GridSpec, SampleFlag, Split};
use abstention_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"ABSTDAT1";

/// Self-describing header carried by every dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub experiment: String,
    pub split: String,
    pub seed: u64,
    pub n_samples: usize,
    pub n_features: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<GridSpec>,
    /// Realized per-split statistics (signal fraction, corrupted count, ...).
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

fn split_from_str(s: &str) -> Result<Split, CliError> {
    Ok(match s {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(CliError::new("data", format!("unknown split '{other}'"))),
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset, header: &DatasetHeader) -> Result<(), CliError> {
    debug_assert_eq!(header.n_samples, ds.len());
    debug_assert_eq!(header.n_features, ds.feature_width());
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(
        MAGIC.len() + 4 + header_json.len() + ds.len() * (9 + ds.feature_width() * 8),
    );
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for &y in &ds.y {
        buf.extend_from_slice(&y.to_le_bytes());
    }
    for &f in &ds.flags {
        buf.push(f.code());
    }
    for &v in ds.x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetHeader), CliError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| CliError::new("data", format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(fail("not a dataset file"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + header_len;
    if bytes.len() < body {
        return Err(fail("truncated header"));
    }
    let header: DatasetHeader = serde_json::from_slice(&bytes[12..body])?;
    let n = header.n_samples;
    let d = header.n_features;
    let expected = body + n * 8 + n + n * d * 8;
    if bytes.len() != expected {
        return Err(fail("truncated data section"));
    }
    let mut offset = body;
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        y.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
        offset += 8;
    }
    let mut flags = Vec::with_capacity(n);
    for _ in 0..n {
        let code = bytes[offset];
        offset += 1;
        flags.push(
            SampleFlag::from_code(code).ok_or_else(|| fail(&format!("bad flag code {code}")))?,
        );
    }
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap()));
        offset += 8;
    }
    let ds = Dataset {
        x: Matrix::from_vec(n, d, data),
        y,
        flags,
        split: split_from_str(&header.split)?,
        seed: header.seed,
    };
    Ok((ds, header))
}

/// Human-readable summary used by the `describe` subcommand.
pub fn describe(path: &Path) -> Result<String, CliError> {
    use std::fmt::Write;
    let (ds, header) = read_dataset(path)?;
    let mut out = String::new();
    let _ = writeln!(out, "{}", path.display());
    let _ = writeln!(
        out,
        "  experiment={} split={} seed={} samples={} features={}",
        header.experiment, header.split, header.seed, header.n_samples, header.n_features
    );
    let _ = writeln!(out, "  config_hash={}", header.config_hash);
    let n = ds.len() as f64;
    let mean = ds.y.iter().sum::<f64>() / n;
    let var = ds.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let _ = writeln!(out, "  y: mean={:.6} std={:.6}", mean, var.sqrt());
    let mut counts: Vec<(SampleFlag, usize)> = Vec::new();
    for &f in &ds.flags {
        match counts.iter_mut().find(|(k, _)| *k == f) {
            Some((_, c)) => *c += 1,
            None => counts.push((f, 1)),
        }
    }
    counts.sort_by_key(|&(k, _)| k.code());
    let flags: Vec<String> = counts
        .iter()
        .map(|(k, c)| format!("{}={} ({:.1}%)", k.as_str(), c, 100.0 * *c as f64 / n))
        .collect();
    let _ = writeln!(out, "  flags: {}", flags.join(", "));
    for (key, value) in &header.metadata {
        let _ = writeln!(out, "  {key}={value}");
    }
    Ok(out)
}
