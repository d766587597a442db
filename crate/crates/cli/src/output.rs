use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Format, RunConfig};

/// Leading bytes of the binary table format.
pub const MAGIC: &[u8; 8] = b"GLETRAJ1";

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: "glesim",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: config_hash(config),
            seed: config.sim.seed,
        }
    }

    fn lines(&self) -> [String; 4] {
        [
            format!("{} {}", self.tool, self.version),
            format!("command: {}", self.command),
            format!("config_sha256: {}", self.config_sha256),
            format!("seed: {}", self.seed),
        ]
    }
}

/// Hash of the effective configuration after command-line overrides. Where the
/// artifacts go does not affect their contents, so the output section is left out.
pub fn config_hash(config: &RunConfig) -> String {
    let mut physics = config.clone();
    physics.output = Default::default();
    let canonical = serde_json::to_string(&physics).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self, meta: &Meta) -> String {
        let mut out = String::new();
        for line in meta.lines() {
            out.push_str("# ");
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Magic, little-endian `u64` header length, JSON header, then row-major `f64` LE.
    pub fn to_binary(&self, meta: &Meta) -> Vec<u8> {
        let header = serde_json::json!({
            "meta": meta,
            "columns": self.columns,
            "rows": self.rows.len(),
        })
        .to_string();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.columns.len() * self.rows.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for row in &self.rows {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub struct Writer {
    pub dir: PathBuf,
    pub format: Format,
    pub meta: Meta,
}

impl Writer {
    fn prepare(&self, name: &str) -> io::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        Ok(self.dir.join(name))
    }

    pub fn table(&self, stem: &str, table: &Table) -> io::Result<PathBuf> {
        let (ext, bytes) = match self.format {
            Format::Csv => ("csv", table.to_csv(&self.meta).into_bytes()),
            Format::Binary => ("bin", table.to_binary(&self.meta)),
        };
        let path = self.prepare(&format!("{stem}.{ext}"))?;
        fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, stem: &str, report: &T) -> io::Result<PathBuf> {
        let doc = serde_json::json!({ "meta": self.meta, "report": report });
        let mut text = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
        text.push('\n');
        let path = self.prepare(&format!("{stem}.json"))?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Reads back a binary table: header JSON and rows.
pub fn read_binary(path: &Path) -> io::Result<(serde_json::Value, Vec<Vec<f64>>)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value =
        serde_json::from_slice(bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?).map_err(io::Error::other)?;
    let cols = header["columns"].as_array().map_or(0, Vec::len);
    let body = &bytes[16 + len..];
    if cols == 0 || body.len() % (8 * cols) != 0 {
        return Err(bad("body does not match the column count"));
    }
    let rows = body
        .chunks_exact(8 * cols)
        .map(|r| r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        .collect();
    Ok((header, rows))
}
