//! Run manifests, config hashing, metrics emission and logging.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use serde::Serialize;

use crate::Result;

/// FNV-1a hash of the canonical JSON encoding of a config. Serialization
/// goes through the typed struct, so the hash is independent of key order in
/// any user-provided file and changes iff a field value changes.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let canonical = serde_json::to_string(cfg)?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canonical.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{h:016x}"))
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started_at_unix: u64,
    pub config_hash: String,
}

impl RunManifest {
    pub fn new<T: Serialize>(config: &T, seed: u64) -> Result<Self> {
        Ok(Self {
            config: serde_json::to_value(config)?,
            seed,
            version: format!("rsm {}", env!("CARGO_PKG_VERSION")),
            started_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config_hash: config_hash(config)?,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Samples as CSV with header `x0,x1,...`. `Display` for `f64` prints the
/// shortest representation that round-trips exactly.
pub fn write_samples_csv(path: &Path, samples: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = samples.first().map_or(1, |s| s.len());
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(f, "{}", header.join(","))?;
    for row in samples {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

pub const METRICS_CSV_HEADER: &str =
    "iter,env_steps,mean_return,std_return,q_loss,policy_loss,lambda,sigma_explore";

/// Append-only, line-buffered metrics writer: every row is flushed so the
/// file stays parseable after an abrupt termination.
pub struct MetricsCsv {
    file: std::fs::File,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub iter: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub q_loss: f64,
    pub policy_loss: f64,
    pub lambda: f64,
    pub sigma_explore: f64,
}

impl MetricsCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "{METRICS_CSV_HEADER}")?;
        file.flush()?;
        Ok(Self { file })
    }

    pub fn append(&mut self, r: &MetricsRow) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            r.env_steps,
            r.mean_return,
            r.std_return,
            r.q_loss,
            r.policy_loss,
            r.lambda,
            r.sigma_explore
        )?;
        self.file.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Logging, gated by RSM_LOG=debug|info (silent otherwise).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd)]
pub enum LogLevel {
    Quiet = 0,
    Info = 1,
    Debug = 2,
}

fn level() -> LogLevel {
    static LEVEL: OnceLock<LogLevel> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("RSM_LOG").as_deref() {
        Ok("debug") => LogLevel::Debug,
        Ok("info") => LogLevel::Info,
        _ => LogLevel::Quiet,
    })
}

pub fn log_info(msg: impl AsRef<str>) {
    if level() >= LogLevel::Info {
        eprintln!("[rsm] {}", msg.as_ref());
    }
}

pub fn log_debug(msg: impl AsRef<str>) {
    if level() >= LogLevel::Debug {
        eprintln!("[rsm:debug] {}", msg.as_ref());
    }
}
