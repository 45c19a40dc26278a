use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Outcome of checking one suspect against one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub target_id: String,
    pub suspect_id: String,
    pub simnet_score: f64,
    pub threshold: f64,
    /// Fingerprint distance between target and suspect.
    pub distance: f64,
    /// `simnet_score > threshold`.
    pub verdict: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of each input, keyed by role.
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch; only recorded on request so reports
    /// stay reproducible by default.
    pub created_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Text,
}

impl ReportDocument {
    pub fn is_consistent(&self) -> bool {
        self.verdict == (self.simnet_score > self.threshold)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let call = if self.verdict {
            "RELATED: suspect likely derives from the target"
        } else {
            "not related"
        };
        let _ = writeln!(s, "target   {}", self.target_id);
        let _ = writeln!(s, "suspect  {}", self.suspect_id);
        let _ = writeln!(s, "score    {:.6} (threshold {})", self.simnet_score, self.threshold);
        let _ = writeln!(s, "distance {:.6}", self.distance);
        let _ = writeln!(s, "verdict  {call}");
        for input in &self.provenance.inputs {
            let _ = writeln!(s, "input    {} {} sha256:{}", input.role, input.path, input.sha256);
        }
        s
    }
}

pub fn write_report(report: &ReportDocument, path: &Path, format: ReportFormat) -> Result<()> {
    if !report.is_consistent() {
        return Err(CliError::Usage(format!(
            "report verdict {} disagrees with score {} and threshold {}",
            report.verdict, report.simnet_score, report.threshold
        )));
    }
    let text = match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).map_err(|source| CliError::Json {
                path: path.to_path_buf(),
                source,
            })? + "\n"
        }
        ReportFormat::Text => report.to_text(),
    };
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// SHA-256 of a file, or of a directory's files in name order (each
/// contributing its name and contents).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| CliError::io(path, e))?;
        entries.sort();
        for entry in entries.iter().filter(|p| p.is_file()) {
            hasher.update(entry.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update(fs::read(entry).map_err(|e| CliError::io(entry, e))?);
        }
    } else {
        hasher.update(fs::read(path).map_err(|e| CliError::io(path, e))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn input_hash(role: &str, path: &Path) -> Result<InputHash> {
    Ok(InputHash {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: hash_path(path)?,
    })
}
