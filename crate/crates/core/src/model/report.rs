//! Line-delimited report and verdict records.
//!
//! One record per line, UTF-8, with an explicit integer schema version
//! so partially written files and format drift fail loudly. Field
//! documentation lives in `docs/formats.md`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelError, RawMeasurement, Validate, Verdict};

/// Current report/verdict record schema version.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

/// One report line: a measurement, plus the verdict when the vantage
/// point ran in classify mode. `local_only` marks records the volunteer
/// withheld from central submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub v: u32,
    pub measurement: RawMeasurement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub local_only: bool,
}

impl ReportRecord {
    pub fn raw(measurement: RawMeasurement) -> Self {
        ReportRecord {
            v: REPORT_SCHEMA_VERSION,
            measurement,
            verdict: None,
            local_only: false,
        }
    }

    pub fn classified(measurement: RawMeasurement, verdict: Verdict) -> Self {
        ReportRecord {
            v: REPORT_SCHEMA_VERSION,
            measurement,
            verdict: Some(verdict),
            local_only: false,
        }
    }
}

impl Validate for ReportRecord {
    fn validate(&self) -> Result<(), ModelError> {
        self.measurement.validate()?;
        if let Some(v) = &self.verdict {
            v.validate()?;
            for a in &v.evidence {
                a.validate_against(&self.measurement)?;
            }
        }
        Ok(())
    }
}

/// One verdict line, as written by the detect stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub v: u32,
    pub verdict: Verdict,
}

impl VerdictRecord {
    pub fn new(verdict: Verdict) -> Self {
        VerdictRecord {
            v: REPORT_SCHEMA_VERSION,
            verdict,
        }
    }
}

/// Serializes one record to its line form (no trailing newline).
/// Deterministic: equal records produce identical bytes.
pub fn serialize_report(record: &ReportRecord) -> String {
    serde_json::to_string(record).expect("report records always serialize")
}

/// Parses and validates one report line.
pub fn deserialize_report(line: &str) -> Result<ReportRecord, ReportError> {
    let record: ReportRecord = serde_json::from_str(line).map_err(|e| ReportError::Parse {
        offset: e.column().saturating_sub(1),
        reason: e.to_string(),
    })?;
    if record.v != REPORT_SCHEMA_VERSION {
        return Err(ReportError::Version {
            found: record.v,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    record.validate()?;
    Ok(record)
}

pub fn serialize_verdict(record: &VerdictRecord) -> String {
    serde_json::to_string(record).expect("verdict records always serialize")
}

pub fn deserialize_verdict(line: &str) -> Result<VerdictRecord, ReportError> {
    let record: VerdictRecord = serde_json::from_str(line).map_err(|e| ReportError::Parse {
        offset: e.column().saturating_sub(1),
        reason: e.to_string(),
    })?;
    if record.v != REPORT_SCHEMA_VERSION {
        return Err(ReportError::Version {
            found: record.v,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    record.verdict.validate()?;
    Ok(record)
}

/// Reads every record from a report file, failing on the first bad line.
pub fn read_report_file(path: &std::path::Path) -> Result<Vec<ReportRecord>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Parse {
        offset: 0,
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(deserialize_report(line)?);
    }
    Ok(out)
}

pub fn write_report_file(
    path: &std::path::Path,
    records: &[ReportRecord],
) -> Result<(), std::io::Error> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serialize_report(r));
        text.push('\n');
    }
    std::fs::write(path, text)
}

pub fn read_verdict_file(path: &std::path::Path) -> Result<Vec<VerdictRecord>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::Parse {
        offset: 0,
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(deserialize_verdict(line)?);
    }
    Ok(out)
}

pub fn write_verdict_file(
    path: &std::path::Path,
    records: &[VerdictRecord],
) -> Result<(), std::io::Error> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serialize_verdict(r));
        text.push('\n');
    }
    std::fs::write(path, text)
}
