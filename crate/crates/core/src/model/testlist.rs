//! Test-list CSV parsing.
//!
//! Column layout is fixed as `url,category_code`; extra columns are
//! ignored for compatibility with published list formats.

use thiserror::Error;

use super::{ModelError, TargetOrigin, TestTarget};

#[derive(Debug, Error)]
pub enum TestListError {
    #[error("line {line}: {source}")]
    Row { line: u64, source: ModelError },
    #[error("line {line}: missing column `{column}`")]
    MissingColumn { line: u64, column: &'static str },
    #[error("expected header `url,category_code`, found `{0}`")]
    BadHeader(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Parses CSV test-list content. Row order is preserved; an empty input
/// yields an empty list.
pub fn parse_test_list(text: &str, origin: TargetOrigin) -> Result<Vec<TestTarget>, TestListError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers()?;
        if headers.len() < 2 || &headers[0] != "url" || &headers[1] != "category_code" {
            return Err(TestListError::BadHeader(
                headers.iter().collect::<Vec<_>>().join(","),
            ));
        }
    }
    let mut targets = Vec::new();
    for result in reader.records() {
        let record = result?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(targets.len() as u64 + 2);
        let url = record.get(0).ok_or(TestListError::MissingColumn {
            line,
            column: "url",
        })?;
        let category = record.get(1).ok_or(TestListError::MissingColumn {
            line,
            column: "category_code",
        })?;
        let target = TestTarget::new(url, category, origin)
            .map_err(|e| TestListError::Row { line, source: e })?;
        targets.push(target);
    }
    Ok(targets)
}

/// Reads and parses a test-list file.
pub fn read_test_list_file(
    path: &std::path::Path,
    origin: TargetOrigin,
) -> Result<Vec<TestTarget>, TestListError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TestListError::BadHeader(format!("cannot read {}: {e}", path.display())))?;
    parse_test_list(&text, origin)
}
