//! Blockpage and proxy-product fingerprints.
//!
//! Blockpage fingerprints are data, loaded from a line-delimited file and
//! matched against response bodies/headers in file order (first match
//! wins). Proxy products are code: each carries a pure transform over
//! request bytes that is the single source of truth for both the
//! simulator's transparent proxies and the detector's attribution.

use regex::bytes::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::HttpObservation;

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("fingerprint `{name}`: bad regex: {source}")]
    BadRegex { name: String, source: regex::Error },
    #[error("duplicate fingerprint name `{0}`")]
    DuplicateName(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One blockpage fingerprint as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockpageEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    /// Regex over the response body.
    pub pattern: String,
    /// Optional regex over `name: value` response header lines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header_pattern: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BlockpageFingerprint {
    pub entry: BlockpageEntry,
    pub body_re: Regex,
    pub header_re: Option<Regex>,
}

impl BlockpageFingerprint {
    pub fn matches(&self, http: &HttpObservation) -> bool {
        let body_hit = http.body.as_ref().is_some_and(|b| self.body_re.is_match(b));
        let header_hit = match &self.header_re {
            None => true,
            Some(re) => http
                .response_headers
                .iter()
                .any(|(n, v)| re.is_match(format!("{n}: {v}").as_bytes())),
        };
        body_hit && header_hit
    }
}

/// Transparent-proxy products the platform can attribute. Each product's
/// request mutation is deterministic and distinct from the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProxyProduct {
    /// Caching proxy: uppercases header names, unfolds continuation
    /// lines, appends a Via header.
    #[serde(rename = "cachefront")]
    CacheFront,
    /// Filtering gateway: lowercases header names and stamps a request id.
    #[serde(rename = "gatekeen")]
    GateKeen,
    /// Load-balancing middlebox: normalizes bare LF to CRLF and sorts
    /// headers alphabetically.
    #[serde(rename = "middlemux")]
    MiddleMux,
}

pub const ALL_PROXY_PRODUCTS: [ProxyProduct; 3] = [
    ProxyProduct::CacheFront,
    ProxyProduct::GateKeen,
    ProxyProduct::MiddleMux,
];

impl ProxyProduct {
    pub fn name(&self) -> &'static str {
        match self {
            ProxyProduct::CacheFront => "cachefront",
            ProxyProduct::GateKeen => "gatekeen",
            ProxyProduct::MiddleMux => "middlemux",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ALL_PROXY_PRODUCTS
            .iter()
            .copied()
            .find(|p| p.name() == name)
    }

    /// The product's characteristic rewrite of a request in flight.
    /// Pure: same bytes in, same bytes out.
    pub fn transform_request(&self, raw: &[u8]) -> Vec<u8> {
        let (head, rest) = split_head(raw);
        let normalized = normalize_newlines(head);
        let mut lines: Vec<String> = unfold_lines(&normalized);
        if lines.is_empty() {
            return raw.to_vec();
        }
        let request_line = lines.remove(0);
        match self {
            ProxyProduct::CacheFront => {
                let mut out: Vec<String> = vec![request_line];
                out.extend(lines.iter().map(|l| uppercase_header_name(l)));
                out.push("Via: 1.1 cachefront".to_string());
                assemble(out, rest)
            }
            ProxyProduct::GateKeen => {
                let mut out: Vec<String> = vec![request_line];
                out.extend(lines.iter().map(|l| lowercase_header_name(l)));
                out.push("X-Gatekeen-Id: 0001".to_string());
                assemble(out, rest)
            }
            ProxyProduct::MiddleMux => {
                let mut headers = lines;
                headers.sort();
                let mut out = vec![request_line];
                out.extend(headers);
                assemble(out, rest)
            }
        }
    }

    /// The banner the product injects into proxied HTML response bodies.
    pub fn body_banner(&self) -> &'static [u8] {
        match self {
            ProxyProduct::CacheFront => b"<!-- served via cachefront/1.0 cache -->\n",
            ProxyProduct::GateKeen => b"<!-- inspected by gatekeen gateway -->\n",
            ProxyProduct::MiddleMux => b"<!-- middlemux pass-through -->\n",
        }
    }

    /// Via-style header the product adds to proxied responses.
    pub fn via_header(&self) -> (String, String) {
        ("Via".to_string(), format!("1.1 {}", self.name()))
    }
}

fn split_head(raw: &[u8]) -> (&[u8], &[u8]) {
    if let Some(pos) = find_subslice(raw, b"\r\n\r\n") {
        (&raw[..pos], &raw[pos + 4..])
    } else if let Some(pos) = find_subslice(raw, b"\n\n") {
        (&raw[..pos], &raw[pos + 2..])
    } else {
        (raw, &[])
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn normalize_newlines(head: &[u8]) -> String {
    String::from_utf8_lossy(head).replace("\r\n", "\n")
}

/// Joins folded continuation lines (leading SP/HT) onto their header.
fn unfold_lines(head: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in head.split('\n') {
        if (line.starts_with(' ') || line.starts_with('\t')) && !out.is_empty() {
            let prev = out.last_mut().unwrap();
            prev.push(' ');
            prev.push_str(line.trim_start());
        } else if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    out
}

fn uppercase_header_name(line: &str) -> String {
    match line.split_once(':') {
        Some((name, value)) => format!("{}:{}", name.to_ascii_uppercase(), value),
        None => line.to_string(),
    }
}

fn lowercase_header_name(line: &str) -> String {
    match line.split_once(':') {
        Some((name, value)) => format!("{}:{}", name.to_ascii_lowercase(), value),
        None => line.to_string(),
    }
}

fn assemble(lines: Vec<String>, rest: &[u8]) -> Vec<u8> {
    let mut out = lines.join("\r\n").into_bytes();
    out.extend_from_slice(b"\r\n\r\n");
    out.extend_from_slice(rest);
    out
}

/// Compiled fingerprint database: blockpages from a file, proxy products
/// from the built-in table.
#[derive(Debug, Clone, Default)]
pub struct FingerprintDb {
    pub blockpages: Vec<BlockpageFingerprint>,
    pub proxies: Vec<ProxyProduct>,
}

impl FingerprintDb {
    pub fn empty() -> Self {
        FingerprintDb::default()
    }

    /// Built-in proxy table only, no blockpage patterns.
    pub fn builtin() -> Self {
        FingerprintDb {
            blockpages: Vec::new(),
            proxies: ALL_PROXY_PRODUCTS.to_vec(),
        }
    }

    pub fn from_entries(entries: Vec<BlockpageEntry>) -> Result<Self, FingerprintError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut blockpages = Vec::with_capacity(entries.len());
        for entry in entries {
            if !seen.insert(entry.name.clone()) {
                return Err(FingerprintError::DuplicateName(entry.name));
            }
            let body_re =
                Regex::new(&entry.pattern).map_err(|source| FingerprintError::BadRegex {
                    name: entry.name.clone(),
                    source,
                })?;
            let header_re = match &entry.header_pattern {
                Some(p) => Some(Regex::new(p).map_err(|source| FingerprintError::BadRegex {
                    name: entry.name.clone(),
                    source,
                })?),
                None => None,
            };
            blockpages.push(BlockpageFingerprint {
                entry,
                body_re,
                header_re,
            });
        }
        Ok(FingerprintDb {
            blockpages,
            proxies: ALL_PROXY_PRODUCTS.to_vec(),
        })
    }

    /// Loads a line-delimited fingerprint file. File order is match
    /// priority.
    pub fn load(path: &std::path::Path) -> Result<Self, FingerprintError> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: BlockpageEntry =
                serde_json::from_str(line).map_err(|e| FingerprintError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    /// First blockpage fingerprint matching the observation, if any.
    pub fn match_blockpage(&self, http: &HttpObservation) -> Option<&BlockpageFingerprint> {
        self.blockpages.iter().find(|fp| fp.matches(http))
    }

    /// Attributes an observed request mutation to a product by replaying
    /// each product's transform over the sent bytes.
    pub fn match_proxy(&self, sent: &[u8], echoed: &[u8]) -> Option<ProxyProduct> {
        self.proxies
            .iter()
            .copied()
            .find(|p| p.transform_request(sent) == echoed)
    }
}
