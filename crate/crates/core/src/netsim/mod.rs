//! Deterministic simulated network.
//!
//! A scenario declares origin servers, an honest resolver map, and an
//! ordered list of on-path censor elements. Running operations against a
//! scenario produces exactly the observation types a field agent would
//! record, so detectors cannot tell simulated inputs from recorded ones.
//! Identical (scenario, seed, arguments) always yield identical outputs.

mod engine;

pub use engine::{FetchOutcome, SIM_CLIENT_HOST, SIM_ECHO_HOST, SIM_MIMIC_PORT};

use std::collections::BTreeMap;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprints::ProxyProduct;
use crate::model::{canonical_ip, ModelError, VantageKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("host `{0}` is not declared in the scenario")]
    UnknownHost(String),
    #[error("path element {index} has an empty match set")]
    EmptyMatchSet { index: usize },
    #[error("scenario field invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(String),
}

/// Which way a simulated connection is routed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectVia {
    Direct,
    /// Control-channel transport, assumed free of on-path interference.
    Control,
}

/// How an origin server answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ServerBehavior {
    Honest {
        #[serde(default = "default_body")]
        body: String,
        #[serde(default = "default_status")]
        status: u16,
        #[serde(default)]
        headers: Vec<(String, String)>,
    },
    /// Registered domain, unreachable webserver: no response on any port.
    Dead {},
    /// Server-side blocking: resets streams from the listed client kinds
    /// after the request arrives, serves everyone else normally.
    VpnBlocker {
        blocked_client_kinds: Vec<VantageKind>,
        #[serde(default = "default_body")]
        body: String,
        #[serde(default = "default_status")]
        status: u16,
    },
    /// Introduces benign gaps in TCP sequence numbers between response
    /// segments while delivering the full body.
    QuirkyLoadBalancer {
        seq_gap: u32,
        #[serde(default = "default_body")]
        body: String,
        #[serde(default = "default_status")]
        status: u16,
    },
    /// SYN-ACK IPID differs from subsequent packets and response segments
    /// overlap with conflicting bytes; the page still loads.
    ChineseQuirk {
        #[serde(default = "default_body")]
        body: String,
        #[serde(default = "default_status")]
        status: u16,
    },
}

impl ServerBehavior {
    pub fn page(&self) -> (u16, &str, &[(String, String)]) {
        match self {
            ServerBehavior::Honest {
                body,
                status,
                headers,
            } => (*status, body, headers),
            ServerBehavior::VpnBlocker { body, status, .. }
            | ServerBehavior::QuirkyLoadBalancer { body, status, .. }
            | ServerBehavior::ChineseQuirk { body, status, .. } => (*status, body, &[]),
            ServerBehavior::Dead {} => (0, "", &[]),
        }
    }
}

fn default_body() -> String {
    "<html><head><title>origin</title></head><body>hello from origin</body></html>".to_string()
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEntry {
    pub behavior: ServerBehavior,
    /// TTL remaining on honest inbound packets from this server's path.
    #[serde(default = "default_ttl")]
    pub inbound_ttl: u8,
    /// One-way client-to-server latency.
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
}

fn default_ttl() -> u8 {
    52
}

fn default_latency() -> u64 {
    30
}

/// Certificate substituted by a TLS man-in-the-middle element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MitmCert {
    SelfSigned,
    UntrustedIssuer,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockMode {
    DropSyn,
    RstOnSyn,
}

/// One on-path censor middlebox. Elements apply in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PathElement {
    /// Races a forged answer against the honest resolver response.
    DnsInjector {
        match_domains: Vec<String>,
        fake_ips: Vec<String>,
        injection_delay_ms: u64,
    },
    /// Injects an RST mid-stream; its TTL differs from the server path
    /// by `ttl_offset`.
    RstInjector {
        #[serde(default)]
        match_domains: Vec<String>,
        #[serde(default)]
        match_keywords: Vec<String>,
        ttl_offset: i16,
    },
    /// Replaces matched responses with a blockpage.
    BlockpageProxy {
        match_domains: Vec<String>,
        page_body: String,
        status: u16,
    },
    /// Product-characteristic request normalization plus response
    /// side-effects, applied to all HTTP traffic on the path.
    TransparentProxy { fingerprint: ProxyProduct },
    /// Substitutes the server certificate on matched hosts.
    TlsMitm {
        match_domains: Vec<String>,
        cert: MitmCert,
    },
    /// Blocks direct TCP connects to matched hosts; control-channel
    /// connects bypass it.
    IpBlocker {
        match_hosts: Vec<String>,
        mode: BlockMode,
    },
}

impl PathElement {
    /// True when the element can act on traffic for `host`. A transparent
    /// proxy sits on the whole path, so it matches every host.
    pub fn matches_host(&self, host: &str) -> bool {
        match self {
            PathElement::DnsInjector { match_domains, .. }
            | PathElement::BlockpageProxy { match_domains, .. }
            | PathElement::TlsMitm { match_domains, .. } => match_domains.iter().any(|d| d == host),
            PathElement::RstInjector { match_domains, .. } => {
                match_domains.iter().any(|d| d == host)
            }
            PathElement::IpBlocker { match_hosts, .. } => match_hosts.iter().any(|h| h == host),
            PathElement::TransparentProxy { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolverSpec {
    /// Honest answers: domain to canonical IP strings.
    #[serde(default)]
    pub answers: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_system_latency")]
    pub system_latency_ms: u64,
    #[serde(default = "default_public_latency")]
    pub public_latency_ms: u64,
    #[serde(default = "default_control_latency")]
    pub control_latency_ms: u64,
}

fn default_system_latency() -> u64 {
    30
}

fn default_public_latency() -> u64 {
    50
}

fn default_control_latency() -> u64 {
    120
}

impl Default for ResolverSpec {
    fn default() -> Self {
        ResolverSpec {
            answers: BTreeMap::new(),
            system_latency_ms: default_system_latency(),
            public_latency_ms: default_public_latency(),
            control_latency_ms: default_control_latency(),
        }
    }
}

fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap()
}

/// Declarative censor-network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub seed: u64,
    /// Fixed UTC anchor all simulated timestamps derive from, so runs
    /// are reproducible byte-for-byte.
    #[serde(default = "default_epoch")]
    pub epoch: DateTime<Utc>,
    #[serde(default)]
    pub servers: BTreeMap<String, ServerEntry>,
    #[serde(default)]
    pub resolvers: ResolverSpec,
    #[serde(default)]
    pub path_elements: Vec<PathElement>,
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        for (host, entry) in &self.servers {
            if host.is_empty() {
                return Err(SimError::Invalid("empty server host".into()));
            }
            if entry.inbound_ttl == 0 {
                return Err(SimError::Invalid(format!("server {host}: inbound_ttl 0")));
            }
            if let ServerBehavior::QuirkyLoadBalancer { seq_gap, .. } = entry.behavior {
                if seq_gap == 0 {
                    return Err(SimError::Invalid(format!("server {host}: seq_gap 0")));
                }
            }
        }
        for answers in self.resolvers.answers.values() {
            for ip in answers {
                canonical_ip(ip)?;
            }
        }
        for (index, el) in self.path_elements.iter().enumerate() {
            let empty = match el {
                PathElement::DnsInjector {
                    match_domains,
                    fake_ips,
                    ..
                } => {
                    for ip in fake_ips {
                        canonical_ip(ip)?;
                    }
                    match_domains.is_empty()
                }
                PathElement::RstInjector {
                    match_domains,
                    match_keywords,
                    ..
                } => match_domains.is_empty() && match_keywords.is_empty(),
                PathElement::BlockpageProxy { match_domains, .. }
                | PathElement::TlsMitm { match_domains, .. } => match_domains.is_empty(),
                PathElement::IpBlocker { match_hosts, .. } => match_hosts.is_empty(),
                // Matches the whole path by construction.
                PathElement::TransparentProxy { .. } => false,
            };
            if empty {
                return Err(SimError::EmptyMatchSet { index });
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        let scenario: SimScenario =
            serde_json::from_str(&text).map_err(|e| SimError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// The same network with every on-path element removed: what a
    /// control channel sees. Server behaviors still apply.
    pub fn censor_free_view(&self) -> SimScenario {
        let mut view = self.clone();
        view.path_elements.clear();
        view
    }
}

/// Deterministic per-target offset (seconds within the epoch day) used
/// to anchor measurement timestamps independently of batch order.
pub fn scenario_time_offset(key: &str) -> u32 {
    (fnv64(key.as_bytes()) % 86_400) as u32
}

/// Stable 64-bit FNV-1a, used to derive per-stream RNG seeds.
pub(crate) fn fnv64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
