//! Shared domain types for the measurement platform.
//!
//! Every type here is immutable after construction and safe to share
//! between threads. Invariants are enforced by [`Validate::validate`],
//! which runs on construction paths and again whenever a record is
//! deserialized from disk or the wire; violating inputs are rejected,
//! never repaired.

mod report;
mod testlist;

pub use report::{
    deserialize_report, deserialize_verdict, read_report_file, read_verdict_file, serialize_report,
    serialize_verdict, write_report_file, write_verdict_file, ReportError, ReportRecord,
    VerdictRecord, REPORT_SCHEMA_VERSION,
};
pub use testlist::{parse_test_list, read_test_list_file, TestListError};

use std::collections::BTreeSet;
use std::fmt;
use std::net::IpAddr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Invariant violation raised by any domain type.
#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ModelError {
    #[error("invalid url `{url}`: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("category must be non-empty")]
    EmptyCategory,
    #[error("country code `{0}` is not two uppercase ASCII letters")]
    InvalidCountry(String),
    #[error("asn must be positive")]
    InvalidAsn,
    #[error("vantage id must be non-empty")]
    EmptyVantageId,
    #[error("packet trace events are not ordered by time (index {0})")]
    UnorderedTrace(usize),
    #[error("client-initiated tcp trace must start with an outbound SYN")]
    TraceMissingSyn,
    #[error("packet payload length {actual} does not match declared payload_len {declared}")]
    PayloadLenMismatch { declared: u32, actual: usize },
    #[error("dns responses are not sorted by arrival (index {0})")]
    UnsortedDnsResponses(usize),
    #[error("ip address `{0}` is not in canonical textual form")]
    NonCanonicalIp(String),
    #[error("http body length {actual} does not match declared body_len {declared}")]
    BodyLenMismatch { declared: u64, actual: usize },
    #[error("tls chain must be non-empty when the handshake completed")]
    EmptyTlsChain,
    #[error("measurement must carry at least one observation")]
    EmptyMeasurement,
    #[error("verdict outcome/methods mismatch: {0}")]
    VerdictMethods(String),
    #[error("anomaly evidence reference does not resolve: {0}")]
    DanglingEvidence(String),
}

/// Types that enforce their structural invariants.
pub trait Validate {
    fn validate(&self) -> Result<(), ModelError>;
}

/// Where a test target came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetOrigin {
    GlobalList,
    CountryList,
    BaselineAlexa,
}

/// One URL under test, with its category code from the source list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TestTarget {
    pub url: String,
    pub category: String,
    pub origin: TargetOrigin,
}

impl TestTarget {
    pub fn new(url: &str, category: &str, origin: TargetOrigin) -> Result<Self, ModelError> {
        let t = TestTarget {
            url: url.to_string(),
            category: category.to_string(),
            origin,
        };
        t.validate()?;
        Ok(t)
    }

    /// Host portion of the target URL. Valid targets always have one.
    pub fn host(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(|h| h.to_string()))
            .unwrap_or_default()
    }

    /// Port, defaulted by scheme.
    pub fn port(&self) -> u16 {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.port_or_known_default())
            .unwrap_or(80)
    }

    pub fn is_https(&self) -> bool {
        self.url.starts_with("https:")
    }
}

impl Validate for TestTarget {
    fn validate(&self) -> Result<(), ModelError> {
        let parsed = url::Url::parse(&self.url).map_err(|e| ModelError::InvalidUrl {
            url: self.url.clone(),
            reason: e.to_string(),
        })?;
        if parsed.scheme() != "http" && parsed.scheme() != "https" {
            return Err(ModelError::InvalidUrl {
                url: self.url.clone(),
                reason: format!("unsupported scheme `{}`", parsed.scheme()),
            });
        }
        if parsed.host_str().is_none_or(|h| h.is_empty()) {
            return Err(ModelError::InvalidUrl {
                url: self.url.clone(),
                reason: "missing host".into(),
            });
        }
        if self.category.is_empty() {
            return Err(ModelError::EmptyCategory);
        }
        Ok(())
    }
}

/// How a vantage point participates in the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VantageKind {
    Vpn,
    Volunteer,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Consent {
    OptIn,
    OptOutAllowed,
}

/// A network location measurements run from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VantagePoint {
    pub id: String,
    pub country: String,
    pub asn: u32,
    pub kind: VantageKind,
    pub consent: Consent,
}

impl VantagePoint {
    pub fn new(
        id: &str,
        country: &str,
        asn: u32,
        kind: VantageKind,
        consent: Consent,
    ) -> Result<Self, ModelError> {
        let vp = VantagePoint {
            id: id.to_string(),
            country: country.to_string(),
            asn,
            kind,
            consent,
        };
        vp.validate()?;
        Ok(vp)
    }
}

impl Validate for VantagePoint {
    fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::EmptyVantageId);
        }
        if self.country.len() != 2 || !self.country.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(ModelError::InvalidCountry(self.country.clone()));
        }
        if self.asn == 0 {
            return Err(ModelError::InvalidAsn);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Outbound,
    Inbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TcpFlag {
    Syn,
    Ack,
    Rst,
    Fin,
    Psh,
}

/// Builds a flag set from a slice, for terse trace construction.
pub fn flags(set: &[TcpFlag]) -> BTreeSet<TcpFlag> {
    set.iter().copied().collect()
}

/// One packet as seen at the vantage point.
///
/// `payload` may be dropped in headers-only captures; `payload_len` is
/// always recorded so size-based analysis survives the omission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketEvent {
    /// Microseconds since stream start.
    pub t: u64,
    pub direction: Direction,
    pub ip_ttl: u8,
    pub ip_id: u16,
    pub tcp_seq: u32,
    pub tcp_ack: u32,
    pub flags: BTreeSet<TcpFlag>,
    pub payload_len: u32,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_b64")]
    pub payload: Option<Vec<u8>>,
}

impl PacketEvent {
    pub fn has(&self, f: TcpFlag) -> bool {
        self.flags.contains(&f)
    }
}

impl Validate for PacketEvent {
    fn validate(&self) -> Result<(), ModelError> {
        if let Some(p) = &self.payload {
            if p.len() != self.payload_len as usize {
                return Err(ModelError::PayloadLenMismatch {
                    declared: self.payload_len,
                    actual: p.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportProtocol {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_host: String,
    pub src_port: u16,
    pub dst_host: String,
    pub dst_port: u16,
    pub protocol: TransportProtocol,
}

/// Ordered per-stream packet events for one connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketTrace {
    pub five_tuple: FiveTuple,
    pub events: Vec<PacketEvent>,
}

impl PacketTrace {
    pub fn new(five_tuple: FiveTuple, events: Vec<PacketEvent>) -> Result<Self, ModelError> {
        let t = PacketTrace { five_tuple, events };
        t.validate()?;
        Ok(t)
    }

    pub fn inbound(&self) -> impl Iterator<Item = &PacketEvent> {
        self.events
            .iter()
            .filter(|e| e.direction == Direction::Inbound)
    }
}

impl Validate for PacketTrace {
    fn validate(&self) -> Result<(), ModelError> {
        let mut last = 0u64;
        for (i, ev) in self.events.iter().enumerate() {
            ev.validate()?;
            if ev.t < last {
                return Err(ModelError::UnorderedTrace(i));
            }
            last = ev.t;
        }
        if self.five_tuple.protocol == TransportProtocol::Tcp {
            if let Some(first) = self.events.first() {
                if first.direction != Direction::Outbound || !first.has(TcpFlag::Syn) {
                    return Err(ModelError::TraceMissingSyn);
                }
            }
        }
        Ok(())
    }
}

/// Which resolver a DNS query went to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolverKind {
    SystemDefault,
    PublicAlternate,
    /// Control resolver bound to a non-standard port; on-path injectors
    /// keyed on port 53 never see these queries.
    ControlNonstandardPort,
}

pub const DNS_RCODE_NOERROR: u16 = 0;
pub const DNS_RCODE_NXDOMAIN: u16 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsResponse {
    /// Microseconds since the query was issued.
    pub arrival: u64,
    pub answers: Vec<String>,
    pub rcode: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsObservation {
    pub qname: String,
    pub resolver: ResolverKind,
    pub responses: Vec<DnsResponse>,
}

impl DnsObservation {
    /// Answers a stub resolver would act on: the earliest NOERROR response.
    pub fn effective_answers(&self) -> &[String] {
        self.responses
            .iter()
            .find(|r| r.rcode == DNS_RCODE_NOERROR)
            .map(|r| r.answers.as_slice())
            .unwrap_or(&[])
    }
}

impl Validate for DnsObservation {
    fn validate(&self) -> Result<(), ModelError> {
        let mut last = 0u64;
        for (i, r) in self.responses.iter().enumerate() {
            if r.arrival < last {
                return Err(ModelError::UnsortedDnsResponses(i));
            }
            last = r.arrival;
            for a in &r.answers {
                canonical_ip(a)?;
            }
        }
        Ok(())
    }
}

/// Rejects addresses not written in canonical textual form
/// (dotted quad for v4, RFC 5952 for v6).
pub fn canonical_ip(s: &str) -> Result<IpAddr, ModelError> {
    let addr: IpAddr = s
        .parse()
        .map_err(|_| ModelError::NonCanonicalIp(s.to_string()))?;
    if addr.to_string() != s {
        return Err(ModelError::NonCanonicalIp(s.to_string()));
    }
    Ok(addr)
}

/// One HTTP request/response exchange.
///
/// `body` may be omitted in metadata-only collection; `body_len` always
/// reflects the received length so size comparisons still work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpObservation {
    pub request_line: String,
    pub request_headers: Vec<(String, String)>,
    pub redirect_chain: Vec<String>,
    pub status: Option<u16>,
    pub response_headers: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_b64")]
    pub body: Option<Vec<u8>>,
    pub body_len: u64,
}

impl HttpObservation {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.response_headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

impl Validate for HttpObservation {
    fn validate(&self) -> Result<(), ModelError> {
        if let Some(b) = &self.body {
            if b.len() as u64 != self.body_len {
                return Err(ModelError::BodyLenMismatch {
                    declared: self.body_len,
                    actual: b.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSummary {
    pub subject: String,
    pub issuer: String,
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
    pub self_signed: bool,
    pub issuer_trusted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsObservation {
    pub handshake_completed: bool,
    pub chain: Vec<CertSummary>,
}

impl Validate for TlsObservation {
    fn validate(&self) -> Result<(), ModelError> {
        if self.handshake_completed && self.chain.is_empty() {
            return Err(ModelError::EmptyTlsChain);
        }
        Ok(())
    }
}

/// Result of the dual-path TCP connectivity test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectProbe {
    pub direct_ok: bool,
    pub control_ok: bool,
}

/// One malformed-request proxy probe: the bytes we sent and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyProbe {
    pub malformation: String,
    #[serde(with = "b64")]
    pub sent: Vec<u8>,
    pub echoed: HttpObservation,
}

/// One vantage-point test execution against one target.
///
/// Relative timestamps inside observations are microseconds from test
/// start; `started_at` is the single absolute UTC anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMeasurement {
    pub vantage: String,
    pub target: TestTarget,
    pub started_at: DateTime<Utc>,
    #[serde(default)]
    pub dns: Vec<DnsObservation>,
    #[serde(default)]
    pub http: Option<HttpObservation>,
    #[serde(default)]
    pub control_http: Option<HttpObservation>,
    #[serde(default)]
    pub tls: Option<TlsObservation>,
    #[serde(default)]
    pub trace: Option<PacketTrace>,
    #[serde(default)]
    pub connect: Option<ConnectProbe>,
    #[serde(default)]
    pub proxy_probes: Vec<ProxyProbe>,
}

impl RawMeasurement {
    /// True when the field-side HTTP fetch produced a response status.
    pub fn response_received(&self) -> bool {
        self.http.as_ref().is_some_and(|h| h.status.is_some())
    }
}

impl Validate for RawMeasurement {
    fn validate(&self) -> Result<(), ModelError> {
        if self.vantage.is_empty() {
            return Err(ModelError::EmptyVantageId);
        }
        self.target.validate()?;
        if self.dns.is_empty()
            && self.http.is_none()
            && self.control_http.is_none()
            && self.tls.is_none()
            && self.trace.is_none()
            && self.connect.is_none()
            && self.proxy_probes.is_empty()
        {
            return Err(ModelError::EmptyMeasurement);
        }
        for d in &self.dns {
            d.validate()?;
        }
        if let Some(h) = &self.http {
            h.validate()?;
        }
        if let Some(h) = &self.control_http {
            h.validate()?;
        }
        if let Some(t) = &self.tls {
            t.validate()?;
        }
        if let Some(t) = &self.trace {
            t.validate()?;
        }
        for p in &self.proxy_probes {
            p.echoed.validate()?;
        }
        Ok(())
    }
}

/// Detector finding categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyKind {
    DnsInjection,
    DnsInconsistent,
    HttpBlockpage,
    HttpTampering,
    HttpProxy,
    TlsMitm,
    TcpSeq,
    TcpTtl,
    TcpRst,
    TcpConnectAsymmetry,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AnomalyKind::DnsInjection => "DNS_INJECTION",
            AnomalyKind::DnsInconsistent => "DNS_INCONSISTENT",
            AnomalyKind::HttpBlockpage => "HTTP_BLOCKPAGE",
            AnomalyKind::HttpTampering => "HTTP_TAMPERING",
            AnomalyKind::HttpProxy => "HTTP_PROXY",
            AnomalyKind::TlsMitm => "TLS_MITM",
            AnomalyKind::TcpSeq => "TCP_SEQ",
            AnomalyKind::TcpTtl => "TCP_TTL",
            AnomalyKind::TcpRst => "TCP_RST",
            AnomalyKind::TcpConnectAsymmetry => "TCP_CONNECT_ASYMMETRY",
        };
        f.write_str(s)
    }
}

/// Whether a finding was corroborated within its measurement or stands
/// alone as unconfirmed evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    Corroborating,
    Standalone,
}

/// Structured pointer into the source measurement backing a finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "obs")]
pub enum ObsRef {
    Dns {
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<usize>,
    },
    Http,
    ControlHttp,
    Tls {
        cert: usize,
    },
    TraceEvent {
        index: usize,
    },
    Connect,
    ProxyProbe {
        index: usize,
    },
}

/// A typed detector finding with evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub confidence: Confidence,
    pub note: String,
    pub refs: Vec<ObsRef>,
}

impl Anomaly {
    /// Checks that every evidence reference resolves to a real index in
    /// the source measurement.
    pub fn validate_against(&self, m: &RawMeasurement) -> Result<(), ModelError> {
        for r in &self.refs {
            let ok = match r {
                ObsRef::Dns { index, response } => m
                    .dns
                    .get(*index)
                    .is_some_and(|d| response.is_none_or(|ri| ri < d.responses.len())),
                ObsRef::Http => m.http.is_some(),
                ObsRef::ControlHttp => m.control_http.is_some(),
                ObsRef::Tls { cert } => m.tls.as_ref().is_some_and(|t| *cert < t.chain.len()),
                ObsRef::TraceEvent { index } => {
                    m.trace.as_ref().is_some_and(|t| *index < t.events.len())
                }
                ObsRef::Connect => m.connect.is_some(),
                ObsRef::ProxyProbe { index } => *index < m.proxy_probes.len(),
            };
            if !ok {
                return Err(ModelError::DanglingEvidence(format!("{r:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    Censored,
    DeadSite,
    Inconclusive,
}

/// Per (vantage point, target) classification.
///
/// `methods` names the blocking techniques behind a censored outcome and
/// is empty otherwise; `evidence` retains every finding, including
/// standalone ones that did not drive the outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub vantage: String,
    pub target: TestTarget,
    pub outcome: Outcome,
    pub methods: BTreeSet<AnomalyKind>,
    #[serde(default)]
    pub evidence: Vec<Anomaly>,
}

impl Verdict {
    pub fn new(
        vantage: String,
        target: TestTarget,
        outcome: Outcome,
        methods: BTreeSet<AnomalyKind>,
        evidence: Vec<Anomaly>,
    ) -> Result<Self, ModelError> {
        let v = Verdict {
            vantage,
            target,
            outcome,
            methods,
            evidence,
        };
        v.validate()?;
        Ok(v)
    }
}

impl Validate for Verdict {
    fn validate(&self) -> Result<(), ModelError> {
        self.target.validate()?;
        match self.outcome {
            Outcome::Censored if self.methods.is_empty() => Err(ModelError::VerdictMethods(
                "censored verdict with empty methods".into(),
            )),
            o if o != Outcome::Censored && !self.methods.is_empty() => Err(
                ModelError::VerdictMethods(format!("outcome {o:?} with non-empty methods")),
            ),
            _ => Ok(()),
        }
    }
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

mod opt_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match bytes {
            Some(b) => s.serialize_some(&STANDARD.encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        match s {
            Some(s) => Ok(Some(STANDARD.decode(s).map_err(serde::de::Error::custom)?)),
            None => Ok(None),
        }
    }
}
