//! The vantage-point test battery.
//!
//! An agent executes tests over two transports: the field path under
//! measurement and a control channel assumed free of on-path
//! interference. In raw mode it ships measurements untouched; in
//! classify mode it attaches the same verdicts the central detectors
//! would produce, so both architectures agree record-for-record.

use chrono::{DateTime, Duration, Utc};
use thiserror::Error;

use crate::detect::{classify_measurement, DetectorConfig};
use crate::fingerprints::FingerprintDb;
use crate::model::{
    ConnectProbe, DnsObservation, HttpObservation, PacketTrace, ProxyProbe, RawMeasurement,
    ReportRecord, ResolverKind, TestTarget, TlsObservation, VantageKind, VantagePoint,
};
use crate::netsim::{ConnectVia, SimError, SimScenario};

/// How long the agent collects DNS responses per query. Must exceed the
/// detector's 2-second rule, which the agent deliberately does not apply.
pub const DNS_COLLECT_WINDOW_MS: u64 = 4000;

/// Redirect-following bound for HTTP tests.
pub const REDIRECT_LIMIT: usize = 10;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("unknown circumvention protocol `{0}`")]
    UnknownProtocol(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl From<SimError> for ProbeError {
    fn from(e: SimError) -> Self {
        ProbeError::Transport(e.to_string())
    }
}

/// Where measurements run: the simulator in tests and deskwork, anything
/// that can answer these calls in the field.
pub trait Transport: Sync {
    fn resolve(&self, qname: &str, resolver: ResolverKind) -> DnsObservation;
    fn fetch_http(
        &self,
        url: &str,
        follow_redirects: bool,
    ) -> Result<(HttpObservation, PacketTrace), ProbeError>;
    fn probe_proxy(&self, malformed: &[u8]) -> HttpObservation;
    fn tls_handshake(&self, host: &str) -> Result<TlsObservation, ProbeError>;
    fn tcp_connect(&self, host: &str, port: u16) -> Result<(bool, PacketTrace), ProbeError>;
    fn tcp_exchange(&self, payload: &[u8]) -> Option<Vec<u8>>;
    /// Deterministic per-target UTC anchor for measurement records.
    fn measurement_clock(&self, target_url: &str) -> DateTime<Utc>;
}

/// Transport backed by a simulated network.
pub struct SimTransport {
    scenario: SimScenario,
    client: VantageKind,
    via: ConnectVia,
}

impl SimTransport {
    /// The field path: full censor stack applies.
    pub fn field(scenario: SimScenario, client: VantageKind) -> Self {
        SimTransport {
            scenario,
            client,
            via: ConnectVia::Direct,
        }
    }

    /// The control channel: same servers, no on-path elements. The
    /// client kind is preserved, so server-side blocking stays visible.
    pub fn control(scenario: &SimScenario, client: VantageKind) -> Self {
        SimTransport {
            scenario: scenario.censor_free_view(),
            client,
            via: ConnectVia::Control,
        }
    }
}

impl Transport for SimTransport {
    fn resolve(&self, qname: &str, resolver: ResolverKind) -> DnsObservation {
        self.scenario.resolve(qname, resolver)
    }

    fn fetch_http(
        &self,
        url: &str,
        follow_redirects: bool,
    ) -> Result<(HttpObservation, PacketTrace), ProbeError> {
        let out = self
            .scenario
            .fetch_http(url, self.client, follow_redirects)?;
        Ok((out.http, out.trace))
    }

    fn probe_proxy(&self, malformed: &[u8]) -> HttpObservation {
        self.scenario.probe_proxy(malformed)
    }

    fn tls_handshake(&self, host: &str) -> Result<TlsObservation, ProbeError> {
        Ok(self.scenario.tls_observation(host)?)
    }

    fn tcp_connect(&self, host: &str, port: u16) -> Result<(bool, PacketTrace), ProbeError> {
        Ok(self.scenario.tcp_connect(host, port, self.via)?)
    }

    fn tcp_exchange(&self, payload: &[u8]) -> Option<Vec<u8>> {
        self.scenario.tcp_exchange(payload).0
    }

    fn measurement_clock(&self, target_url: &str) -> DateTime<Utc> {
        let offset = crate::netsim::scenario_time_offset(target_url);
        self.scenario.epoch + Duration::seconds(offset as i64)
    }
}

/// One deliberately malformed request from the fixed probe corpus.
#[derive(Debug, Clone, Copy)]
pub struct Malformation {
    pub name: &'static str,
    pub bytes: &'static [u8],
}

/// The malformed-request corpus sent by proxy probes. Each entry breaks
/// HTTP grammar in a different documented way.
pub const MALFORMED_CORPUS: [Malformation; 4] = [
    Malformation {
        name: "folded-header",
        bytes: b"GET / HTTP/1.1\r\nHost: echo.test\r\nZ-Pad: one\r\n two\r\na-pad: x\r\n\r\n",
    },
    Malformation {
        name: "bare-lf",
        bytes: b"GET / HTTP/1.1\nHost: echo.test\nZ-Pad: one\na-pad: x\n\n",
    },
    Malformation {
        name: "double-space-request-line",
        bytes: b"GET  /  HTTP/1.1\r\nHost: echo.test\r\nZ-Pad: one\r\na-pad: x\r\n\r\n",
    },
    Malformation {
        name: "mixed-case-headers",
        bytes: b"GET / HTTP/1.1\r\nhOsT: echo.test\r\nZ-pAd: one\r\na-PAD: x\r\n\r\n",
    },
];

/// Circumvention protocols the agent can mimic with a deterministic
/// first-flight byte pattern.
pub const MIMIC_PROTOCOLS: [&str; 9] = [
    "scramblesuit",
    "meek",
    "fteproxy",
    "obfs2",
    "obfs3",
    "obfs4",
    "psiphon",
    "lantern",
    "openvpn",
];

/// The deterministic handshake bytes standing in for a protocol's first
/// flight: a recognizable tag plus a fixed pseudorandom tail.
pub fn mimic_pattern(protocol: &str) -> Option<Vec<u8>> {
    if !MIMIC_PROTOCOLS.contains(&protocol) {
        return None;
    }
    let mut bytes = format!("{protocol}-hs1:").into_bytes();
    let mut h = crate::netsim::fnv64(protocol.as_bytes()) ^ 0x9e37_79b9_7f4a_7c15;
    for _ in 0..24 {
        h = h
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        bytes.push((h >> 56) as u8);
    }
    Some(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentMode {
    Raw,
    Classify,
}

/// Executes the battery for one vantage point over a field and a
/// control transport.
pub struct ProbeAgent<'a> {
    pub vantage: &'a VantagePoint,
    pub field: &'a dyn Transport,
    pub control: &'a dyn Transport,
}

impl<'a> ProbeAgent<'a> {
    pub fn new(
        vantage: &'a VantagePoint,
        field: &'a dyn Transport,
        control: &'a dyn Transport,
    ) -> Self {
        ProbeAgent {
            vantage,
            field,
            control,
        }
    }

    /// Queries all three resolvers concurrently, without waiting between
    /// requests, and keeps responses inside the collection window.
    pub fn run_dns_test(&self, qname: &str) -> Vec<DnsObservation> {
        let kinds = [
            ResolverKind::SystemDefault,
            ResolverKind::PublicAlternate,
            ResolverKind::ControlNonstandardPort,
        ];
        let mut slots: [Option<DnsObservation>; 3] = [None, None, None];
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for kind in kinds {
                let field = self.field;
                handles.push(scope.spawn(move || field.resolve(qname, kind)));
            }
            for (i, handle) in handles.into_iter().enumerate() {
                slots[i] = Some(handle.join().expect("resolver thread"));
            }
        });
        slots
            .into_iter()
            .map(|obs| {
                let mut obs = obs.expect("all resolver slots filled");
                obs.responses
                    .retain(|r| r.arrival < DNS_COLLECT_WINDOW_MS * 1000);
                obs
            })
            .collect()
    }

    pub fn run_http_test(
        &self,
        target: &TestTarget,
        follow_redirects: bool,
    ) -> Result<(HttpObservation, PacketTrace), ProbeError> {
        self.field.fetch_http(&target.url, follow_redirects)
    }

    pub fn run_proxy_probe(&self, malformation: &Malformation) -> ProxyProbe {
        let echoed = self.field.probe_proxy(malformation.bytes);
        ProxyProbe {
            malformation: malformation.name.to_string(),
            sent: malformation.bytes.to_vec(),
            echoed,
        }
    }

    pub fn run_proxy_probes(&self) -> Vec<ProxyProbe> {
        MALFORMED_CORPUS
            .iter()
            .map(|m| self.run_proxy_probe(m))
            .collect()
    }

    pub fn run_tls_test(&self, host: &str) -> Result<TlsObservation, ProbeError> {
        self.field.tls_handshake(host)
    }

    /// Attempts the host directly and over the control channel; the
    /// returned trace is the direct attempt's.
    pub fn run_connect_test(
        &self,
        host: &str,
        port: u16,
    ) -> Result<(bool, bool, PacketTrace), ProbeError> {
        let (direct_ok, trace) = self.field.tcp_connect(host, port)?;
        let (control_ok, _) = self.control.tcp_connect(host, port)?;
        Ok((direct_ok, control_ok, trace))
    }

    /// Sends the protocol's handshake pattern; ok iff it came back
    /// unmodified.
    pub fn run_circumvention_mimic(&self, protocol: &str) -> Result<bool, ProbeError> {
        let pattern =
            mimic_pattern(protocol).ok_or_else(|| ProbeError::UnknownProtocol(protocol.into()))?;
        Ok(self.field.tcp_exchange(&pattern).as_deref() == Some(pattern.as_slice()))
    }

    /// The full battery for one target: DNS and HTTP always, TLS for
    /// https targets, the connect test always, plus the proxy probe
    /// corpus. Failures are recorded inside the measurement.
    pub fn run_target(&self, target: &TestTarget) -> RawMeasurement {
        let host = target.host();
        let dns = self.run_dns_test(&host);
        let (http, trace) = match self.run_http_test(target, true) {
            Ok((obs, trace)) => (Some(obs), Some(trace)),
            Err(_) => (None, None),
        };
        let control_http = self
            .control
            .fetch_http(&target.url, true)
            .ok()
            .map(|(o, _)| o);
        let tls = if target.is_https() {
            self.run_tls_test(&host).ok()
        } else {
            None
        };
        let connect =
            self.run_connect_test(&host, target.port())
                .ok()
                .map(|(direct_ok, control_ok, _)| ConnectProbe {
                    direct_ok,
                    control_ok,
                });
        let proxy_probes = self.run_proxy_probes();
        RawMeasurement {
            vantage: self.vantage.id.clone(),
            target: target.clone(),
            started_at: self.field.measurement_clock(&target.url),
            dns,
            http,
            control_http,
            tls,
            trace,
            connect,
            proxy_probes,
        }
    }

    /// One measurement per target, input order preserved; the batch
    /// never aborts on per-target failures.
    pub fn run_baseline(&self, targets: &[TestTarget]) -> Vec<RawMeasurement> {
        targets.iter().map(|t| self.run_target(t)).collect()
    }

    /// Baseline plus record assembly for the selected analysis placement.
    pub fn run_session(
        &self,
        targets: &[TestTarget],
        mode: AgentMode,
        db: &FingerprintDb,
        config: &DetectorConfig,
    ) -> Vec<ReportRecord> {
        self.run_baseline(targets)
            .into_iter()
            .map(|m| match mode {
                AgentMode::Raw => ReportRecord::raw(m),
                AgentMode::Classify => {
                    let verdict = classify_measurement(&m, db, config);
                    ReportRecord::classified(m, verdict)
                }
            })
            .collect()
    }
}
