//! Simulation operations: DNS resolution, HTTP fetches with packet
//! traces, proxy probes, TLS handshakes, TCP connects, and raw byte
//! exchanges for protocol mimics.

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fingerprints::ProxyProduct;
use crate::model::{
    flags, CertSummary, Direction, DnsObservation, DnsResponse, FiveTuple, HttpObservation,
    PacketEvent, PacketTrace, ResolverKind, TcpFlag, TlsObservation, TransportProtocol,
    VantageKind, DNS_RCODE_NOERROR, DNS_RCODE_NXDOMAIN,
};
use crate::trace::parse_response_head;

use super::{BlockMode, ConnectVia, MitmCert, PathElement, ServerBehavior, SimError, SimScenario};

/// Hostname the simulated client appears as in five-tuples.
pub const SIM_CLIENT_HOST: &str = "client.sim";
/// Implicit echo endpoint used by proxy probes and mimic exchanges.
pub const SIM_ECHO_HOST: &str = "echo.test";
/// Port the raw-byte echo service listens on.
pub const SIM_MIMIC_PORT: u16 = 7;

const CLIENT_TTL: u8 = 64;
const DEFAULT_PATH_TTL: u8 = 52;
const DEFAULT_LATENCY_MS: u64 = 30;
const PROC_STEP_US: u64 = 300;
const SEGMENT_STEP_US: u64 = 150;
const MAX_SEGMENT: usize = 1200;
const SYN_RETRIES_US: [u64; 3] = [0, 1_000_000, 3_000_000];
const REDIRECT_STATUSES: [u16; 5] = [301, 302, 303, 307, 308];

/// Result of one simulated HTTP test.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub http: HttpObservation,
    pub trace: PacketTrace,
}

#[derive(Debug, Clone, Copy)]
enum SegmentStyle {
    Normal,
    /// Benign sequence-number gap between segments.
    Gap(u32),
    /// SYN-ACK/data IPID mismatch plus a conflicting seq overlap.
    Quirk,
}

impl SimScenario {
    fn stream_rng(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ super::fnv64(label.as_bytes()))
    }

    /// Resolves `qname` at the given resolver. Injectors race forged
    /// answers against the honest response unless the query went to the
    /// control resolver on its non-standard port.
    pub fn resolve(&self, qname: &str, resolver: ResolverKind) -> DnsObservation {
        let latency_ms = match resolver {
            ResolverKind::SystemDefault => self.resolvers.system_latency_ms,
            ResolverKind::PublicAlternate => self.resolvers.public_latency_ms,
            ResolverKind::ControlNonstandardPort => self.resolvers.control_latency_ms,
        };
        let mut responses: Vec<DnsResponse> = Vec::new();
        if resolver != ResolverKind::ControlNonstandardPort {
            for el in &self.path_elements {
                if let PathElement::DnsInjector {
                    match_domains,
                    fake_ips,
                    injection_delay_ms,
                } = el
                {
                    if match_domains.iter().any(|d| d == qname) {
                        responses.push(DnsResponse {
                            arrival: injection_delay_ms * 1000,
                            answers: fake_ips.clone(),
                            rcode: DNS_RCODE_NOERROR,
                        });
                    }
                }
            }
        }
        match self.resolvers.answers.get(qname) {
            Some(ips) => responses.push(DnsResponse {
                arrival: latency_ms * 1000,
                answers: ips.clone(),
                rcode: DNS_RCODE_NOERROR,
            }),
            None => responses.push(DnsResponse {
                arrival: latency_ms * 1000,
                answers: Vec::new(),
                rcode: DNS_RCODE_NXDOMAIN,
            }),
        }
        // Stable by arrival; forged answers were pushed first and so win
        // exact ties, like they would on the wire.
        responses.sort_by_key(|r| r.arrival);
        DnsObservation {
            qname: qname.to_string(),
            resolver,
            responses,
        }
    }

    /// Fetches a URL as `client` would, following redirects up to ten
    /// hops. Censor elements apply in path order; the trace reflects the
    /// final connection.
    pub fn fetch_http(
        &self,
        url: &str,
        client: VantageKind,
        follow_redirects: bool,
    ) -> Result<FetchOutcome, SimError> {
        const REDIRECT_LIMIT: usize = 10;
        let mut chain: Vec<String> = Vec::new();
        let mut current = url.to_string();
        let mut hop = 0usize;
        let mut outcome = self.fetch_once(&current, client, hop)?;
        while follow_redirects && hop < REDIRECT_LIMIT {
            let Some(location) = redirect_location(&outcome.http) else {
                break;
            };
            let next = match url::Url::parse(&current).and_then(|base| base.join(&location)) {
                Ok(u) => u.to_string(),
                Err(_) => break,
            };
            chain.push(next.clone());
            hop += 1;
            match self.fetch_once(&next, client, hop) {
                Ok(o) => {
                    current = next;
                    outcome = o;
                }
                // Redirect target outside the scenario: record the hop,
                // keep the last reachable response.
                Err(SimError::UnknownHost(_)) => break,
                Err(e) => return Err(e),
            }
        }
        outcome.http.redirect_chain = chain;
        Ok(outcome)
    }

    fn fetch_once(
        &self,
        url: &str,
        client: VantageKind,
        hop: usize,
    ) -> Result<FetchOutcome, SimError> {
        let parsed = url::Url::parse(url).map_err(|e| SimError::Invalid(e.to_string()))?;
        let host = parsed
            .host_str()
            .ok_or_else(|| SimError::UnknownHost(url.to_string()))?
            .to_string();
        let port = parsed.port_or_known_default().unwrap_or(80);
        let path = if parsed.path().is_empty() {
            "/".to_string()
        } else {
            parsed.path().to_string()
        };
        let server = self
            .servers
            .get(&host)
            .ok_or_else(|| SimError::UnknownHost(host.clone()))?;

        let label = format!("http:{hop}:{client:?}:{url}");
        let mut rng = self.stream_rng(&label);
        let mut tb =
            StreamBuilder::new(&mut rng, &host, port, server.inbound_ttl, server.latency_ms);
        let request = build_request(&path, &host);
        let observe = |delivered: &[u8]| observation_from(&path, &host, delivered);

        // Connection-level interference first, in path order.
        for el in &self.path_elements {
            if let PathElement::IpBlocker { match_hosts, mode } = el {
                if match_hosts.iter().any(|h| h == &host) {
                    return Ok(match mode {
                        BlockMode::DropSyn => FetchOutcome {
                            http: observe(&[]),
                            trace: tb.syn_retries(),
                        },
                        BlockMode::RstOnSyn => FetchOutcome {
                            http: observe(&[]),
                            trace: tb.syn_then_rst(),
                        },
                    });
                }
            }
        }
        if matches!(server.behavior, ServerBehavior::Dead {}) {
            return Ok(FetchOutcome {
                http: observe(&[]),
                trace: tb.syn_retries(),
            });
        }

        tb.handshake(segment_style(&server.behavior));
        tb.send(&request);

        if let ServerBehavior::VpnBlocker {
            blocked_client_kinds,
            ..
        } = &server.behavior
        {
            if blocked_client_kinds.contains(&client) {
                tb.inbound_rst(server.inbound_ttl);
                return Ok(FetchOutcome {
                    http: observe(&[]),
                    trace: tb.finish(),
                });
            }
        }

        let (status, body, extra_headers) = server.behavior.page();
        let mut response = build_response(status, body.as_bytes(), "text/html", extra_headers);

        // Response-phase elements, in path order.
        let mut rst_ttl: Option<u8> = None;
        for el in &self.path_elements {
            match el {
                PathElement::BlockpageProxy {
                    match_domains,
                    page_body,
                    status,
                } if match_domains.iter().any(|d| d == &host) => {
                    response = build_response(*status, page_body.as_bytes(), "text/html", &[]);
                }
                // Transparent proxies only see cleartext HTTP.
                PathElement::TransparentProxy { fingerprint } if port != 443 => {
                    response = apply_proxy_response(*fingerprint, &response);
                }
                PathElement::RstInjector {
                    match_domains,
                    match_keywords,
                    ttl_offset,
                } => {
                    let hit = match_domains.iter().any(|d| d == &host)
                        || match_keywords
                            .iter()
                            .any(|k| contains_bytes(&request, k.as_bytes()));
                    if hit && rst_ttl.is_none() {
                        rst_ttl = Some(offset_ttl(server.inbound_ttl, *ttl_offset));
                    }
                }
                _ => {}
            }
        }

        let style = segment_style(&server.behavior);
        let outcome = match rst_ttl {
            Some(ttl) => {
                let delivered = &response[..(response.len() / 2).max(1).min(response.len())];
                tb.receive(delivered, style);
                tb.inbound_rst(ttl);
                FetchOutcome {
                    http: observe(delivered),
                    trace: tb.finish(),
                }
            }
            None => {
                tb.receive(&response, style);
                tb.close();
                FetchOutcome {
                    http: observe(&response),
                    trace: tb.finish(),
                }
            }
        };
        Ok(outcome)
    }

    /// Sends a deliberately malformed request to the echo endpoint. With
    /// no transparent proxy on the path, the echoed body is byte-equal
    /// to what was sent.
    pub fn probe_proxy(&self, malformed: &[u8]) -> HttpObservation {
        let request_line = first_line(malformed);
        let mut blocked = false;
        let mut bytes = malformed.to_vec();
        let mut via: Vec<(String, String)> = Vec::new();
        for el in &self.path_elements {
            match el {
                PathElement::TransparentProxy { fingerprint } => {
                    bytes = fingerprint.transform_request(&bytes);
                    via.push(fingerprint.via_header());
                }
                PathElement::RstInjector { match_keywords, .. } => {
                    if match_keywords
                        .iter()
                        .any(|k| contains_bytes(&bytes, k.as_bytes()))
                    {
                        blocked = true;
                    }
                }
                PathElement::IpBlocker { match_hosts, .. }
                    if match_hosts.iter().any(|h| h == SIM_ECHO_HOST) =>
                {
                    blocked = true;
                }
                _ => {}
            }
        }
        if blocked {
            return HttpObservation {
                request_line,
                request_headers: Vec::new(),
                redirect_chain: Vec::new(),
                status: None,
                response_headers: Vec::new(),
                body: None,
                body_len: 0,
            };
        }
        let mut response_headers = vec![
            (
                "Content-Type".to_string(),
                "application/octet-stream".to_string(),
            ),
            ("Content-Length".to_string(), bytes.len().to_string()),
        ];
        response_headers.extend(via);
        HttpObservation {
            request_line,
            request_headers: Vec::new(),
            redirect_chain: Vec::new(),
            status: Some(200),
            response_headers,
            body_len: bytes.len() as u64,
            body: Some(bytes),
        }
    }

    /// TLS handshake with `host`; a matching MITM element substitutes
    /// its certificate for the server's.
    pub fn tls_observation(&self, host: &str) -> Result<TlsObservation, SimError> {
        let server = self
            .servers
            .get(host)
            .ok_or_else(|| SimError::UnknownHost(host.to_string()))?;
        if matches!(server.behavior, ServerBehavior::Dead {}) {
            return Ok(TlsObservation {
                handshake_completed: false,
                chain: Vec::new(),
            });
        }
        for el in &self.path_elements {
            if let PathElement::TlsMitm {
                match_domains,
                cert,
            } = el
            {
                if match_domains.iter().any(|d| d == host) {
                    return Ok(TlsObservation {
                        handshake_completed: true,
                        chain: vec![self.mitm_cert(host, *cert)],
                    });
                }
            }
        }
        Ok(TlsObservation {
            handshake_completed: true,
            chain: vec![CertSummary {
                subject: format!("CN={host}"),
                issuer: "CN=SimTrust Root CA".to_string(),
                not_before: self.epoch - Duration::days(90),
                not_after: self.epoch + Duration::days(275),
                self_signed: false,
                issuer_trusted: true,
            }],
        })
    }

    fn mitm_cert(&self, host: &str, cert: MitmCert) -> CertSummary {
        match cert {
            MitmCert::SelfSigned => CertSummary {
                subject: format!("CN={host}"),
                issuer: format!("CN={host}"),
                not_before: self.epoch - Duration::days(30),
                not_after: self.epoch + Duration::days(335),
                self_signed: true,
                issuer_trusted: false,
            },
            MitmCert::UntrustedIssuer => CertSummary {
                subject: format!("CN={host}"),
                issuer: "CN=National Gateway Filtering CA".to_string(),
                not_before: self.epoch - Duration::days(30),
                not_after: self.epoch + Duration::days(335),
                self_signed: false,
                issuer_trusted: false,
            },
            MitmCert::Expired => CertSummary {
                subject: format!("CN={host}"),
                issuer: "CN=SimTrust Root CA".to_string(),
                not_before: self.epoch - Duration::days(400),
                not_after: self.epoch - Duration::days(10),
                self_signed: false,
                issuer_trusted: true,
            },
        }
    }

    /// TCP connect to host:port, either directly (subject to on-path
    /// blockers) or over the control channel (censor-free).
    pub fn tcp_connect(
        &self,
        host: &str,
        port: u16,
        via: ConnectVia,
    ) -> Result<(bool, PacketTrace), SimError> {
        let server = self
            .servers
            .get(host)
            .ok_or_else(|| SimError::UnknownHost(host.to_string()))?;
        let label = format!("connect:{via:?}:{host}:{port}");
        let mut rng = self.stream_rng(&label);
        let mut tb =
            StreamBuilder::new(&mut rng, host, port, server.inbound_ttl, server.latency_ms);
        if via == ConnectVia::Direct {
            for el in &self.path_elements {
                if let PathElement::IpBlocker { match_hosts, mode } = el {
                    if match_hosts.iter().any(|h| h == host) {
                        return Ok(match mode {
                            BlockMode::DropSyn => (false, tb.syn_retries()),
                            BlockMode::RstOnSyn => (false, tb.syn_then_rst()),
                        });
                    }
                }
            }
        }
        if matches!(server.behavior, ServerBehavior::Dead {}) {
            return Ok((false, tb.syn_retries()));
        }
        tb.handshake(SegmentStyle::Normal);
        tb.client_abort();
        Ok((true, tb.finish()))
    }

    /// Raw byte exchange with the echo endpoint, as circumvention-mimic
    /// handshakes use. Returns the echoed bytes, or None when the path
    /// killed the stream.
    pub fn tcp_exchange(&self, payload: &[u8]) -> (Option<Vec<u8>>, PacketTrace) {
        let label = format!("exchange:{:016x}", super::fnv64(payload));
        let mut rng = self.stream_rng(&label);
        let mut tb = StreamBuilder::new(
            &mut rng,
            SIM_ECHO_HOST,
            SIM_MIMIC_PORT,
            DEFAULT_PATH_TTL,
            DEFAULT_LATENCY_MS,
        );
        for el in &self.path_elements {
            match el {
                PathElement::IpBlocker { match_hosts, mode } => {
                    if match_hosts.iter().any(|h| h == SIM_ECHO_HOST) {
                        return match mode {
                            BlockMode::DropSyn => (None, tb.syn_retries()),
                            BlockMode::RstOnSyn => (None, tb.syn_then_rst()),
                        };
                    }
                }
                PathElement::RstInjector {
                    match_domains,
                    match_keywords,
                    ttl_offset,
                } => {
                    let hit = match_domains.iter().any(|d| d == SIM_ECHO_HOST)
                        || match_keywords
                            .iter()
                            .any(|k| contains_bytes(payload, k.as_bytes()));
                    if hit {
                        tb.handshake(SegmentStyle::Normal);
                        tb.send(payload);
                        tb.inbound_rst(offset_ttl(DEFAULT_PATH_TTL, *ttl_offset));
                        return (None, tb.finish());
                    }
                }
                _ => {}
            }
        }
        tb.handshake(SegmentStyle::Normal);
        tb.send(payload);
        tb.receive(payload, SegmentStyle::Normal);
        tb.close();
        (Some(payload.to_vec()), tb.finish())
    }
}

fn segment_style(behavior: &ServerBehavior) -> SegmentStyle {
    match behavior {
        ServerBehavior::QuirkyLoadBalancer { seq_gap, .. } => SegmentStyle::Gap(*seq_gap),
        ServerBehavior::ChineseQuirk { .. } => SegmentStyle::Quirk,
        _ => SegmentStyle::Normal,
    }
}

fn offset_ttl(base: u8, offset: i16) -> u8 {
    (base as i16 + offset).clamp(1, 255) as u8
}

fn contains_bytes(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn first_line(bytes: &[u8]) -> String {
    let end = bytes
        .iter()
        .position(|&b| b == b'\r' || b == b'\n')
        .unwrap_or(bytes.len());
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}

fn build_request(path: &str, host: &str) -> Vec<u8> {
    format!(
        "GET {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: vantage-probe/0.1\r\nAccept: */*\r\n\r\n"
    )
    .into_bytes()
}

fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => "OK",
        301 => "Moved Permanently",
        302 => "Found",
        303 => "See Other",
        307 => "Temporary Redirect",
        308 => "Permanent Redirect",
        403 => "Forbidden",
        404 => "Not Found",
        451 => "Unavailable For Legal Reasons",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn build_response(
    status: u16,
    body: &[u8],
    content_type: &str,
    extra_headers: &[(String, String)],
) -> Vec<u8> {
    let mut head = format!(
        "HTTP/1.1 {status} {}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\n",
        reason_phrase(status),
        body.len()
    );
    for (name, value) in extra_headers {
        head.push_str(&format!("{name}: {value}\r\n"));
    }
    head.push_str("\r\n");
    let mut out = head.into_bytes();
    out.extend_from_slice(body);
    out
}

/// Product response side-effects: a Via header always, a body banner on
/// HTML content (with Content-Length recomputed, as real proxies do).
fn apply_proxy_response(product: ProxyProduct, response: &[u8]) -> Vec<u8> {
    let Some(head) = parse_response_head(response) else {
        return response.to_vec();
    };
    let body = &response[head.head_len..];
    let is_html = head
        .headers
        .iter()
        .any(|(n, v)| n.eq_ignore_ascii_case("content-type") && v.contains("text/html"));
    let mut new_body = Vec::new();
    if is_html {
        new_body.extend_from_slice(product.body_banner());
    }
    new_body.extend_from_slice(body);
    let mut headers: Vec<(String, String)> = head
        .headers
        .iter()
        .map(|(n, v)| {
            if n.eq_ignore_ascii_case("content-length") {
                (n.clone(), new_body.len().to_string())
            } else {
                (n.clone(), v.clone())
            }
        })
        .collect();
    let (vn, vv) = product.via_header();
    headers.push((vn, vv));
    let mut out = format!(
        "HTTP/1.1 {} {}\r\n",
        head.status,
        reason_phrase(head.status)
    );
    for (n, v) in &headers {
        out.push_str(&format!("{n}: {v}\r\n"));
    }
    out.push_str("\r\n");
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&new_body);
    bytes
}

fn redirect_location(http: &HttpObservation) -> Option<String> {
    let status = http.status?;
    if !REDIRECT_STATUSES.contains(&status) {
        return None;
    }
    http.header("Location").map(|v| v.to_string())
}

/// Builds the client-side observation from delivered response bytes.
fn observation_from(path: &str, host: &str, delivered: &[u8]) -> HttpObservation {
    let request_line = format!("GET {path} HTTP/1.1");
    let request_headers = vec![
        ("Host".to_string(), host.to_string()),
        ("User-Agent".to_string(), "vantage-probe/0.1".to_string()),
        ("Accept".to_string(), "*/*".to_string()),
    ];
    match parse_response_head(delivered) {
        Some(head) => {
            let body = delivered[head.head_len..].to_vec();
            HttpObservation {
                request_line,
                request_headers,
                redirect_chain: Vec::new(),
                status: Some(head.status),
                response_headers: head.headers,
                body_len: body.len() as u64,
                body: Some(body),
            }
        }
        None => HttpObservation {
            request_line,
            request_headers,
            redirect_chain: Vec::new(),
            status: None,
            response_headers: Vec::new(),
            body: None,
            body_len: 0,
        },
    }
}

/// Emits one TCP stream's packet events with deterministic timing,
/// sequence numbers, and IPIDs.
struct StreamBuilder {
    events: Vec<PacketEvent>,
    five: FiveTuple,
    t: u64,
    one_way_us: u64,
    server_ttl: u8,
    client_isn: u32,
    server_isn: u32,
    client_next: u32,
    server_next: u32,
    client_ipid: u16,
    server_ipid: u16,
    server_acked: u32,
}

impl StreamBuilder {
    fn new(rng: &mut ChaCha8Rng, host: &str, port: u16, server_ttl: u8, latency_ms: u64) -> Self {
        let client_isn: u32 = rng.gen();
        let server_isn: u32 = rng.gen();
        StreamBuilder {
            events: Vec::new(),
            five: FiveTuple {
                src_host: SIM_CLIENT_HOST.to_string(),
                src_port: 40000 + (rng.gen::<u16>() % 20000),
                dst_host: host.to_string(),
                dst_port: port,
                protocol: TransportProtocol::Tcp,
            },
            t: 0,
            one_way_us: latency_ms * 1000,
            server_ttl,
            client_isn,
            server_isn,
            client_next: client_isn.wrapping_add(1),
            server_next: server_isn.wrapping_add(1),
            client_ipid: rng.gen(),
            server_ipid: rng.gen(),
            server_acked: 0,
        }
    }

    fn push_out(&mut self, seq: u32, ack: u32, fl: &[TcpFlag], payload: Option<Vec<u8>>) {
        self.client_ipid = self.client_ipid.wrapping_add(1);
        self.events.push(PacketEvent {
            t: self.t,
            direction: Direction::Outbound,
            ip_ttl: CLIENT_TTL,
            ip_id: self.client_ipid,
            tcp_seq: seq,
            tcp_ack: ack,
            flags: flags(fl),
            payload_len: payload.as_ref().map_or(0, |p| p.len() as u32),
            payload,
        });
    }

    fn push_in(&mut self, ttl: u8, seq: u32, ack: u32, fl: &[TcpFlag], payload: Option<Vec<u8>>) {
        self.server_ipid = self.server_ipid.wrapping_add(1);
        self.events.push(PacketEvent {
            t: self.t,
            direction: Direction::Inbound,
            ip_ttl: ttl,
            ip_id: self.server_ipid,
            tcp_seq: seq,
            tcp_ack: ack,
            flags: flags(fl),
            payload_len: payload.as_ref().map_or(0, |p| p.len() as u32),
            payload,
        });
    }

    /// Unanswered SYNs with kernel-style backoff.
    fn syn_retries(mut self) -> PacketTrace {
        for at in SYN_RETRIES_US {
            self.t = at;
            self.push_out(self.client_isn, 0, &[TcpFlag::Syn], None);
        }
        self.finish()
    }

    /// SYN answered by an immediate reset.
    fn syn_then_rst(mut self) -> PacketTrace {
        self.push_out(self.client_isn, 0, &[TcpFlag::Syn], None);
        self.t += 2 * self.one_way_us;
        self.push_in(
            self.server_ttl,
            0,
            self.client_isn.wrapping_add(1),
            &[TcpFlag::Rst, TcpFlag::Ack],
            None,
        );
        self.finish()
    }

    fn handshake(&mut self, style: SegmentStyle) {
        self.push_out(self.client_isn, 0, &[TcpFlag::Syn], None);
        self.t += 2 * self.one_way_us;
        self.push_in(
            self.server_ttl,
            self.server_isn,
            self.client_isn.wrapping_add(1),
            &[TcpFlag::Syn, TcpFlag::Ack],
            None,
        );
        if matches!(style, SegmentStyle::Quirk) {
            // SYN-ACK carried one IPID population, data will carry another.
            self.server_ipid ^= 0x5a5a;
        }
        self.t += PROC_STEP_US;
        self.push_out(self.client_next, self.server_next, &[TcpFlag::Ack], None);
    }

    fn send(&mut self, payload: &[u8]) {
        self.t += PROC_STEP_US;
        let seq = self.client_next;
        self.client_next = seq.wrapping_add(payload.len() as u32);
        self.push_out(
            seq,
            self.server_next,
            &[TcpFlag::Psh, TcpFlag::Ack],
            Some(payload.to_vec()),
        );
        self.server_acked = self.client_next;
    }

    fn receive(&mut self, bytes: &[u8], style: SegmentStyle) {
        self.t += 2 * self.one_way_us + PROC_STEP_US;
        match style {
            SegmentStyle::Quirk if bytes.len() >= 2 => self.receive_quirk(bytes),
            SegmentStyle::Gap(gap) => self.receive_chunks(bytes, gap),
            _ => self.receive_chunks(bytes, 0),
        }
    }

    fn receive_chunks(&mut self, bytes: &[u8], gap: u32) {
        let mut offset = 0usize;
        let mut first = true;
        while offset < bytes.len() {
            let end = (offset + MAX_SEGMENT).min(bytes.len());
            if !first {
                self.t += SEGMENT_STEP_US;
                self.server_next = self.server_next.wrapping_add(gap);
            }
            let chunk = bytes[offset..end].to_vec();
            let seq = self.server_next;
            self.server_next = seq.wrapping_add(chunk.len() as u32);
            let last = end == bytes.len();
            let mut fl = vec![TcpFlag::Ack];
            if last {
                fl.push(TcpFlag::Psh);
            }
            self.push_in(self.server_ttl, seq, self.server_acked, &fl, Some(chunk));
            offset = end;
            first = false;
        }
    }

    /// Two-segment delivery where the second segment re-covers the tail
    /// of the first with conflicting bytes before continuing.
    fn receive_quirk(&mut self, bytes: &[u8]) {
        let n1 = bytes.len().div_ceil(2).min(MAX_SEGMENT);
        let overlap = n1.clamp(1, 100);
        let seg1 = bytes[..n1].to_vec();
        let seq1 = self.server_next;
        self.push_in(
            self.server_ttl,
            seq1,
            self.server_acked,
            &[TcpFlag::Ack],
            Some(seg1),
        );
        let mut seg2: Vec<u8> = bytes[n1 - overlap..n1].iter().map(|b| b ^ 0xff).collect();
        seg2.extend_from_slice(&bytes[n1..]);
        self.t += SEGMENT_STEP_US;
        let seq2 = seq1.wrapping_add((n1 - overlap) as u32);
        self.server_next = seq2.wrapping_add(seg2.len() as u32);
        if seg2.len() <= MAX_SEGMENT {
            self.push_in(
                self.server_ttl,
                seq2,
                self.server_acked,
                &[TcpFlag::Psh, TcpFlag::Ack],
                Some(seg2),
            );
        } else {
            let mut offset = 0usize;
            let mut seq = seq2;
            while offset < seg2.len() {
                let end = (offset + MAX_SEGMENT).min(seg2.len());
                let chunk = seg2[offset..end].to_vec();
                if offset > 0 {
                    self.t += SEGMENT_STEP_US;
                }
                let last = end == seg2.len();
                let mut fl = vec![TcpFlag::Ack];
                if last {
                    fl.push(TcpFlag::Psh);
                }
                self.push_in(self.server_ttl, seq, self.server_acked, &fl, Some(chunk));
                seq = seq.wrapping_add((end - offset) as u32);
                offset = end;
            }
        }
    }

    fn inbound_rst(&mut self, ttl: u8) {
        self.t += SEGMENT_STEP_US;
        self.push_in(
            ttl,
            self.server_next,
            self.server_acked,
            &[TcpFlag::Rst],
            None,
        );
    }

    /// Graceful server-initiated close.
    fn close(&mut self) {
        self.t += SEGMENT_STEP_US;
        self.push_in(
            self.server_ttl,
            self.server_next,
            self.server_acked,
            &[TcpFlag::Fin, TcpFlag::Ack],
            None,
        );
        self.t += PROC_STEP_US;
        self.push_out(
            self.client_next,
            self.server_next.wrapping_add(1),
            &[TcpFlag::Fin, TcpFlag::Ack],
            None,
        );
        self.t += 2 * self.one_way_us;
        self.push_in(
            self.server_ttl,
            self.server_next.wrapping_add(1),
            self.client_next.wrapping_add(1),
            &[TcpFlag::Ack],
            None,
        );
    }

    /// Client tears the probe connection down without waiting.
    fn client_abort(&mut self) {
        self.t += PROC_STEP_US;
        self.push_out(self.client_next, self.server_next, &[TcpFlag::Rst], None);
    }

    fn finish(self) -> PacketTrace {
        PacketTrace::new(self.five, self.events).expect("builder emits ordered client streams")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{ResolverSpec, ServerEntry};
    use crate::trace::{find_seq_conflict, inbound_ttl_mode, premature_rst};
    use std::collections::BTreeMap;

    fn base_scenario() -> SimScenario {
        let mut servers = BTreeMap::new();
        servers.insert(
            "example.com".to_string(),
            ServerEntry {
                behavior: ServerBehavior::Honest {
                    body: "<html><body>hello world from the origin server</body></html>"
                        .to_string(),
                    status: 200,
                    headers: vec![],
                },
                inbound_ttl: 52,
                latency_ms: 30,
            },
        );
        let mut resolvers = ResolverSpec::default();
        resolvers
            .answers
            .insert("example.com".to_string(), vec!["93.184.216.34".to_string()]);
        SimScenario {
            seed: 11,
            epoch: chrono::TimeZone::with_ymd_and_hms(&chrono::Utc, 2020, 6, 1, 0, 0, 0).unwrap(),
            servers,
            resolvers,
            path_elements: vec![],
        }
    }

    #[test]
    fn honest_resolution_single_response() {
        let sc = base_scenario();
        let obs = sc.resolve("example.com", ResolverKind::SystemDefault);
        assert_eq!(obs.responses.len(), 1);
        assert_eq!(obs.responses[0].answers, ["93.184.216.34"]);
        assert_eq!(obs.responses[0].arrival, 30_000);
    }

    #[test]
    fn unknown_domain_yields_nxdomain() {
        let sc = base_scenario();
        let obs = sc.resolve("missing.example", ResolverKind::SystemDefault);
        assert_eq!(obs.responses.len(), 1);
        assert_eq!(obs.responses[0].rcode, DNS_RCODE_NXDOMAIN);
    }

    #[test]
    fn injector_ordering_follows_configured_latencies() {
        let mut sc = base_scenario();
        sc.path_elements.push(PathElement::DnsInjector {
            match_domains: vec!["example.com".into()],
            fake_ips: vec!["10.10.0.1".into()],
            injection_delay_ms: 500,
        });
        // Honest latency 800ms > injection delay 500ms: forged first.
        sc.resolvers.system_latency_ms = 800;
        let obs = sc.resolve("example.com", ResolverKind::SystemDefault);
        assert_eq!(obs.responses.len(), 2);
        assert_eq!(obs.responses[0].answers, ["10.10.0.1"]);
        assert_eq!(obs.responses[1].answers, ["93.184.216.34"]);
        // Honest latency 30ms < injection delay: honest first.
        sc.resolvers.system_latency_ms = 30;
        let obs = sc.resolve("example.com", ResolverKind::SystemDefault);
        assert_eq!(obs.responses[0].answers, ["93.184.216.34"]);
        assert_eq!(obs.responses[1].answers, ["10.10.0.1"]);
    }

    #[test]
    fn control_port_bypasses_injection() {
        let mut sc = base_scenario();
        sc.path_elements.push(PathElement::DnsInjector {
            match_domains: vec!["example.com".into()],
            fake_ips: vec!["10.10.0.1".into()],
            injection_delay_ms: 10,
        });
        let obs = sc.resolve("example.com", ResolverKind::ControlNonstandardPort);
        assert_eq!(obs.responses.len(), 1);
        assert_eq!(obs.responses[0].answers, ["93.184.216.34"]);
    }

    #[test]
    fn honest_fetch_consistent_ttls_and_seqs() {
        let sc = base_scenario();
        let out = sc
            .fetch_http("http://example.com/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(out.http.status, Some(200));
        let body = out.http.body.as_ref().unwrap();
        assert!(body.windows(11).any(|w| w == b"hello world"));
        let ttls: Vec<u8> = out.trace.inbound().map(|e| e.ip_ttl).collect();
        assert!(ttls.iter().all(|&t| t == 52));
        assert!(find_seq_conflict(&out.trace).is_none());
        assert!(premature_rst(&out.trace).is_none());
    }

    #[test]
    fn rst_injector_ttl_readback() {
        let mut sc = base_scenario();
        sc.path_elements.push(PathElement::RstInjector {
            match_domains: vec!["example.com".into()],
            match_keywords: vec![],
            ttl_offset: -3,
        });
        let out = sc
            .fetch_http("http://example.com/", VantageKind::Volunteer, true)
            .unwrap();
        let mode = inbound_ttl_mode(&out.trace).unwrap();
        let rst = out
            .trace
            .inbound()
            .find(|e| e.has(TcpFlag::Rst))
            .expect("rst present");
        assert_eq!(mode as i16 - rst.ip_ttl as i16, 3);
        assert!(premature_rst(&out.trace).is_some());
    }

    #[test]
    fn blockpage_replaces_body_regardless_of_server() {
        let mut sc = base_scenario();
        sc.path_elements.push(PathElement::BlockpageProxy {
            match_domains: vec!["example.com".into()],
            page_body: "<html>blocked by national gateway</html>".into(),
            status: 403,
        });
        let out = sc
            .fetch_http("http://example.com/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(out.http.status, Some(403));
        assert_eq!(
            out.http.body.as_deref(),
            Some(b"<html>blocked by national gateway</html>".as_slice())
        );
    }

    #[test]
    fn dead_server_absent_status_and_syn_retries() {
        let mut sc = base_scenario();
        sc.servers.insert(
            "dead.example".into(),
            ServerEntry {
                behavior: ServerBehavior::Dead {},
                inbound_ttl: 52,
                latency_ms: 30,
            },
        );
        let out = sc
            .fetch_http("http://dead.example/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(out.http.status, None);
        assert_eq!(out.trace.events.len(), 3);
        assert!(out.trace.events.iter().all(|e| e.has(TcpFlag::Syn)));
    }

    #[test]
    fn quirky_load_balancer_gaps_but_full_body() {
        let mut sc = base_scenario();
        let long_body = "x".repeat(3000);
        sc.servers.insert(
            "lb.example".into(),
            ServerEntry {
                behavior: ServerBehavior::QuirkyLoadBalancer {
                    seq_gap: 1000,
                    body: long_body.clone(),
                    status: 200,
                },
                inbound_ttl: 52,
                latency_ms: 30,
            },
        );
        let out = sc
            .fetch_http("http://lb.example/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(out.http.status, Some(200));
        assert_eq!(out.http.body_len, 3000);
        assert!(find_seq_conflict(&out.trace).is_none());
        // gaps visible in raw sequence numbers
        let data: Vec<(u32, u32)> = out
            .trace
            .inbound()
            .filter(|e| e.payload_len > 0)
            .map(|e| (e.tcp_seq, e.payload_len))
            .collect();
        assert!(data
            .windows(2)
            .any(|w| w[1].0 != w[0].0.wrapping_add(w[0].1)));
    }

    #[test]
    fn chinese_quirk_overlap_and_ipid_shift() {
        let mut sc = base_scenario();
        sc.servers.insert(
            "cn.example".into(),
            ServerEntry {
                behavior: ServerBehavior::ChineseQuirk {
                    body: "y".repeat(1500),
                    status: 200,
                },
                inbound_ttl: 52,
                latency_ms: 30,
            },
        );
        let out = sc
            .fetch_http("http://cn.example/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(out.http.status, Some(200));
        assert_eq!(out.http.body_len, 1500);
        assert!(find_seq_conflict(&out.trace).is_some());
        let synack_ipid = out
            .trace
            .inbound()
            .find(|e| e.has(TcpFlag::Syn))
            .unwrap()
            .ip_id;
        let first_data_ipid = out
            .trace
            .inbound()
            .find(|e| e.payload_len > 0)
            .unwrap()
            .ip_id;
        assert_ne!(first_data_ipid, synack_ipid.wrapping_add(1));
    }

    #[test]
    fn vpn_blocker_resets_only_blocked_kinds() {
        let mut sc = base_scenario();
        sc.servers.insert(
            "game.example".into(),
            ServerEntry {
                behavior: ServerBehavior::VpnBlocker {
                    blocked_client_kinds: vec![VantageKind::Vpn],
                    body: default_page(),
                    status: 200,
                },
                inbound_ttl: 52,
                latency_ms: 30,
            },
        );
        let blocked = sc
            .fetch_http("http://game.example/", VantageKind::Vpn, true)
            .unwrap();
        assert_eq!(blocked.http.status, None);
        assert!(premature_rst(&blocked.trace).is_some());
        let fine = sc
            .fetch_http("http://game.example/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(fine.http.status, Some(200));
    }

    fn default_page() -> String {
        "<html><body>ok</body></html>".to_string()
    }

    #[test]
    fn transparent_proxy_banners_html_and_marks_via() {
        let mut sc = base_scenario();
        sc.path_elements.push(PathElement::TransparentProxy {
            fingerprint: ProxyProduct::CacheFront,
        });
        let out = sc
            .fetch_http("http://example.com/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(out.http.status, Some(200));
        let body = out.http.body.as_ref().unwrap();
        assert!(body.starts_with(ProxyProduct::CacheFront.body_banner()));
        assert_eq!(out.http.header("Via"), Some("1.1 cachefront"));
        // Content-Length stays consistent with the delivered body.
        let cl: u64 = out.http.header("Content-Length").unwrap().parse().unwrap();
        assert_eq!(cl, out.http.body_len);
    }

    #[test]
    fn probe_echo_verbatim_without_proxy() {
        let sc = base_scenario();
        let sent = b"GET  /  HTTP/1.1\r\nHost: echo.test\r\n\r\n";
        let obs = sc.probe_proxy(sent);
        assert_eq!(obs.body.as_deref(), Some(sent.as_slice()));
    }

    #[test]
    fn probe_echo_mutated_by_each_product() {
        let sent = b"GET  /  HTTP/1.1\r\nHost: echo.test\r\nZ-Pad: one\r\n two\r\na-pad: x\r\n\r\n";
        for product in crate::fingerprints::ALL_PROXY_PRODUCTS {
            let mut sc = base_scenario();
            sc.path_elements.push(PathElement::TransparentProxy {
                fingerprint: product,
            });
            let obs = sc.probe_proxy(sent);
            assert_eq!(
                obs.body.as_deref(),
                Some(product.transform_request(sent).as_slice()),
                "{product:?}"
            );
        }
    }

    #[test]
    fn tls_mitm_variants() {
        let mut sc = base_scenario();
        let honest = sc.tls_observation("example.com").unwrap();
        assert!(honest.chain[0].issuer_trusted);
        assert!(!honest.chain[0].self_signed);
        assert!(honest.chain[0].not_after > sc.epoch);

        sc.path_elements.push(PathElement::TlsMitm {
            match_domains: vec!["example.com".into()],
            cert: MitmCert::Expired,
        });
        let expired = sc.tls_observation("example.com").unwrap();
        assert!(expired.chain[0].not_after < sc.epoch);
    }

    #[test]
    fn ip_blocker_direct_fails_control_succeeds() {
        let mut sc = base_scenario();
        sc.path_elements.push(PathElement::IpBlocker {
            match_hosts: vec!["example.com".into()],
            mode: BlockMode::DropSyn,
        });
        let (direct, _) = sc
            .tcp_connect("example.com", 80, ConnectVia::Direct)
            .unwrap();
        let (control, _) = sc
            .censor_free_view()
            .tcp_connect("example.com", 80, ConnectVia::Control)
            .unwrap();
        assert!(!direct);
        assert!(control);
        let (both_ok, _) = base_scenario()
            .tcp_connect("example.com", 80, ConnectVia::Direct)
            .unwrap();
        assert!(both_ok);
    }

    #[test]
    fn mimic_exchange_echoes_unless_keyword_rst() {
        let sc = base_scenario();
        let (echo, _) = sc.tcp_exchange(b"\x17\x03\x01mimic-bytes");
        assert_eq!(echo.as_deref(), Some(b"\x17\x03\x01mimic-bytes".as_slice()));

        let mut censored = base_scenario();
        censored.path_elements.push(PathElement::RstInjector {
            match_domains: vec![],
            match_keywords: vec!["mimic-bytes".into()],
            ttl_offset: -2,
        });
        let (blocked, trace) = censored.tcp_exchange(b"\x17\x03\x01mimic-bytes");
        assert!(blocked.is_none());
        assert!(trace.events.iter().any(|e| e.has(TcpFlag::Rst)));
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mk = || {
            let mut sc = base_scenario();
            sc.path_elements.push(PathElement::RstInjector {
                match_domains: vec!["example.com".into()],
                match_keywords: vec![],
                ttl_offset: -3,
            });
            sc
        };
        let a = mk()
            .fetch_http("http://example.com/", VantageKind::Vpn, true)
            .unwrap();
        let b = mk()
            .fetch_http("http://example.com/", VantageKind::Vpn, true)
            .unwrap();
        assert_eq!(
            serde_json::to_string(&a.http).unwrap(),
            serde_json::to_string(&b.http).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a.trace).unwrap(),
            serde_json::to_string(&b.trace).unwrap()
        );
    }

    #[test]
    fn redirects_followed_with_chain() {
        let mut sc = base_scenario();
        sc.servers.insert(
            "old.example".into(),
            ServerEntry {
                behavior: ServerBehavior::Honest {
                    body: "moved".into(),
                    status: 301,
                    headers: vec![("Location".into(), "http://example.com/".into())],
                },
                inbound_ttl: 52,
                latency_ms: 30,
            },
        );
        let followed = sc
            .fetch_http("http://old.example/", VantageKind::Volunteer, true)
            .unwrap();
        assert_eq!(followed.http.status, Some(200));
        assert_eq!(followed.http.redirect_chain, ["http://example.com/"]);
        let unfollowed = sc
            .fetch_http("http://old.example/", VantageKind::Volunteer, false)
            .unwrap();
        assert_eq!(unfollowed.http.status, Some(301));
        assert!(unfollowed.http.redirect_chain.is_empty());
    }
}
