//! Anomaly detectors and verdict classification.
//!
//! Every detector is a pure function from observations to optional
//! findings; [`classify`] composes findings into a per-measurement
//! verdict using the corroboration policy that keeps single ambiguous
//! signals (sequence quirks, lone proxies, server-side resets) from
//! being reported as censorship.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};

use crate::fingerprints::FingerprintDb;
use crate::model::{
    Anomaly, AnomalyKind, Confidence, ConnectProbe, DnsObservation, HttpObservation, ObsRef,
    Outcome, PacketTrace, RawMeasurement, ResolverKind, TlsObservation, Verdict,
};
use crate::trace::{find_seq_conflict, inbound_ttl_mode, premature_rst};

/// Default window for the second-response DNS injection rule.
pub const DEFAULT_DNS_WINDOW_MS: u64 = 2000;
/// Default TTL mode-deviation threshold, in hops.
pub const DEFAULT_TTL_THRESHOLD: u8 = 2;
/// Default relative body-size tolerance for tampering comparison.
pub const DEFAULT_TAMPER_TOLERANCE: f64 = 0.30;

/// Tunable detection policy. The standalone-sufficient set decides which
/// anomaly kinds alone justify a censored verdict; everything else needs
/// a second distinct kind as corroboration.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub dns_window_ms: u64,
    pub ttl_threshold: u8,
    pub tamper_tolerance: f64,
    pub standalone_sufficient: BTreeSet<AnomalyKind>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            dns_window_ms: DEFAULT_DNS_WINDOW_MS,
            ttl_threshold: DEFAULT_TTL_THRESHOLD,
            tamper_tolerance: DEFAULT_TAMPER_TOLERANCE,
            standalone_sufficient: [
                AnomalyKind::DnsInjection,
                AnomalyKind::HttpBlockpage,
                AnomalyKind::TlsMitm,
                AnomalyKind::TcpConnectAsymmetry,
            ]
            .into_iter()
            .collect(),
        }
    }
}

fn finding(kind: AnomalyKind, note: String, refs: Vec<ObsRef>) -> Anomaly {
    Anomaly {
        kind,
        confidence: Confidence::Standalone,
        note,
        refs,
    }
}

/// Fires when a second response arrives within the window of the first.
/// The boundary is strict: a gap of exactly `window_ms` does not fire.
pub fn detect_dns_anomaly(
    obs: &DnsObservation,
    obs_index: usize,
    window_ms: u64,
) -> Option<Anomaly> {
    if obs.responses.len() < 2 {
        return None;
    }
    let first = &obs.responses[0];
    let second = &obs.responses[1];
    let gap_us = second.arrival - first.arrival;
    if gap_us >= window_ms * 1000 {
        return None;
    }
    Some(finding(
        AnomalyKind::DnsInjection,
        format!(
            "second response for {} arrived {}us after the first; answers {:?} then {:?}",
            obs.qname, gap_us, first.answers, second.answers
        ),
        vec![
            ObsRef::Dns {
                index: obs_index,
                response: Some(0),
            },
            ObsRef::Dns {
                index: obs_index,
                response: Some(1),
            },
        ],
    ))
}

/// Compares the default/alternate answers against the control resolver.
/// No claim is made when the control resolver returned nothing usable.
pub fn detect_dns_inconsistency(observations: &[DnsObservation]) -> Option<Anomaly> {
    let control_index = observations
        .iter()
        .position(|o| o.resolver == ResolverKind::ControlNonstandardPort)?;
    let control: BTreeSet<&String> = observations[control_index]
        .effective_answers()
        .iter()
        .collect();
    if control.is_empty() {
        return None;
    }
    for (i, obs) in observations.iter().enumerate() {
        if obs.resolver == ResolverKind::ControlNonstandardPort {
            continue;
        }
        let answers: BTreeSet<&String> = obs.effective_answers().iter().collect();
        if !answers.is_empty() && answers.is_disjoint(&control) {
            return Some(finding(
                AnomalyKind::DnsInconsistent,
                format!(
                    "{:?} resolver answers {:?} share nothing with control answers {:?}",
                    obs.resolver, answers, control
                ),
                vec![
                    ObsRef::Dns {
                        index: i,
                        response: None,
                    },
                    ObsRef::Dns {
                        index: control_index,
                        response: None,
                    },
                ],
            ));
        }
    }
    None
}

/// First matching blockpage fingerprint wins; database order is priority.
pub fn detect_blockpage(http: &HttpObservation, db: &FingerprintDb) -> Option<Anomaly> {
    let fp = db.match_blockpage(http)?;
    Some(finding(
        AnomalyKind::HttpBlockpage,
        format!("body matched blockpage fingerprint `{}`", fp.entry.name),
        vec![ObsRef::Http],
    ))
}

/// Field-versus-control comparison on status and response size.
pub fn detect_http_tampering(
    field: &HttpObservation,
    control: &HttpObservation,
    tolerance: f64,
) -> Option<Anomaly> {
    let refs = vec![ObsRef::Http, ObsRef::ControlHttp];
    match (field.status, control.status) {
        (None, Some(_)) => Some(finding(
            AnomalyKind::HttpTampering,
            "no field response while the control fetch succeeded".to_string(),
            refs,
        )),
        (Some(f), Some(c)) if f != c => Some(finding(
            AnomalyKind::HttpTampering,
            format!("status {f} differs from control status {c}"),
            refs,
        )),
        (Some(_), Some(_)) => {
            let f = field.body_len as f64;
            let c = control.body_len as f64;
            let exceeded = if control.body_len == 0 {
                field.body_len > 0
            } else {
                ((f - c).abs() / c) > tolerance
            };
            if exceeded {
                Some(finding(
                    AnomalyKind::HttpTampering,
                    format!(
                        "body length {} deviates from control length {} beyond tolerance {tolerance}",
                        field.body_len, control.body_len
                    ),
                    refs,
                ))
            } else {
                None
            }
        }
        _ => None,
    }
}

/// An echo that differs from what we sent means something on the path
/// rewrote it; known products are named by replaying their transforms.
pub fn detect_proxy(
    probe: &HttpObservation,
    sent: &[u8],
    probe_index: usize,
    db: &FingerprintDb,
) -> Option<Anomaly> {
    let echoed = probe.body.as_ref()?;
    if echoed.as_slice() == sent {
        return None;
    }
    let product = db.match_proxy(sent, echoed);
    let note = match product {
        Some(p) => format!("request mutation matches proxy product `{}`", p.name()),
        None => "request mutated in flight by an unidentified proxy".to_string(),
    };
    Some(finding(
        AnomalyKind::HttpProxy,
        note,
        vec![ObsRef::ProxyProbe { index: probe_index }],
    ))
}

/// Expired leaf, untrusted issuer anywhere in the chain, or a
/// self-signed leaf.
pub fn detect_tls_mitm(tls: &TlsObservation, now: DateTime<Utc>) -> Option<Anomaly> {
    if !tls.handshake_completed || tls.chain.is_empty() {
        return None;
    }
    let leaf = &tls.chain[0];
    if leaf.not_after < now {
        return Some(finding(
            AnomalyKind::TlsMitm,
            format!("leaf certificate expired {} (now {})", leaf.not_after, now),
            vec![ObsRef::Tls { cert: 0 }],
        ));
    }
    if let Some(i) = tls.chain.iter().position(|c| !c.issuer_trusted) {
        return Some(finding(
            AnomalyKind::TlsMitm,
            format!(
                "certificate {} issued by untrusted `{}`",
                i, tls.chain[i].issuer
            ),
            vec![ObsRef::Tls { cert: i }],
        ));
    }
    if leaf.self_signed {
        return Some(finding(
            AnomalyKind::TlsMitm,
            "leaf certificate is self-signed".to_string(),
            vec![ObsRef::Tls { cert: 0 }],
        ));
    }
    None
}

/// TTL mode deviations, premature resets, and conflicting sequence
/// overlaps. Plain sequence gaps never fire: load balancers cause them.
pub fn detect_tcp_anomalies(trace: &PacketTrace, ttl_threshold: u8) -> Vec<Anomaly> {
    let mut out = Vec::new();
    if let Some(mode) = inbound_ttl_mode(trace) {
        let offending: Vec<usize> = trace
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.direction == crate::model::Direction::Inbound
                    && (e.ip_ttl as i16 - mode as i16).unsigned_abs() >= ttl_threshold as u16
            })
            .map(|(i, _)| i)
            .collect();
        if !offending.is_empty() {
            let ttls: Vec<u8> = offending.iter().map(|&i| trace.events[i].ip_ttl).collect();
            out.push(finding(
                AnomalyKind::TcpTtl,
                format!(
                    "inbound ttl(s) {ttls:?} deviate from path mode {mode} by >= {ttl_threshold}"
                ),
                offending
                    .into_iter()
                    .map(|index| ObsRef::TraceEvent { index })
                    .collect(),
            ));
        }
    }
    if let Some(index) = premature_rst(trace) {
        out.push(finding(
            AnomalyKind::TcpRst,
            "inbound RST before a complete response".to_string(),
            vec![ObsRef::TraceEvent { index }],
        ));
    }
    if let Some(conflict) = find_seq_conflict(trace) {
        out.push(finding(
            AnomalyKind::TcpSeq,
            format!(
                "inbound segments overlap bytes {}..{} with conflicting content",
                conflict.range.0, conflict.range.1
            ),
            vec![
                ObsRef::TraceEvent {
                    index: conflict.first_event,
                },
                ObsRef::TraceEvent {
                    index: conflict.second_event,
                },
            ],
        ));
    }
    out
}

/// The control channel reached the host while the direct path could not.
pub fn detect_connect_asymmetry(connect: &ConnectProbe) -> Option<Anomaly> {
    if connect.control_ok && !connect.direct_ok {
        Some(finding(
            AnomalyKind::TcpConnectAsymmetry,
            "direct connect failed while the control channel succeeded".to_string(),
            vec![ObsRef::Connect],
        ))
    } else {
        None
    }
}

/// Runs the full battery over one measurement.
pub fn analyze(m: &RawMeasurement, db: &FingerprintDb, config: &DetectorConfig) -> Vec<Anomaly> {
    let mut anomalies = Vec::new();
    for (i, obs) in m.dns.iter().enumerate() {
        anomalies.extend(detect_dns_anomaly(obs, i, config.dns_window_ms));
    }
    anomalies.extend(detect_dns_inconsistency(&m.dns));
    if let Some(http) = &m.http {
        anomalies.extend(detect_blockpage(http, db));
        if let Some(control) = &m.control_http {
            anomalies.extend(detect_http_tampering(
                http,
                control,
                config.tamper_tolerance,
            ));
        }
    }
    for (i, probe) in m.proxy_probes.iter().enumerate() {
        anomalies.extend(detect_proxy(&probe.echoed, &probe.sent, i, db));
    }
    if let Some(tls) = &m.tls {
        anomalies.extend(detect_tls_mitm(tls, m.started_at));
    }
    if let Some(trace) = &m.trace {
        anomalies.extend(detect_tcp_anomalies(trace, config.ttl_threshold));
    }
    if let Some(connect) = &m.connect {
        anomalies.extend(detect_connect_asymmetry(connect));
    }
    debug_assert!(anomalies.iter().all(|a| a.validate_against(m).is_ok()));
    anomalies
}

/// Composes findings into a verdict.
///
/// Censored iff a standalone-sufficient kind fired, or at least two
/// distinct corroborating kinds did. Otherwise a received response is
/// ok (anomalies retained as standalone evidence) and an absent one is
/// inconclusive, to be resolved by dead-site filtering downstream.
pub fn classify(m: &RawMeasurement, anomalies: Vec<Anomaly>, config: &DetectorConfig) -> Verdict {
    let kinds: BTreeSet<AnomalyKind> = anomalies.iter().map(|a| a.kind).collect();
    let standalone_hit = kinds
        .iter()
        .any(|k| config.standalone_sufficient.contains(k));
    let corroborating = kinds
        .iter()
        .filter(|k| !config.standalone_sufficient.contains(k))
        .count();
    let censored = standalone_hit || corroborating >= 2;
    let confidence = if censored {
        Confidence::Corroborating
    } else {
        Confidence::Standalone
    };
    let evidence: Vec<Anomaly> = anomalies
        .into_iter()
        .map(|mut a| {
            a.confidence = confidence;
            a
        })
        .collect();
    let (outcome, methods) = if censored {
        (Outcome::Censored, kinds)
    } else if m.response_received() {
        (Outcome::Ok, BTreeSet::new())
    } else {
        (Outcome::Inconclusive, BTreeSet::new())
    };
    Verdict::new(
        m.vantage.clone(),
        m.target.clone(),
        outcome,
        methods,
        evidence,
    )
    .expect("classification respects verdict invariants")
}

/// Analyze + classify in one step; the path both agent-side and central
/// classification share.
pub fn classify_measurement(
    m: &RawMeasurement,
    db: &FingerprintDb,
    config: &DetectorConfig,
) -> Verdict {
    let anomalies = analyze(m, db, config);
    classify(m, anomalies, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprints::BlockpageEntry;
    use crate::model::{
        DnsResponse, TargetOrigin, TestTarget, DNS_RCODE_NOERROR, DNS_RCODE_NXDOMAIN,
    };
    use chrono::TimeZone;

    fn dns_obs(resolver: ResolverKind, responses: Vec<(u64, Vec<&str>, u16)>) -> DnsObservation {
        DnsObservation {
            qname: "example.com".into(),
            resolver,
            responses: responses
                .into_iter()
                .map(|(arrival, answers, rcode)| DnsResponse {
                    arrival,
                    answers: answers.into_iter().map(String::from).collect(),
                    rcode,
                })
                .collect(),
        }
    }

    fn http(status: Option<u16>, body: &[u8]) -> HttpObservation {
        HttpObservation {
            request_line: "GET / HTTP/1.1".into(),
            request_headers: vec![],
            redirect_chain: vec![],
            status,
            response_headers: vec![],
            body: Some(body.to_vec()),
            body_len: body.len() as u64,
        }
    }

    #[test]
    fn dns_second_response_within_window_fires() {
        let obs = dns_obs(
            ResolverKind::SystemDefault,
            vec![
                (0, vec!["10.10.0.1"], DNS_RCODE_NOERROR),
                (1_500_000, vec!["93.184.216.34"], DNS_RCODE_NOERROR),
            ],
        );
        let a = detect_dns_anomaly(&obs, 0, DEFAULT_DNS_WINDOW_MS).unwrap();
        assert_eq!(a.kind, AnomalyKind::DnsInjection);
    }

    #[test]
    fn dns_single_response_none() {
        let obs = dns_obs(
            ResolverKind::SystemDefault,
            vec![(0, vec!["93.184.216.34"], DNS_RCODE_NOERROR)],
        );
        assert!(detect_dns_anomaly(&obs, 0, DEFAULT_DNS_WINDOW_MS).is_none());
    }

    #[test]
    fn dns_boundary_is_strict() {
        let gap = |ms: u64| {
            dns_obs(
                ResolverKind::SystemDefault,
                vec![
                    (0, vec!["10.10.0.1"], DNS_RCODE_NOERROR),
                    (ms * 1000, vec!["93.184.216.34"], DNS_RCODE_NOERROR),
                ],
            )
        };
        assert!(detect_dns_anomaly(&gap(1999), 0, 2000).is_some());
        assert!(detect_dns_anomaly(&gap(2000), 0, 2000).is_none());
        assert!(detect_dns_anomaly(&gap(2500), 0, 2000).is_none());
    }

    #[test]
    fn dns_inconsistency_disjoint_from_control() {
        let set = vec![
            dns_obs(
                ResolverKind::SystemDefault,
                vec![(0, vec!["10.10.0.1"], DNS_RCODE_NOERROR)],
            ),
            dns_obs(
                ResolverKind::PublicAlternate,
                vec![(0, vec!["10.10.0.1"], DNS_RCODE_NOERROR)],
            ),
            dns_obs(
                ResolverKind::ControlNonstandardPort,
                vec![(0, vec!["93.184.216.34"], DNS_RCODE_NOERROR)],
            ),
        ];
        assert!(detect_dns_inconsistency(&set).is_some());
    }

    #[test]
    fn dns_inconsistency_agreement_and_nxdomain_control() {
        let agree = vec![
            dns_obs(
                ResolverKind::SystemDefault,
                vec![(0, vec!["93.184.216.34"], DNS_RCODE_NOERROR)],
            ),
            dns_obs(
                ResolverKind::ControlNonstandardPort,
                vec![(0, vec!["93.184.216.34"], DNS_RCODE_NOERROR)],
            ),
        ];
        assert!(detect_dns_inconsistency(&agree).is_none());
        let control_nx = vec![
            dns_obs(
                ResolverKind::SystemDefault,
                vec![(0, vec!["10.10.0.1"], DNS_RCODE_NOERROR)],
            ),
            dns_obs(
                ResolverKind::ControlNonstandardPort,
                vec![(0, vec![], DNS_RCODE_NXDOMAIN)],
            ),
        ];
        assert!(detect_dns_inconsistency(&control_nx).is_none());
    }

    #[test]
    fn blockpage_fingerprint_and_empty_db() {
        let db = FingerprintDb::from_entries(vec![BlockpageEntry {
            name: "gateway-451".into(),
            country: Some("IR".into()),
            pattern: "blocked by national gateway".into(),
            header_pattern: None,
        }])
        .unwrap();
        let hit = http(Some(403), b"<html>blocked by national gateway</html>");
        assert!(detect_blockpage(&hit, &db).is_some());
        assert!(detect_blockpage(&hit, &FingerprintDb::empty()).is_none());
        let clean = http(Some(200), b"<html>welcome</html>");
        assert!(detect_blockpage(&clean, &db).is_none());
    }

    #[test]
    fn tampering_rules() {
        let control = http(Some(200), &vec![b'x'; 1005]);
        assert!(detect_http_tampering(&control, &control, 0.30).is_none());
        let forbidden = http(Some(403), b"no");
        assert!(detect_http_tampering(&forbidden, &control, 0.30).is_some());
        let slightly_off = http(Some(200), &vec![b'x'; 1000]);
        assert!(detect_http_tampering(&slightly_off, &control, 0.30).is_none());
        let absent = http(None, b"");
        assert!(detect_http_tampering(&absent, &control, 0.30).is_some());
        assert!(detect_http_tampering(&control, &absent, 0.30).is_none());
    }

    #[test]
    fn proxy_detection_names_products() {
        let db = FingerprintDb::builtin();
        let sent = b"GET / HTTP/1.1\r\nHost: echo.test\r\nZ-Pad: one\r\n two\r\na-pad: x\r\n\r\n";
        let clean = http(Some(200), sent);
        assert!(detect_proxy(&clean, sent, 0, &db).is_none());
        for product in crate::fingerprints::ALL_PROXY_PRODUCTS {
            let echoed = http(Some(200), &product.transform_request(sent));
            let a = detect_proxy(&echoed, sent, 0, &db).unwrap();
            assert!(a.note.contains(product.name()), "{}", a.note);
        }
        let mut flipped = sent.to_vec();
        flipped[0] ^= 0xff;
        let unknown = http(Some(200), &flipped);
        let a = detect_proxy(&unknown, sent, 0, &db).unwrap();
        assert!(a.note.contains("unidentified"));
    }

    fn tls(not_after_days: i64, trusted: bool, self_signed: bool) -> TlsObservation {
        let epoch = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
        TlsObservation {
            handshake_completed: true,
            chain: vec![crate::model::CertSummary {
                subject: "CN=example.com".into(),
                issuer: "CN=ca".into(),
                not_before: epoch - chrono::Duration::days(400),
                not_after: epoch + chrono::Duration::days(not_after_days),
                self_signed,
                issuer_trusted: trusted,
            }],
        }
    }

    #[test]
    fn tls_mitm_rules() {
        let now = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
        assert!(detect_tls_mitm(&tls(100, true, false), now).is_none());
        assert!(detect_tls_mitm(&tls(-10, true, false), now).is_some());
        assert!(detect_tls_mitm(&tls(100, false, false), now).is_some());
        assert!(detect_tls_mitm(&tls(100, false, true), now).is_some());
    }

    #[test]
    fn connect_asymmetry_is_conjunctive() {
        let probe = |direct_ok, control_ok| ConnectProbe {
            direct_ok,
            control_ok,
        };
        assert!(detect_connect_asymmetry(&probe(true, true)).is_none());
        assert!(detect_connect_asymmetry(&probe(false, true)).is_some());
        assert!(detect_connect_asymmetry(&probe(false, false)).is_none());
    }

    fn measurement_with(
        http_obs: Option<HttpObservation>,
        anomaly_kinds: &[AnomalyKind],
    ) -> (RawMeasurement, Vec<Anomaly>) {
        let m = RawMeasurement {
            vantage: "vp".into(),
            target: TestTarget::new("http://example.com/", "NEWS", TargetOrigin::GlobalList)
                .unwrap(),
            started_at: chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap(),
            dns: vec![],
            http: http_obs,
            control_http: None,
            tls: None,
            trace: None,
            connect: Some(ConnectProbe {
                direct_ok: true,
                control_ok: true,
            }),
            proxy_probes: vec![],
        };
        let anomalies = anomaly_kinds
            .iter()
            .map(|&kind| finding(kind, "test".into(), vec![ObsRef::Connect]))
            .collect();
        (m, anomalies)
    }

    #[test]
    fn classify_seq_alone_is_ok_with_evidence() {
        let (m, anomalies) =
            measurement_with(Some(http(Some(200), b"page")), &[AnomalyKind::TcpSeq]);
        let v = classify(&m, anomalies, &DetectorConfig::default());
        assert_eq!(v.outcome, Outcome::Ok);
        assert!(v.methods.is_empty());
        assert_eq!(v.evidence.len(), 1);
        assert_eq!(v.evidence[0].confidence, Confidence::Standalone);
    }

    #[test]
    fn classify_blockpage_is_standalone_sufficient() {
        let (m, anomalies) = measurement_with(
            Some(http(Some(403), b"blocked")),
            &[AnomalyKind::HttpBlockpage],
        );
        let v = classify(&m, anomalies, &DetectorConfig::default());
        assert_eq!(v.outcome, Outcome::Censored);
        assert!(v.methods.contains(&AnomalyKind::HttpBlockpage));
    }

    #[test]
    fn classify_two_corroborating_kinds_censored() {
        let (m, anomalies) = measurement_with(
            Some(http(Some(200), b"partial")),
            &[AnomalyKind::TcpRst, AnomalyKind::TcpTtl],
        );
        let v = classify(&m, anomalies, &DetectorConfig::default());
        assert_eq!(v.outcome, Outcome::Censored);
        assert!(v.methods.contains(&AnomalyKind::TcpRst));
        assert!(v.methods.contains(&AnomalyKind::TcpTtl));
        assert!(v
            .evidence
            .iter()
            .all(|a| a.confidence == Confidence::Corroborating));
    }

    #[test]
    fn classify_absent_response_without_anomaly_is_inconclusive() {
        let (m, anomalies) = measurement_with(Some(http(None, b"")), &[]);
        let v = classify(&m, anomalies, &DetectorConfig::default());
        assert_eq!(v.outcome, Outcome::Inconclusive);
    }

    #[test]
    fn classify_lone_rst_with_absent_response_not_censored() {
        let (m, anomalies) = measurement_with(Some(http(None, b"")), &[AnomalyKind::TcpRst]);
        let v = classify(&m, anomalies, &DetectorConfig::default());
        assert_eq!(v.outcome, Outcome::Inconclusive);
        assert_eq!(v.evidence.len(), 1);
    }

    #[test]
    fn classify_monotone_in_standalone_kinds() {
        // Adding a standalone-sufficient kind never flips censored -> ok.
        let config = DetectorConfig::default();
        let base_kinds: &[&[AnomalyKind]] = &[
            &[],
            &[AnomalyKind::TcpSeq],
            &[AnomalyKind::TcpRst, AnomalyKind::TcpTtl],
            &[AnomalyKind::HttpProxy],
        ];
        for kinds in base_kinds {
            let (m, anomalies) = measurement_with(Some(http(Some(200), b"x")), kinds);
            let before = classify(&m, anomalies, &config).outcome;
            for extra in &config.standalone_sufficient {
                let mut widened: Vec<AnomalyKind> = kinds.to_vec();
                widened.push(*extra);
                let (m2, anomalies2) = measurement_with(Some(http(Some(200), b"x")), &widened);
                let after = classify(&m2, anomalies2, &config).outcome;
                assert_eq!(after, Outcome::Censored);
                if before == Outcome::Censored {
                    assert_eq!(after, Outcome::Censored);
                }
            }
        }
    }
}
