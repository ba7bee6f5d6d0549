//! Round-trip and validation properties of the report record format,
//! over generated measurements.

use chrono::TimeZone;
use proptest::prelude::*;

use vantage_core::model::{
    deserialize_report, flags, serialize_report, CertSummary, ConnectProbe, Direction,
    DnsObservation, DnsResponse, FiveTuple, HttpObservation, PacketEvent, PacketTrace,
    RawMeasurement, ReportError, ReportRecord, ResolverKind, TargetOrigin, TcpFlag, TestTarget,
    TlsObservation, TransportProtocol, Validate,
};

fn arb_origin() -> impl Strategy<Value = TargetOrigin> {
    prop_oneof![
        Just(TargetOrigin::GlobalList),
        Just(TargetOrigin::CountryList),
        Just(TargetOrigin::BaselineAlexa),
    ]
}

fn arb_target() -> impl Strategy<Value = TestTarget> {
    ("[a-z]{3,10}", prop::bool::ANY, "[A-Z]{2,8}", arb_origin()).prop_map(
        |(host, https, category, origin)| {
            let scheme = if https { "https" } else { "http" };
            TestTarget::new(&format!("{scheme}://{host}.example/"), &category, origin)
                .expect("generated targets are valid")
        },
    )
}

fn arb_ip() -> impl Strategy<Value = String> {
    (1u8..=254, 0u8..=254).prop_map(|(a, b)| format!("198.51.{a}.{b}"))
}

fn arb_dns() -> impl Strategy<Value = DnsObservation> {
    (
        "[a-z]{3,10}",
        prop_oneof![
            Just(ResolverKind::SystemDefault),
            Just(ResolverKind::PublicAlternate),
            Just(ResolverKind::ControlNonstandardPort),
        ],
        prop::collection::vec(
            (0u64..4_000_000, prop::collection::vec(arb_ip(), 0..3)),
            0..4,
        ),
    )
        .prop_map(|(host, resolver, raw)| {
            let mut raw = raw;
            raw.sort_by_key(|(arrival, _)| *arrival);
            DnsObservation {
                qname: format!("{host}.example"),
                resolver,
                responses: raw
                    .into_iter()
                    .map(|(arrival, answers)| {
                        let rcode = if answers.is_empty() { 3 } else { 0 };
                        DnsResponse {
                            arrival,
                            answers,
                            rcode,
                        }
                    })
                    .collect(),
            }
        })
}

fn arb_http() -> impl Strategy<Value = HttpObservation> {
    (
        prop::option::of(prop_oneof![Just(200u16), Just(301), Just(403), Just(503)]),
        prop::collection::vec(("[A-Za-z-]{2,12}", "[ -~]{0,20}"), 0..4),
        prop::option::of(prop::collection::vec(any::<u8>(), 0..200)),
    )
        .prop_map(|(status, headers, body)| {
            let body_len = body.as_ref().map_or(17, |b| b.len() as u64);
            HttpObservation {
                request_line: "GET / HTTP/1.1".into(),
                request_headers: vec![("Host".into(), "x.example".into())],
                redirect_chain: vec![],
                status,
                response_headers: headers,
                body,
                body_len,
            }
        })
}

fn arb_trace() -> impl Strategy<Value = PacketTrace> {
    (
        1u16..=60000,
        any::<u32>(),
        any::<u32>(),
        prop::collection::vec(
            (
                1u64..1000,
                any::<u8>(),
                prop::collection::vec(any::<u8>(), 0..64),
            ),
            0..6,
        ),
    )
        .prop_map(|(src_port, isn_c, isn_s, chunks)| {
            let mut events = vec![PacketEvent {
                t: 0,
                direction: Direction::Outbound,
                ip_ttl: 64,
                ip_id: 1,
                tcp_seq: isn_c,
                tcp_ack: 0,
                flags: flags(&[TcpFlag::Syn]),
                payload_len: 0,
                payload: None,
            }];
            let mut t = 0u64;
            let mut seq = isn_s;
            for (dt, ttl, payload) in chunks {
                t += dt;
                events.push(PacketEvent {
                    t,
                    direction: Direction::Inbound,
                    ip_ttl: ttl,
                    ip_id: 0,
                    tcp_seq: seq,
                    tcp_ack: isn_c.wrapping_add(1),
                    flags: flags(&[TcpFlag::Ack]),
                    payload_len: payload.len() as u32,
                    payload: Some(payload.clone()),
                });
                seq = seq.wrapping_add(payload.len() as u32);
            }
            PacketTrace::new(
                FiveTuple {
                    src_host: "client.sim".into(),
                    src_port,
                    dst_host: "x.example".into(),
                    dst_port: 80,
                    protocol: TransportProtocol::Tcp,
                },
                events,
            )
            .expect("generated traces are valid")
        })
}

fn arb_tls() -> impl Strategy<Value = TlsObservation> {
    (prop::bool::ANY, prop::bool::ANY, prop::bool::ANY).prop_map(
        |(trusted, self_signed, expired)| {
            let epoch = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
            TlsObservation {
                handshake_completed: true,
                chain: vec![CertSummary {
                    subject: "CN=x.example".into(),
                    issuer: if self_signed {
                        "CN=x.example".into()
                    } else {
                        "CN=SimTrust Root CA".into()
                    },
                    not_before: epoch - chrono::Duration::days(90),
                    not_after: if expired {
                        epoch - chrono::Duration::days(1)
                    } else {
                        epoch + chrono::Duration::days(90)
                    },
                    self_signed,
                    issuer_trusted: trusted,
                }],
            }
        },
    )
}

prop_compose! {
    fn arb_measurement()(
        target in arb_target(),
        minute in 0u32..60,
        dns in prop::collection::vec(arb_dns(), 0..3),
        http in prop::option::of(arb_http()),
        control_http in prop::option::of(arb_http()),
        tls in prop::option::of(arb_tls()),
        trace in prop::option::of(arb_trace()),
        connect in prop::option::of((prop::bool::ANY, prop::bool::ANY)),
    ) -> RawMeasurement {
        let mut m = RawMeasurement {
            vantage: "vp-gen".into(),
            target,
            started_at: chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, minute, 0).unwrap(),
            dns,
            http,
            control_http,
            tls,
            trace,
            connect: connect.map(|(direct_ok, control_ok)| ConnectProbe { direct_ok, control_ok }),
            proxy_probes: vec![],
        };
        // keep the at-least-one-observation invariant
        if m.dns.is_empty()
            && m.http.is_none()
            && m.control_http.is_none()
            && m.tls.is_none()
            && m.trace.is_none()
            && m.connect.is_none()
        {
            m.connect = Some(ConnectProbe { direct_ok: true, control_ok: true });
        }
        m
    }
}

proptest! {
    #[test]
    fn round_trip_identity(m in arb_measurement()) {
        prop_assert!(m.validate().is_ok());
        let record = ReportRecord::raw(m);
        let line = serialize_report(&record);
        let back = deserialize_report(&line).expect("round trip parses");
        prop_assert_eq!(&record, &back);
        // determinism: equal inputs produce identical bytes
        prop_assert_eq!(line, serialize_report(&back));
    }

    #[test]
    fn unsorted_dns_rejected_on_deserialize(m in arb_measurement()) {
        let mut m = m;
        m.dns = vec![DnsObservation {
            qname: "x.example".into(),
            resolver: ResolverKind::SystemDefault,
            responses: vec![
                DnsResponse { arrival: 50, answers: vec![], rcode: 3 },
                DnsResponse { arrival: 10, answers: vec![], rcode: 3 },
            ],
        }];
        let record = ReportRecord { v: 1, measurement: m, verdict: None, local_only: false };
        let line = serde_json::to_string(&record).unwrap();
        prop_assert!(matches!(deserialize_report(&line), Err(ReportError::Invalid(_))));
    }
}
