//! TCP stream analysis over recorded packet traces: inbound reassembly,
//! TTL statistics, overlap conflicts, and premature-RST reasoning.

use std::collections::BTreeMap;

use crate::model::{Direction, PacketTrace, TcpFlag};

/// Parsed HTTP response head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseHead {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    /// Byte length of status line + headers + blank line.
    pub head_len: usize,
    pub content_length: Option<u64>,
}

/// Parses a response head out of a byte stream. Returns None until the
/// blank line terminating the head has arrived.
pub fn parse_response_head(bytes: &[u8]) -> Option<ResponseHead> {
    let head_end = bytes.windows(4).position(|w| w == b"\r\n\r\n")?;
    let head = std::str::from_utf8(&bytes[..head_end]).ok()?;
    let mut lines = head.split("\r\n");
    let status_line = lines.next()?;
    let mut parts = status_line.splitn(3, ' ');
    let version = parts.next()?;
    if !version.starts_with("HTTP/") {
        return None;
    }
    let status: u16 = parts.next()?.parse().ok()?;
    let mut headers = Vec::new();
    let mut content_length = None;
    for line in lines {
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_string();
            let value = value.trim().to_string();
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.parse().ok();
            }
            headers.push((name, value));
        }
    }
    Some(ResponseHead {
        status,
        headers,
        head_len: head_end + 4,
        content_length,
    })
}

/// Server initial sequence number, read off the SYN-ACK.
pub fn server_isn(trace: &PacketTrace) -> Option<u32> {
    trace
        .events
        .iter()
        .find(|e| e.direction == Direction::Inbound && e.has(TcpFlag::Syn) && e.has(TcpFlag::Ack))
        .map(|e| e.tcp_seq)
}

/// Reassembles the contiguous inbound byte stream starting at ISN+1,
/// first arrival wins on overlap. Only events before `limit` take part.
pub fn reassemble_inbound(trace: &PacketTrace, limit: usize) -> Vec<u8> {
    let Some(isn) = server_isn(trace) else {
        return Vec::new();
    };
    let base = isn.wrapping_add(1);
    let mut bytes: BTreeMap<u64, u8> = BTreeMap::new();
    for ev in trace.events.iter().take(limit) {
        if ev.direction != Direction::Inbound {
            continue;
        }
        let Some(payload) = &ev.payload else { continue };
        let offset = ev.tcp_seq.wrapping_sub(base) as u64;
        for (i, &b) in payload.iter().enumerate() {
            bytes.entry(offset + i as u64).or_insert(b);
        }
    }
    let mut out = Vec::with_capacity(bytes.len());
    for expect in 0u64.. {
        match bytes.get(&expect) {
            Some(&b) => out.push(b),
            None => break,
        }
    }
    out
}

/// Most common inbound TTL; ties break toward the larger sample count
/// and then the smaller TTL value, deterministically.
pub fn inbound_ttl_mode(trace: &PacketTrace) -> Option<u8> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for ev in trace.inbound() {
        *counts.entry(ev.ip_ttl).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(ttl, _)| ttl)
}

/// A pair of inbound data packets covering the same byte range with
/// conflicting content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqConflict {
    pub first_event: usize,
    pub second_event: usize,
    pub range: (u64, u64),
}

/// Finds overlapping inbound sequence ranges whose payload bytes differ.
/// Plain gaps and identical retransmissions are not conflicts.
pub fn find_seq_conflict(trace: &PacketTrace) -> Option<SeqConflict> {
    let isn = server_isn(trace)?;
    let base = isn.wrapping_add(1);
    let data: Vec<(usize, u64, &[u8])> = trace
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.direction == Direction::Inbound)
        .filter_map(|(i, e)| {
            e.payload
                .as_ref()
                .filter(|p| !p.is_empty())
                .map(|p| (i, e.tcp_seq.wrapping_sub(base) as u64, p.as_slice()))
        })
        .collect();
    for (a, &(ai, astart, apay)) in data.iter().enumerate() {
        for &(bi, bstart, bpay) in &data[a + 1..] {
            let aend = astart + apay.len() as u64;
            let bend = bstart + bpay.len() as u64;
            let lo = astart.max(bstart);
            let hi = aend.min(bend);
            if lo >= hi {
                continue;
            }
            let a_slice = &apay[(lo - astart) as usize..(hi - astart) as usize];
            let b_slice = &bpay[(lo - bstart) as usize..(hi - bstart) as usize];
            if a_slice != b_slice {
                return Some(SeqConflict {
                    first_event: ai,
                    second_event: bi,
                    range: (lo, hi),
                });
            }
        }
    }
    None
}

/// Index of the first inbound RST that arrived before a complete HTTP
/// response. Completeness: a parsed head plus `Content-Length` bytes of
/// body, or (when no Content-Length is visible) an inbound FIN seen
/// before the RST.
pub fn premature_rst(trace: &PacketTrace) -> Option<usize> {
    let rst_idx = trace
        .events
        .iter()
        .position(|e| e.direction == Direction::Inbound && e.has(TcpFlag::Rst))?;
    let stream = reassemble_inbound(trace, rst_idx);
    if let Some(head) = parse_response_head(&stream) {
        if let Some(cl) = head.content_length {
            if (stream.len() - head.head_len) as u64 >= cl {
                return None;
            }
            return Some(rst_idx);
        }
    }
    let fin_before = trace.events[..rst_idx]
        .iter()
        .any(|e| e.direction == Direction::Inbound && e.has(TcpFlag::Fin));
    if fin_before {
        None
    } else {
        Some(rst_idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{flags, FiveTuple, PacketEvent, TransportProtocol};

    fn ev(
        t: u64,
        dir: Direction,
        ttl: u8,
        seq: u32,
        fl: &[TcpFlag],
        payload: Option<&[u8]>,
    ) -> PacketEvent {
        PacketEvent {
            t,
            direction: dir,
            ip_ttl: ttl,
            ip_id: 0,
            tcp_seq: seq,
            tcp_ack: 0,
            flags: flags(fl),
            payload_len: payload.map_or(0, |p| p.len() as u32),
            payload: payload.map(|p| p.to_vec()),
        }
    }

    fn trace(events: Vec<PacketEvent>) -> PacketTrace {
        PacketTrace::new(
            FiveTuple {
                src_host: "c".into(),
                src_port: 40000,
                dst_host: "s".into(),
                dst_port: 80,
                protocol: TransportProtocol::Tcp,
            },
            events,
        )
        .unwrap()
    }

    #[test]
    fn parse_head_extracts_status_and_content_length() {
        let head =
            parse_response_head(b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\nhello").unwrap();
        assert_eq!(head.status, 200);
        assert_eq!(head.content_length, Some(5));
        assert_eq!(head.head_len, 38);
        assert!(parse_response_head(b"HTTP/1.1 200 OK\r\nContent-").is_none());
    }

    #[test]
    fn reassembly_first_arrival_wins() {
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(
                10,
                Direction::Inbound,
                52,
                500,
                &[TcpFlag::Syn, TcpFlag::Ack],
                None,
            ),
            ev(
                20,
                Direction::Inbound,
                52,
                501,
                &[TcpFlag::Ack],
                Some(b"abcd"),
            ),
            ev(
                30,
                Direction::Inbound,
                52,
                503,
                &[TcpFlag::Ack],
                Some(b"XXef"),
            ),
        ]);
        assert_eq!(reassemble_inbound(&t, t.events.len()), b"abcdef");
        let conflict = find_seq_conflict(&t).unwrap();
        assert_eq!(conflict.range, (2, 4));
    }

    #[test]
    fn gaps_are_not_conflicts() {
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(
                10,
                Direction::Inbound,
                52,
                500,
                &[TcpFlag::Syn, TcpFlag::Ack],
                None,
            ),
            ev(
                20,
                Direction::Inbound,
                52,
                501,
                &[TcpFlag::Ack],
                Some(b"abcd"),
            ),
            // gap of 1000 sequence numbers
            ev(
                30,
                Direction::Inbound,
                52,
                1505,
                &[TcpFlag::Ack],
                Some(b"efgh"),
            ),
        ]);
        assert!(find_seq_conflict(&t).is_none());
        // reassembly stops at the hole
        assert_eq!(reassemble_inbound(&t, t.events.len()), b"abcd");
    }

    #[test]
    fn identical_retransmission_is_benign() {
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(
                10,
                Direction::Inbound,
                52,
                500,
                &[TcpFlag::Syn, TcpFlag::Ack],
                None,
            ),
            ev(
                20,
                Direction::Inbound,
                52,
                501,
                &[TcpFlag::Ack],
                Some(b"abcd"),
            ),
            ev(
                30,
                Direction::Inbound,
                52,
                501,
                &[TcpFlag::Ack],
                Some(b"abcd"),
            ),
        ]);
        assert!(find_seq_conflict(&t).is_none());
    }

    #[test]
    fn rst_after_complete_response_is_not_premature() {
        let body = b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nok";
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(
                10,
                Direction::Inbound,
                52,
                500,
                &[TcpFlag::Syn, TcpFlag::Ack],
                None,
            ),
            ev(20, Direction::Inbound, 52, 501, &[TcpFlag::Ack], Some(body)),
            ev(30, Direction::Inbound, 52, 600, &[TcpFlag::Rst], None),
        ]);
        assert_eq!(premature_rst(&t), None);
    }

    #[test]
    fn rst_before_complete_response_is_premature() {
        let partial = b"HTTP/1.1 200 OK\r\nContent-Length: 100\r\n\r\nonly-a-bit";
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(
                10,
                Direction::Inbound,
                52,
                500,
                &[TcpFlag::Syn, TcpFlag::Ack],
                None,
            ),
            ev(
                20,
                Direction::Inbound,
                52,
                501,
                &[TcpFlag::Ack],
                Some(partial),
            ),
            ev(30, Direction::Inbound, 49, 560, &[TcpFlag::Rst], None),
        ]);
        assert_eq!(premature_rst(&t), Some(3));
    }

    #[test]
    fn rst_with_no_response_at_all_is_premature() {
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(10, Direction::Inbound, 52, 0, &[TcpFlag::Rst], None),
        ]);
        assert_eq!(premature_rst(&t), Some(1));
    }

    #[test]
    fn ttl_mode_prefers_majority() {
        let t = trace(vec![
            ev(0, Direction::Outbound, 64, 100, &[TcpFlag::Syn], None),
            ev(
                10,
                Direction::Inbound,
                52,
                500,
                &[TcpFlag::Syn, TcpFlag::Ack],
                None,
            ),
            ev(
                20,
                Direction::Inbound,
                52,
                501,
                &[TcpFlag::Ack],
                Some(b"ab"),
            ),
            ev(30, Direction::Inbound, 49, 600, &[TcpFlag::Rst], None),
        ]);
        assert_eq!(inbound_ttl_mode(&t), Some(52));
    }
}
