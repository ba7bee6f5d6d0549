//! Central scheduling and ingestion service.
//!
//! Vantage points register (opt-in) and receive a submission token;
//! experiments are scheduled against all registered nodes or a subset;
//! agents poll for their assignments and submit raw or classified
//! report records, which are persisted durably and deduplicated by
//! (vantage, target, started_at).

mod store;
mod wire;

pub use store::{Store, StoreState};
pub use wire::{Client, Request, Response, Server};

use chrono::{DateTime, Duration, Utc};
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ModelError, RawMeasurement, ReportRecord, TestTarget, Validate, VantagePoint,
    REPORT_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("vantage id `{0}` is already registered")]
    DuplicateVantage(String),
    #[error("vantage id `{0}` is not registered")]
    UnknownVantage(String),
    #[error("invalid submission token")]
    InvalidToken,
    #[error("target list `{0}` does not exist")]
    DanglingTargetList(String),
    #[error("experiment spec `{0}` already exists")]
    DuplicateSpec(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("store corrupt: {0}")]
    Corrupt(String),
    #[error("wire: {0}")]
    Wire(String),
}

/// Which vantage points an experiment runs on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Selector {
    All,
    Country { country: String },
    Ids { ids: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Recurrence {
    OneShot,
    EveryHours { hours: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub target_list: String,
    pub selector: Selector,
    pub recurrence: Recurrence,
    pub created_at: DateTime<Utc>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.id.is_empty() {
            return Err(ControllerError::InvalidSpec("empty spec id".into()));
        }
        if let Recurrence::EveryHours { hours } = self.recurrence {
            if hours == 0 {
                return Err(ControllerError::InvalidSpec(
                    "recurrence interval must be at least one hour".into(),
                ));
            }
        }
        if let Selector::Country { country } = &self.selector {
            if country.len() != 2 || !country.bytes().all(|b| b.is_ascii_uppercase()) {
                return Err(ControllerError::InvalidSpec(format!(
                    "selector country `{country}` is not an ISO alpha-2 code"
                )));
            }
        }
        Ok(())
    }

    /// Due times within [created_at, created_at + horizon).
    pub fn occurrences(&self, horizon: Duration) -> Vec<DateTime<Utc>> {
        match self.recurrence {
            Recurrence::OneShot => vec![self.created_at],
            Recurrence::EveryHours { hours } => {
                let mut out = Vec::new();
                let end = self.created_at + horizon;
                let mut due = self.created_at;
                while due < end {
                    out.push(due);
                    due += Duration::hours(hours as i64);
                }
                out
            }
        }
    }
}

/// One pending unit of work for one vantage point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub spec_id: String,
    pub vantage: String,
    pub target_list: String,
    pub due_at: DateTime<Utc>,
    pub delivered: bool,
}

/// Query predicate over stored reports; all given fields must match.
/// The time range is inclusive on both ends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vantage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<DateTime<Utc>>,
}

/// Per-record submission failure, reported back to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRecordError {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    /// Records accepted from this call, including resubmissions.
    pub accepted: usize,
    /// Distinct records in the store after this call.
    pub stored_total: usize,
    pub errors: Vec<SubmitRecordError>,
}

/// Deduplication key: one stored record per test execution.
pub fn report_key(m: &RawMeasurement) -> (DateTime<Utc>, String, String) {
    (m.started_at, m.vantage.clone(), m.target.url.clone())
}

/// The controller service: a persistent store plus operation semantics.
pub struct Controller {
    store: Store,
    token_rng: rand_chacha::ChaCha8Rng,
}

impl Controller {
    /// Opens (or creates) the controller state under `dir`. Restarting
    /// over the same directory recovers everything durably recorded.
    pub fn open(dir: &std::path::Path) -> Result<Self, ControllerError> {
        Self::open_seeded(dir, None)
    }

    /// Deterministic token generation for tests.
    pub fn open_seeded(
        dir: &std::path::Path,
        token_seed: Option<u64>,
    ) -> Result<Self, ControllerError> {
        let store = Store::open(dir)?;
        let token_rng = match token_seed {
            Some(seed) => rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            None => rand_chacha::ChaCha8Rng::from_entropy(),
        };
        Ok(Controller { store, token_rng })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Registers an opt-in vantage point, returning the 128-bit token
    /// later submissions must present.
    pub fn register_vantage(&mut self, vp: VantagePoint) -> Result<String, ControllerError> {
        vp.validate()?;
        if self.store.state().vantage_points.contains_key(&vp.id) {
            return Err(ControllerError::DuplicateVantage(vp.id));
        }
        let mut bytes = [0u8; 16];
        self.token_rng.fill_bytes(&mut bytes);
        let token: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        self.store.record_registration(vp, token.clone())?;
        Ok(token)
    }

    pub fn vantage(&self, id: &str) -> Option<&VantagePoint> {
        self.store.state().vantage_points.get(id)
    }

    pub fn vantage_points(&self) -> Vec<VantagePoint> {
        self.store
            .state()
            .vantage_points
            .values()
            .cloned()
            .collect()
    }

    pub fn add_target_list(
        &mut self,
        name: &str,
        targets: Vec<TestTarget>,
    ) -> Result<(), ControllerError> {
        for t in &targets {
            t.validate()?;
        }
        self.store.record_target_list(name.to_string(), targets)
    }

    /// Resolves the selector against the registry, expands occurrences
    /// over the horizon, and persists one assignment per (vantage,
    /// occurrence). Agents pick them up when they poll.
    pub fn schedule(
        &mut self,
        spec: ExperimentSpec,
        horizon: Duration,
    ) -> Result<Vec<Assignment>, ControllerError> {
        spec.validate()?;
        if self.store.state().specs.contains_key(&spec.id) {
            return Err(ControllerError::DuplicateSpec(spec.id));
        }
        if !self
            .store
            .state()
            .target_lists
            .contains_key(&spec.target_list)
        {
            return Err(ControllerError::DanglingTargetList(spec.target_list));
        }
        let selected = self.select_vantage_ids(&spec.selector);
        let mut assignments = Vec::new();
        for due_at in spec.occurrences(horizon) {
            for vantage in &selected {
                assignments.push(Assignment {
                    spec_id: spec.id.clone(),
                    vantage: vantage.clone(),
                    target_list: spec.target_list.clone(),
                    due_at,
                    delivered: false,
                });
            }
        }
        self.store.record_schedule(spec, assignments.clone())?;
        Ok(assignments)
    }

    pub fn select_vantage_ids(&self, selector: &Selector) -> Vec<String> {
        let registry = &self.store.state().vantage_points;
        match selector {
            Selector::All => registry.keys().cloned().collect(),
            Selector::Country { country } => registry
                .values()
                .filter(|vp| &vp.country == country)
                .map(|vp| vp.id.clone())
                .collect(),
            Selector::Ids { ids } => registry
                .keys()
                .filter(|id| ids.contains(id))
                .cloned()
                .collect(),
        }
    }

    fn vantage_for_token(&self, token: &str) -> Result<String, ControllerError> {
        self.store
            .state()
            .tokens
            .get(token)
            .cloned()
            .ok_or(ControllerError::InvalidToken)
    }

    /// Returns (and marks delivered) the caller's pending assignments.
    pub fn poll_assignments(&mut self, token: &str) -> Result<Vec<Assignment>, ControllerError> {
        let vantage = self.vantage_for_token(token)?;
        let pending: Vec<Assignment> = self
            .store
            .state()
            .assignments
            .iter()
            .filter(|a| a.vantage == vantage && !a.delivered)
            .cloned()
            .collect();
        if !pending.is_empty() {
            self.store.record_delivery(&pending)?;
        }
        Ok(pending)
    }

    /// Ingests a batch of report records. Idempotent per report key;
    /// invalid records are rejected individually and never abort the
    /// batch. Records marked local-only are refused: the vantage point
    /// withheld consent to publish them.
    pub fn submit_report(
        &mut self,
        token: &str,
        records: &[serde_json::Value],
    ) -> Result<SubmitAck, ControllerError> {
        let vantage = self.vantage_for_token(token)?;
        let mut accepted = Vec::new();
        let mut errors = Vec::new();
        for (index, value) in records.iter().enumerate() {
            match parse_submitted_record(value, &vantage) {
                Ok(record) => accepted.push(record),
                Err(reason) => errors.push(SubmitRecordError { index, reason }),
            }
        }
        let accepted_count = accepted.len();
        if !accepted.is_empty() {
            self.store.record_reports(accepted)?;
        }
        Ok(SubmitAck {
            accepted: accepted_count,
            stored_total: self.store.state().reports.len(),
            errors,
        })
    }

    /// Stored records matching every given predicate, in stable
    /// (started_at, vantage, target) order.
    pub fn query_reports(&self, filter: &ReportFilter) -> Vec<ReportRecord> {
        let state = self.store.state();
        state
            .reports
            .values()
            .filter(|r| {
                let m = &r.measurement;
                if let Some(v) = &filter.vantage {
                    if &m.vantage != v {
                        return false;
                    }
                }
                if let Some(t) = &filter.target {
                    if &m.target.url != t {
                        return false;
                    }
                }
                if let Some(c) = &filter.country {
                    match state.vantage_points.get(&m.vantage) {
                        Some(vp) if &vp.country == c => {}
                        _ => return false,
                    }
                }
                if let Some(from) = filter.from {
                    if m.started_at < from {
                        return false;
                    }
                }
                if let Some(to) = filter.to {
                    if m.started_at > to {
                        return false;
                    }
                }
                true
            })
            .cloned()
            .collect()
    }

    /// Writes the compacted index and truncates the log.
    pub fn compact(&mut self) -> Result<(), ControllerError> {
        self.store.compact()
    }
}

fn parse_submitted_record(
    value: &serde_json::Value,
    vantage: &str,
) -> Result<ReportRecord, String> {
    let record: ReportRecord =
        serde_json::from_value(value.clone()).map_err(|e| format!("parse: {e}"))?;
    if record.v != REPORT_SCHEMA_VERSION {
        return Err(format!(
            "unsupported schema version {} (expected {REPORT_SCHEMA_VERSION})",
            record.v
        ));
    }
    record.validate().map_err(|e| e.to_string())?;
    if record.local_only {
        return Err("record is marked local-only and must not be submitted".into());
    }
    if record.measurement.vantage != vantage {
        return Err(format!(
            "record vantage `{}` does not match token holder `{vantage}`",
            record.measurement.vantage
        ));
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Consent, TargetOrigin, VantageKind};
    use chrono::TimeZone;

    fn vp(id: &str, country: &str) -> VantagePoint {
        VantagePoint::new(id, country, 64496, VantageKind::Vpn, Consent::OptIn).unwrap()
    }

    fn target(url: &str) -> TestTarget {
        TestTarget::new(url, "MISC", TargetOrigin::GlobalList).unwrap()
    }

    fn measurement(vantage: &str, url: &str, minute: u32) -> RawMeasurement {
        RawMeasurement {
            vantage: vantage.into(),
            target: target(url),
            started_at: chrono::Utc
                .with_ymd_and_hms(2020, 6, 1, 0, minute, 0)
                .unwrap(),
            dns: vec![],
            http: Some(crate::model::HttpObservation {
                request_line: "GET / HTTP/1.1".into(),
                request_headers: vec![],
                redirect_chain: vec![],
                status: Some(200),
                response_headers: vec![],
                body: None,
                body_len: 10,
            }),
            control_http: None,
            tls: None,
            trace: None,
            connect: None,
            proxy_probes: vec![],
        }
    }

    fn record_value(vantage: &str, url: &str, minute: u32) -> serde_json::Value {
        serde_json::to_value(ReportRecord::raw(measurement(vantage, url, minute))).unwrap()
    }

    #[test]
    fn register_query_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        let token = c.register_vantage(vp("vp-1", "IR")).unwrap();
        assert_eq!(token.len(), 32);
        assert!(c.vantage("vp-1").is_some());
        assert!(c.vantage("vp-2").is_none());
        assert!(matches!(
            c.register_vantage(vp("vp-1", "IR")),
            Err(ControllerError::DuplicateVantage(_))
        ));
    }

    #[test]
    fn selector_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        for (id, country) in [
            ("ir-1", "IR"),
            ("ir-2", "IR"),
            ("us-1", "US"),
            ("us-2", "US"),
            ("us-3", "US"),
        ] {
            c.register_vantage(vp(id, country)).unwrap();
        }
        c.add_target_list("global", vec![target("http://x.com/")])
            .unwrap();
        let created = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
        let spec = |id: &str, selector| ExperimentSpec {
            id: id.into(),
            target_list: "global".into(),
            selector,
            recurrence: Recurrence::OneShot,
            created_at: created,
        };
        let ir = c
            .schedule(
                spec(
                    "ir-only",
                    Selector::Country {
                        country: "IR".into(),
                    },
                ),
                Duration::days(1),
            )
            .unwrap();
        assert_eq!(ir.len(), 2);
        let all = c
            .schedule(spec("all", Selector::All), Duration::days(1))
            .unwrap();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn recurrence_occurrences() {
        let created = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
        let spec = ExperimentSpec {
            id: "rec".into(),
            target_list: "global".into(),
            selector: Selector::All,
            recurrence: Recurrence::EveryHours { hours: 24 },
            created_at: created,
        };
        assert_eq!(spec.occurrences(Duration::days(3)).len(), 3);
        let one = ExperimentSpec {
            recurrence: Recurrence::OneShot,
            ..spec
        };
        assert_eq!(one.occurrences(Duration::days(3)).len(), 1);
    }

    #[test]
    fn dangling_target_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        let spec = ExperimentSpec {
            id: "x".into(),
            target_list: "missing".into(),
            selector: Selector::All,
            recurrence: Recurrence::OneShot,
            created_at: chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap(),
        };
        assert!(matches!(
            c.schedule(spec, Duration::days(1)),
            Err(ControllerError::DanglingTargetList(_))
        ));
    }

    #[test]
    fn submit_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        let token = c.register_vantage(vp("vp-1", "IR")).unwrap();
        let records = vec![
            record_value("vp-1", "http://a.com/", 0),
            record_value("vp-1", "http://b.com/", 1),
            record_value("vp-1", "http://c.com/", 2),
        ];
        let ack = c.submit_report(&token, &records).unwrap();
        assert_eq!(ack.accepted, 3);
        assert_eq!(ack.stored_total, 3);
        let again = c.submit_report(&token, &records).unwrap();
        assert_eq!(again.accepted, 3);
        assert_eq!(again.stored_total, 3);
    }

    #[test]
    fn submit_rejects_bad_token_bad_records_and_local_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        let token = c.register_vantage(vp("vp-1", "IR")).unwrap();
        assert!(matches!(
            c.submit_report("deadbeef", &[]),
            Err(ControllerError::InvalidToken)
        ));
        let mut local = ReportRecord::raw(measurement("vp-1", "http://a.com/", 0));
        local.local_only = true;
        let batch = vec![
            serde_json::to_value(&local).unwrap(),
            serde_json::json!({"v": 1, "garbage": true}),
            record_value("vp-2", "http://b.com/", 1),
            record_value("vp-1", "http://ok.com/", 2),
        ];
        let ack = c.submit_report(&token, &batch).unwrap();
        assert_eq!(ack.accepted, 1);
        assert_eq!(ack.errors.len(), 3);
        assert_eq!(ack.stored_total, 1);
    }

    #[test]
    fn poll_marks_delivered() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        let token = c.register_vantage(vp("vp-1", "IR")).unwrap();
        c.add_target_list("global", vec![target("http://x.com/")])
            .unwrap();
        let spec = ExperimentSpec {
            id: "one".into(),
            target_list: "global".into(),
            selector: Selector::All,
            recurrence: Recurrence::OneShot,
            created_at: chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap(),
        };
        c.schedule(spec, Duration::days(1)).unwrap();
        let first = c.poll_assignments(&token).unwrap();
        assert_eq!(first.len(), 1);
        let second = c.poll_assignments(&token).unwrap();
        assert!(second.is_empty());
    }

    #[test]
    fn query_filters_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
        let t_ir = c.register_vantage(vp("ir-1", "IR")).unwrap();
        let t_us = c.register_vantage(vp("us-1", "US")).unwrap();
        c.submit_report(
            &t_ir,
            &[
                record_value("ir-1", "http://a.com/", 5),
                record_value("ir-1", "http://b.com/", 1),
            ],
        )
        .unwrap();
        c.submit_report(&t_us, &[record_value("us-1", "http://a.com/", 3)])
            .unwrap();
        let all = c.query_reports(&ReportFilter::default());
        let starts: Vec<_> = all.iter().map(|r| r.measurement.started_at).collect();
        let mut sorted = starts.clone();
        sorted.sort();
        assert_eq!(starts, sorted);
        let ir_only = c.query_reports(&ReportFilter {
            country: Some("IR".into()),
            ..Default::default()
        });
        assert_eq!(ir_only.len(), 2);
        // inclusive bounds on both ends
        let from = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 1, 0).unwrap();
        let to = chrono::Utc.with_ymd_and_hms(2020, 6, 1, 0, 3, 0).unwrap();
        let ranged = c.query_reports(&ReportFilter {
            from: Some(from),
            to: Some(to),
            ..Default::default()
        });
        assert_eq!(ranged.len(), 2);
        assert!(c
            .query_reports(&ReportFilter {
                vantage: Some("nobody".into()),
                ..Default::default()
            })
            .is_empty());
    }

    #[test]
    fn durability_across_restart_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let token;
        {
            let mut c = Controller::open_seeded(dir.path(), Some(1)).unwrap();
            token = c.register_vantage(vp("vp-1", "IR")).unwrap();
            c.add_target_list("global", vec![target("http://x.com/")])
                .unwrap();
            c.submit_report(&token, &[record_value("vp-1", "http://a.com/", 0)])
                .unwrap();
            c.compact().unwrap();
            c.submit_report(&token, &[record_value("vp-1", "http://b.com/", 1)])
                .unwrap();
        }
        let mut c = Controller::open_seeded(dir.path(), Some(2)).unwrap();
        assert!(c.vantage("vp-1").is_some());
        assert_eq!(c.query_reports(&ReportFilter::default()).len(), 2);
        // token still valid after restart
        let ack = c
            .submit_report(&token, &[record_value("vp-1", "http://c.com/", 2)])
            .unwrap();
        assert_eq!(ack.stored_total, 3);
    }
}
