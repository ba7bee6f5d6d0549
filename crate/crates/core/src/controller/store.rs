//! Durable controller state: an append-only event log plus a compacted
//! snapshot index, both line-delimited JSON. Opening a store replays the
//! snapshot and then the log, so a crash between appends loses at most
//! the unwritten suffix.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{ReportRecord, TestTarget, VantagePoint};

use super::{report_key, Assignment, ControllerError, ExperimentSpec};

const LOG_FILE: &str = "controller.log";
const SNAPSHOT_FILE: &str = "controller.index";
const SNAPSHOT_VERSION: u32 = 1;
/// Events between automatic compactions.
const COMPACT_EVERY: usize = 512;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
enum StoreEvent {
    VantageRegistered {
        vp: VantagePoint,
        token: String,
    },
    TargetListAdded {
        name: String,
        targets: Vec<TestTarget>,
    },
    SpecAdded {
        spec: ExperimentSpec,
        assignments: Vec<Assignment>,
    },
    AssignmentsDelivered {
        spec_id: String,
        vantage: String,
        due_at: DateTime<Utc>,
    },
    ReportStored {
        record: Box<ReportRecord>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogLine {
    v: u32,
    #[serde(flatten)]
    event: StoreEvent,
}

/// In-memory controller state, rebuilt from disk on open.
#[derive(Debug, Default, Clone)]
pub struct StoreState {
    pub vantage_points: BTreeMap<String, VantagePoint>,
    /// token -> vantage id
    pub tokens: BTreeMap<String, String>,
    pub target_lists: BTreeMap<String, Vec<TestTarget>>,
    pub specs: BTreeMap<String, ExperimentSpec>,
    pub assignments: Vec<Assignment>,
    /// (started_at, vantage, target url) -> record
    pub reports: BTreeMap<(DateTime<Utc>, String, String), ReportRecord>,
}

impl StoreState {
    fn apply(&mut self, event: StoreEvent) {
        match event {
            StoreEvent::VantageRegistered { vp, token } => {
                self.tokens.insert(token, vp.id.clone());
                self.vantage_points.insert(vp.id.clone(), vp);
            }
            StoreEvent::TargetListAdded { name, targets } => {
                self.target_lists.insert(name, targets);
            }
            StoreEvent::SpecAdded { spec, assignments } => {
                self.specs.insert(spec.id.clone(), spec);
                self.assignments.extend(assignments);
            }
            StoreEvent::AssignmentsDelivered {
                spec_id,
                vantage,
                due_at,
            } => {
                for a in &mut self.assignments {
                    if a.spec_id == spec_id && a.vantage == vantage && a.due_at == due_at {
                        a.delivered = true;
                    }
                }
            }
            StoreEvent::ReportStored { record } => {
                self.reports
                    .insert(report_key(&record.measurement), *record);
            }
        }
    }
}

/// Snapshot document written by compaction.
#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    v: u32,
    vantage_points: Vec<VantagePoint>,
    tokens: Vec<(String, String)>,
    target_lists: Vec<(String, Vec<TestTarget>)>,
    specs: Vec<ExperimentSpec>,
    assignments: Vec<Assignment>,
    reports: Vec<ReportRecord>,
}

impl Snapshot {
    fn from_state(state: &StoreState) -> Self {
        Snapshot {
            v: SNAPSHOT_VERSION,
            vantage_points: state.vantage_points.values().cloned().collect(),
            tokens: state
                .tokens
                .iter()
                .map(|(t, v)| (t.clone(), v.clone()))
                .collect(),
            target_lists: state
                .target_lists
                .iter()
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
            specs: state.specs.values().cloned().collect(),
            assignments: state.assignments.clone(),
            reports: state.reports.values().cloned().collect(),
        }
    }

    fn into_state(self) -> StoreState {
        let mut state = StoreState {
            vantage_points: self
                .vantage_points
                .into_iter()
                .map(|vp| (vp.id.clone(), vp))
                .collect(),
            tokens: self.tokens.into_iter().collect(),
            target_lists: self.target_lists.into_iter().collect(),
            specs: self.specs.into_iter().map(|s| (s.id.clone(), s)).collect(),
            assignments: self.assignments,
            reports: BTreeMap::new(),
        };
        for record in self.reports {
            state
                .reports
                .insert(report_key(&record.measurement), record);
        }
        state
    }
}

pub struct Store {
    dir: PathBuf,
    log: File,
    state: StoreState,
    events_since_compact: usize,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, ControllerError> {
        std::fs::create_dir_all(dir)?;
        let mut state = StoreState::default();
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        if snapshot_path.exists() {
            let text = std::fs::read_to_string(&snapshot_path)?;
            let snapshot: Snapshot = serde_json::from_str(&text)
                .map_err(|e| ControllerError::Corrupt(format!("snapshot: {e}")))?;
            if snapshot.v != SNAPSHOT_VERSION {
                return Err(ControllerError::Corrupt(format!(
                    "snapshot version {} unsupported",
                    snapshot.v
                )));
            }
            state = snapshot.into_state();
        }
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            let text = std::fs::read_to_string(&log_path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: LogLine = serde_json::from_str(line)
                    .map_err(|e| ControllerError::Corrupt(format!("log line {}: {e}", i + 1)))?;
                state.apply(parsed.event);
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        Ok(Store {
            dir: dir.to_path_buf(),
            log,
            state,
            events_since_compact: 0,
        })
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    fn append(&mut self, event: StoreEvent) -> Result<(), ControllerError> {
        let line = serde_json::to_string(&LogLine {
            v: SNAPSHOT_VERSION,
            event: event.clone(),
        })
        .expect("store events always serialize");
        writeln!(self.log, "{line}")?;
        self.log.flush()?;
        self.state.apply(event);
        self.events_since_compact += 1;
        if self.events_since_compact >= COMPACT_EVERY {
            self.compact()?;
        }
        Ok(())
    }

    pub fn record_registration(
        &mut self,
        vp: VantagePoint,
        token: String,
    ) -> Result<(), ControllerError> {
        self.append(StoreEvent::VantageRegistered { vp, token })
    }

    pub fn record_target_list(
        &mut self,
        name: String,
        targets: Vec<TestTarget>,
    ) -> Result<(), ControllerError> {
        self.append(StoreEvent::TargetListAdded { name, targets })
    }

    pub fn record_schedule(
        &mut self,
        spec: ExperimentSpec,
        assignments: Vec<Assignment>,
    ) -> Result<(), ControllerError> {
        self.append(StoreEvent::SpecAdded { spec, assignments })
    }

    pub fn record_delivery(&mut self, delivered: &[Assignment]) -> Result<(), ControllerError> {
        for a in delivered {
            self.append(StoreEvent::AssignmentsDelivered {
                spec_id: a.spec_id.clone(),
                vantage: a.vantage.clone(),
                due_at: a.due_at,
            })?;
        }
        Ok(())
    }

    pub fn record_reports(&mut self, records: Vec<ReportRecord>) -> Result<(), ControllerError> {
        for record in records {
            self.append(StoreEvent::ReportStored {
                record: Box::new(record),
            })?;
        }
        Ok(())
    }

    /// Writes the full state to the snapshot file atomically and resets
    /// the log.
    pub fn compact(&mut self) -> Result<(), ControllerError> {
        let snapshot = Snapshot::from_state(&self.state);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let text = serde_json::to_string(&snapshot).expect("snapshots always serialize");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.log = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(self.dir.join(LOG_FILE))?;
        self.events_since_compact = 0;
        Ok(())
    }
}
