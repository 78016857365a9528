//! Append-only coder session logs and their accuracy/speed summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::is_valid_code;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("event for session `{got}` appended to session `{expected}`")]
    WrongSession { expected: String, got: String },
    #[error("timestamp {got} is earlier than the previous event ({previous})")]
    Timestamp { previous: u64, got: u64 },
    #[error("invalid payload `{payload}` for {action:?}")]
    Payload { action: Action, payload: String },
    #[error("record_id is empty")]
    EmptyRecord,
    #[error("{path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accepted,
    Rejected,
    Modified,
    SupportOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub record_id: String,
    pub diagnosis_index: usize,
    pub action: Action,
    /// A code, or a support level for overrides.
    pub payload: String,
    /// Milliseconds since the record was opened.
    pub elapsed_ms: u64,
    /// Workbench mode the event was recorded under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

const SUPPORT_LEVELS: [&str; 3] = ["Fully", "Partially", "Unable"];

/// Checks one event on its own and against the previous event of its session.
pub fn validate_event(event: &SessionEvent, previous: Option<&SessionEvent>) -> Result<(), SessionError> {
    if event.record_id.trim().is_empty() {
        return Err(SessionError::EmptyRecord);
    }
    let payload_ok = match event.action {
        Action::Accepted | Action::Rejected | Action::Modified => is_valid_code(&event.payload),
        Action::SupportOverride => SUPPORT_LEVELS.contains(&event.payload.as_str()),
    };
    if !payload_ok {
        return Err(SessionError::Payload {
            action: event.action,
            payload: event.payload.clone(),
        });
    }
    if let Some(prev) = previous {
        if prev.session_id != event.session_id {
            return Err(SessionError::WrongSession {
                expected: prev.session_id.clone(),
                got: event.session_id.clone(),
            });
        }
        if event.timestamp < prev.timestamp {
            return Err(SessionError::Timestamp {
                previous: prev.timestamp,
                got: event.timestamp,
            });
        }
    }
    Ok(())
}

/// One session's events, mirrored to a newline-delimited file when backed by one.
#[derive(Debug)]
pub struct SessionLog {
    session_id: String,
    path: Option<PathBuf>,
    events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn in_memory(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            path: None,
            events: Vec::new(),
        }
    }

    /// Opens or creates the log at `path`, replaying and validating what is there.
    pub fn open(session_id: impl Into<String>, path: &Path) -> Result<Self, SessionError> {
        let mut log = Self {
            session_id: session_id.into(),
            path: Some(path.to_path_buf()),
            events: Vec::new(),
        };
        let io = |source| SessionError::Io {
            path: path.display().to_string(),
            source,
        };
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| SessionError::Corrupt {
                    path: path.display().to_string(),
                    line: n + 1,
                    message,
                };
                let event: SessionEvent = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                log.check(&event).map_err(|e| corrupt(e.to_string()))?;
                log.events.push(event);
            }
        }
        Ok(log)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    fn check(&self, event: &SessionEvent) -> Result<(), SessionError> {
        if event.session_id != self.session_id {
            return Err(SessionError::WrongSession {
                expected: self.session_id.clone(),
                got: event.session_id.clone(),
            });
        }
        validate_event(event, self.events.last())
    }

    /// Validates, persists, then records the event. Nothing is kept on failure.
    pub fn append(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        self.check(&event)?;
        if let Some(path) = &self.path {
            let io = |source| SessionError::Io {
                path: path.display().to_string(),
                source,
            };
            let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io)?;
            file.flush().map_err(io)?;
        }
        self.events.push(event);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub events: usize,
    /// Diagnoses with an accept, modify or reject decision.
    pub decisions: usize,
    pub correct: usize,
    /// `correct / decisions` among decisions that have a gold code.
    pub accuracy: Option<f64>,
    pub records: usize,
    pub mean_seconds_per_record: Option<f64>,
    pub support_overrides: usize,
}

/// Folds a session's events into accuracy and speed.
///
/// A diagnosis's final code is the payload of its last accept or modify event; a
/// diagnosis with only rejections has none. A record's time is the largest
/// `elapsed_ms` among its decision events.
pub fn summarize_session<F>(session_id: &str, events: &[SessionEvent], gold: F) -> SessionSummary
where
    F: Fn(&str, usize) -> Option<String>,
{
    let mut decided: BTreeMap<(&str, usize), Option<&str>> = BTreeMap::new();
    let mut record_ms: BTreeMap<&str, u64> = BTreeMap::new();
    let mut overrides = 0;
    for e in events {
        let key = (e.record_id.as_str(), e.diagnosis_index);
        match e.action {
            Action::Accepted | Action::Modified => {
                decided.insert(key, Some(e.payload.as_str()));
            }
            Action::Rejected => {
                decided.entry(key).or_insert(None);
            }
            Action::SupportOverride => {
                overrides += 1;
                continue;
            }
        }
        let t = record_ms.entry(e.record_id.as_str()).or_insert(0);
        *t = (*t).max(e.elapsed_ms);
    }
    let mut judged = 0;
    let mut correct = 0;
    for ((record, index), code) in &decided {
        if let Some(g) = gold(record, *index) {
            judged += 1;
            if code.is_some_and(|c| c == g) {
                correct += 1;
            }
        }
    }
    let records: BTreeSet<&str> = record_ms.keys().copied().collect();
    let mean_seconds = if record_ms.is_empty() {
        None
    } else {
        Some(record_ms.values().map(|ms| *ms as f64 / 1000.0).sum::<f64>() / record_ms.len() as f64)
    };
    SessionSummary {
        session_id: session_id.to_string(),
        events: events.len(),
        decisions: decided.len(),
        correct,
        accuracy: (judged > 0).then(|| correct as f64 / judged as f64),
        records: records.len(),
        mean_seconds_per_record: mean_seconds,
        support_overrides: overrides,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(ts: u64, record: &str, action: Action, payload: &str, elapsed_ms: u64) -> SessionEvent {
        SessionEvent {
            session_id: "s1".into(),
            timestamp: ts,
            record_id: record.into(),
            diagnosis_index: 0,
            action,
            payload: payload.into(),
            elapsed_ms,
            mode: None,
        }
    }

    fn gold(record: &str, _: usize) -> Option<String> {
        Some(if record == "r1" { "A15.0" } else { "B20" }.to_string())
    }

    #[test]
    fn two_accepts_one_correct() {
        let events = [
            event(1_000, "r1", Action::Accepted, "A15.0", 100_000),
            event(2_000, "r2", Action::Accepted, "A15.0", 80_000),
        ];
        let s = summarize_session("s1", &events, gold);
        assert_eq!(s.accuracy, Some(0.5));
        assert_eq!(s.mean_seconds_per_record, Some(90.0));
        assert_eq!(s.decisions, 2);
    }

    #[test]
    fn later_decisions_win_and_overrides_do_not_count() {
        let events = [
            event(1, "r1", Action::Accepted, "A15.1", 10_000),
            event(2, "r1", Action::Modified, "A15.0", 20_000),
            event(3, "r1", Action::SupportOverride, "Fully", 25_000),
            event(4, "r2", Action::Rejected, "B21", 5_000),
        ];
        let s = summarize_session("s1", &events, gold);
        assert_eq!((s.decisions, s.correct, s.support_overrides), (2, 1, 1));
        assert_eq!(s.mean_seconds_per_record, Some(12.5));
    }

    #[test]
    fn log_rejects_bad_events_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.ndjson");
        let mut log = SessionLog::open("s1", &path).unwrap();
        log.append(event(10, "r1", Action::Accepted, "A15.0", 1)).unwrap();
        assert!(matches!(
            log.append(event(9, "r1", Action::Accepted, "A15.0", 1)),
            Err(SessionError::Timestamp { previous: 10, got: 9 })
        ));
        assert!(matches!(
            log.append(event(11, "r1", Action::SupportOverride, "Mostly", 1)),
            Err(SessionError::Payload { .. })
        ));
        assert!(matches!(
            log.append(event(11, "r1", Action::Accepted, "not a code", 1)),
            Err(SessionError::Payload { .. })
        ));
        let mut foreign = event(12, "r1", Action::Accepted, "A15.0", 1);
        foreign.session_id = "s2".into();
        assert!(matches!(log.append(foreign), Err(SessionError::WrongSession { .. })));
        log.append(event(10, "r2", Action::Rejected, "B20", 2)).unwrap();

        let replayed = SessionLog::open("s1", &path).unwrap();
        assert_eq!(replayed.events(), log.events());
        assert_eq!(
            summarize_session("s1", replayed.events(), gold),
            summarize_session("s1", log.events(), gold)
        );
    }
}
