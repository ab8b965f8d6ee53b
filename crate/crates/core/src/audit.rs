//! Append-only audit log and end-of-day reporting.
//!
//! Events are JSON lines with a fixed key set; sequence numbers increase
//! strictly and prior entries are never touched. Reports fold a day's
//! events into per-server summaries that consolidate across servers by
//! summing counts and recomputing percentages.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    BadLine {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: bad timestamp {ts:?}")]
    BadTimestamp { line: usize, ts: String },
    #[error("line {line}: unknown outcome {outcome:?}")]
    UnknownOutcome { line: usize, outcome: String },
    #[error("event timestamp {got} precedes the last logged timestamp {last}")]
    TimestampRegression { got: u64, last: u64 },
    #[error("line {line}: sequence {got} does not follow {expected}")]
    BadSequence { line: usize, got: u64, expected: u64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("cannot consolidate reports for different dates: {0} vs {1}")]
    MixedDates(String, String),
    #[error("technique capacity must be positive")]
    ZeroCapacity,
    #[error("enrolled count {enrolled} exceeds capacity {capacity}")]
    OverCapacity { enrolled: u64, capacity: u64 },
}

/// Closed set of loggable outcomes: the login decision outcomes, the
/// enrollment marker, the emergency-access actions, and referral failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Accept,
    RejectSalt,
    RejectBiometric,
    RejectTemplate,
    UnknownUser,
    LockedOut,
    Enroll,
    EamOpen,
    EamDenied,
    EamUpdateReference,
    EamResetReferences,
    EamAddProfile,
    EamOpFailed,
    ReferralFailed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Accept => "Accept",
            EventKind::RejectSalt => "RejectSalt",
            EventKind::RejectBiometric => "RejectBiometric",
            EventKind::RejectTemplate => "RejectTemplate",
            EventKind::UnknownUser => "UnknownUser",
            EventKind::LockedOut => "LockedOut",
            EventKind::Enroll => "Enroll",
            EventKind::EamOpen => "EamOpen",
            EventKind::EamDenied => "EamDenied",
            EventKind::EamUpdateReference => "EamUpdateReference",
            EventKind::EamResetReferences => "EamResetReferences",
            EventKind::EamAddProfile => "EamAddProfile",
            EventKind::EamOpFailed => "EamOpFailed",
            EventKind::ReferralFailed => "ReferralFailed",
        }
    }

    const ALL: [EventKind; 14] = [
        EventKind::Accept,
        EventKind::RejectSalt,
        EventKind::RejectBiometric,
        EventKind::RejectTemplate,
        EventKind::UnknownUser,
        EventKind::LockedOut,
        EventKind::Enroll,
        EventKind::EamOpen,
        EventKind::EamDenied,
        EventKind::EamUpdateReference,
        EventKind::EamResetReferences,
        EventKind::EamAddProfile,
        EventKind::EamOpFailed,
        EventKind::ReferralFailed,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown outcome {s:?}"))
    }
}

/// One audit entry, before a sequence number is assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthEvent {
    /// Unix seconds, UTC.
    pub ts: u64,
    pub server: String,
    /// The user id, or the attempted id for unknown users.
    pub user: String,
    pub outcome: EventKind,
    /// Free-text caller address.
    pub source: String,
    pub is_eam: bool,
    /// Set on referral events at the serving node.
    pub home_server: Option<String>,
}

/// An entry as it sits in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedEvent {
    pub seq: u64,
    pub event: AuthEvent,
}

// Serialized line shape; key order here is the on-disk key order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    seq: u64,
    ts: String,
    server: String,
    user: String,
    outcome: String,
    source: String,
    is_eam: bool,
    home_server: Option<String>,
}

fn rfc3339(ts: u64) -> String {
    let dt: DateTime<Utc> = Utc
        .timestamp_opt(ts as i64, 0)
        .single()
        .expect("unix seconds in range");
    dt.to_rfc3339_opts(SecondsFormat::Secs, true)
}

impl LoggedEvent {
    pub fn to_json_line(&self) -> String {
        let line = EventLine {
            seq: self.seq,
            ts: rfc3339(self.event.ts),
            server: self.event.server.clone(),
            user: self.event.user.clone(),
            outcome: self.event.outcome.as_str().to_string(),
            source: self.event.source.clone(),
            is_eam: self.event.is_eam,
            home_server: self.event.home_server.clone(),
        };
        serde_json::to_string(&line).expect("event serializes")
    }

    fn from_json_line(line_no: usize, text: &str) -> Result<LoggedEvent, AuditError> {
        let line: EventLine = serde_json::from_str(text).map_err(|source| AuditError::BadLine {
            line: line_no,
            source,
        })?;
        let ts = DateTime::parse_from_rfc3339(&line.ts)
            .map_err(|_| AuditError::BadTimestamp {
                line: line_no,
                ts: line.ts.clone(),
            })?
            .timestamp();
        let ts = u64::try_from(ts).map_err(|_| AuditError::BadTimestamp {
            line: line_no,
            ts: line.ts.clone(),
        })?;
        let outcome = line
            .outcome
            .parse()
            .map_err(|_| AuditError::UnknownOutcome {
                line: line_no,
                outcome: line.outcome.clone(),
            })?;
        Ok(LoggedEvent {
            seq: line.seq,
            event: AuthEvent {
                ts,
                server: line.server,
                user: line.user,
                outcome,
                source: line.source,
                is_eam: line.is_eam,
                home_server: line.home_server,
            },
        })
    }
}

/// Append-only event log, optionally backed by a file of JSON lines.
/// A single writer owns the log; readers work on value snapshots.
#[derive(Debug, Default)]
pub struct AuditLog {
    path: Option<PathBuf>,
    events: Vec<LoggedEvent>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog::default()
    }

    /// Opens a file-backed log, loading any existing entries. Appends go
    /// straight to the file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let events = if path.exists() {
            Self::parse(&std::fs::read_to_string(&path)?)?
        } else {
            Vec::new()
        };
        Ok(AuditLog {
            path: Some(path),
            events,
        })
    }

    /// Drops the file binding, keeping loaded events in memory only.
    pub fn detach(&mut self) {
        self.path = None;
    }

    /// Appends one event, returning its sequence number. Sequence numbers
    /// start at 1 and increase by one; timestamps may not go backwards.
    pub fn append(&mut self, event: AuthEvent) -> Result<u64, AuditError> {
        if let Some(last) = self.events.last() {
            if event.ts < last.event.ts {
                return Err(AuditError::TimestampRegression {
                    got: event.ts,
                    last: last.event.ts,
                });
            }
        }
        let seq = self.events.len() as u64 + 1;
        let logged = LoggedEvent { seq, event };
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{}", logged.to_json_line())?;
            file.flush()?;
        }
        self.events.push(logged);
        Ok(seq)
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Parses a whole log file, checking sequence continuity.
    pub fn parse(text: &str) -> Result<Vec<LoggedEvent>, AuditError> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let logged = LoggedEvent::from_json_line(line_no, raw)?;
            let expected = events.len() as u64 + 1;
            if logged.seq != expected {
                return Err(AuditError::BadSequence {
                    line: line_no,
                    got: logged.seq,
                    expected,
                });
            }
            events.push(logged);
        }
        Ok(events)
    }

    pub fn render(events: &[LoggedEvent]) -> String {
        let mut out = String::new();
        for e in events {
            out.push_str(&e.to_json_line());
            out.push('\n');
        }
        out
    }
}

/// Per-server, per-day totals plus the two signed percentage figures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub server_id: String,
    /// ISO date, UTC; empty for a consolidation of nothing.
    pub date: String,
    pub accepts: u64,
    pub rejects: u64,
    pub unknown_attempts: u64,
    pub total_logins: u64,
    pub eam_valid: u64,
    pub eam_invalid: u64,
    pub eam_total: u64,
    /// (accepts - rejects) / total_logins; negative when rejections
    /// outnumber acceptances. Zero when there were no logins.
    pub pct_acceptance: f64,
    /// (eam_valid - eam_invalid) / eam_total; zero when EAM was unused.
    pub pct_eam: f64,
}

impl ReportSummary {
    fn zero(server_id: &str, date: &str) -> Self {
        ReportSummary {
            server_id: server_id.to_string(),
            date: date.to_string(),
            accepts: 0,
            rejects: 0,
            unknown_attempts: 0,
            total_logins: 0,
            eam_valid: 0,
            eam_invalid: 0,
            eam_total: 0,
            pct_acceptance: 0.0,
            pct_eam: 0.0,
        }
    }

    fn recompute_percentages(&mut self) {
        self.pct_acceptance = if self.total_logins == 0 {
            0.0
        } else {
            (self.accepts as f64 - self.rejects as f64) / self.total_logins as f64
        };
        self.pct_eam = if self.eam_total == 0 {
            0.0
        } else {
            (self.eam_valid as f64 - self.eam_invalid as f64) / self.eam_total as f64
        };
    }

    /// Conventional acceptance rate accepts/total, emitted alongside the
    /// signed figure for readers who expect an unsigned rate.
    pub fn conventional_accept_rate(&self) -> f64 {
        if self.total_logins == 0 {
            0.0
        } else {
            self.accepts as f64 / self.total_logins as f64
        }
    }
}

fn event_date(ts: u64) -> NaiveDate {
    Utc.timestamp_opt(ts as i64, 0)
        .single()
        .expect("unix seconds in range")
        .date_naive()
}

/// Folds one server's events for one UTC date into a summary.
///
/// Counting rules: accepts and the three rejection outcomes plus lockouts
/// are logins; unknown-user attempts count toward total logins but toward
/// neither accepts nor rejects. Emergency-access usage is tallied from the
/// events flagged `is_eam`, with denials and failed operations as the
/// invalid side.
pub fn eod_report(events: &[LoggedEvent], server_id: &str, date: NaiveDate) -> ReportSummary {
    let mut summary = ReportSummary::zero(server_id, &date.to_string());
    for logged in events {
        let ev = &logged.event;
        if ev.server != server_id || event_date(ev.ts) != date {
            continue;
        }
        if ev.is_eam {
            match ev.outcome {
                EventKind::EamDenied | EventKind::EamOpFailed => summary.eam_invalid += 1,
                _ => summary.eam_valid += 1,
            }
            summary.eam_total += 1;
            continue;
        }
        match ev.outcome {
            EventKind::Accept => {
                summary.accepts += 1;
                summary.total_logins += 1;
            }
            EventKind::RejectSalt
            | EventKind::RejectBiometric
            | EventKind::RejectTemplate
            | EventKind::LockedOut => {
                summary.rejects += 1;
                summary.total_logins += 1;
            }
            EventKind::UnknownUser => {
                summary.unknown_attempts += 1;
                summary.total_logins += 1;
            }
            // Enrollment and referral-failure markers are recorded but are
            // neither logins nor EAM accesses.
            _ => {}
        }
    }
    summary.recompute_percentages();
    summary
}

/// All servers that appear in the events, sorted.
pub fn servers_in(events: &[LoggedEvent]) -> Vec<String> {
    let mut ids: Vec<String> = events.iter().map(|e| e.event.server.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Sums per-server reports for one date into a consolidated summary.
/// Percentages are recomputed from the summed counts, never averaged.
pub fn consolidate(reports: &[ReportSummary]) -> Result<ReportSummary, ReportError> {
    let mut out = ReportSummary::zero("consolidated", "");
    for r in reports {
        if out.date.is_empty() {
            out.date = r.date.clone();
        } else if out.date != r.date {
            return Err(ReportError::MixedDates(out.date.clone(), r.date.clone()));
        }
        out.accepts += r.accepts;
        out.rejects += r.rejects;
        out.unknown_attempts += r.unknown_attempts;
        out.total_logins += r.total_logins;
        out.eam_valid += r.eam_valid;
        out.eam_invalid += r.eam_invalid;
        out.eam_total += r.eam_total;
    }
    out.recompute_percentages();
    Ok(out)
}

/// Redundancy percentage: enrolled images over the technique's total
/// possibility, times 100.
pub fn pct_redundancy(images_enrolled: u64, technique_capacity: u64) -> Result<f64, ReportError> {
    if technique_capacity == 0 {
        return Err(ReportError::ZeroCapacity);
    }
    if images_enrolled > technique_capacity {
        return Err(ReportError::OverCapacity {
            enrolled: images_enrolled,
            capacity: technique_capacity,
        });
    }
    Ok(100.0 * images_enrolled as f64 / technique_capacity as f64)
}

/// Plain-text table plus a machine-readable JSON block.
pub fn render_report(r: &ReportSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# EOD report - server {} - {}\n",
        r.server_id,
        if r.date.is_empty() { "(no date)" } else { &r.date }
    ));
    out.push_str(
        "# note: unknown-user attempts count toward total logins but toward neither accepts nor rejects\n",
    );
    out.push_str(&format!("accepts            {}\n", r.accepts));
    out.push_str(&format!("rejects            {}\n", r.rejects));
    out.push_str(&format!("unknown_attempts   {}\n", r.unknown_attempts));
    out.push_str(&format!("total_logins       {}\n", r.total_logins));
    out.push_str(&format!("eam_valid          {}\n", r.eam_valid));
    out.push_str(&format!("eam_invalid        {}\n", r.eam_invalid));
    out.push_str(&format!("eam_total          {}\n", r.eam_total));
    out.push_str(&format!(
        "pct_acceptance     {}   # (accepts - rejects) / total_logins, signed\n",
        r.pct_acceptance
    ));
    out.push_str(&format!("pct_eam            {}\n", r.pct_eam));
    out.push_str(&format!(
        "accept_rate        {}   # conventional accepts / total_logins\n",
        r.conventional_accept_rate()
    ));
    out.push_str(&serde_json::to_string(r).expect("summary serializes"));
    out.push('\n');
    out
}
