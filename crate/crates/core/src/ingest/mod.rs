//! Loading per-student JSON session logs from disk.
//!
//! Each file holds one student's session:
//!
//! ```json
//! { "student": "s01", "events": [ { "ts": "2021-09-01T10:00:00.000Z", "action": "Add Wall" },
//!                                 { "ts": "...", "action": "Run Energy Analysis", "netEnergy": -812.5 } ] }
//! ```
//!
//! The student id is the file stem; the `student` field is informational.

mod repair;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde_json::Value;

pub use repair::{diagnose, repair, Diagnostic, DiagnosticKind, RepairLog, RepairOutcome, MAX_PASSES};

use crate::error::{Error, Result};
use crate::features::{categorize, CategoryMapping};
use crate::model::{ActionCategory, Cohort, DesignAction, SessionLog};

/// A `.json` file found by [`scan_directory`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedFile {
    pub path: PathBuf,
    pub size: u64,
}

impl ScannedFile {
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Lists regular `.json` files directly inside `dir`, sorted by path.
pub fn scan_directory(dir: &Path) -> Result<Vec<ScannedFile>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let meta = fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
        if meta.is_file() {
            files.push(ScannedFile {
                path,
                size: meta.len(),
            });
        }
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_timestamp(v: &Value) -> Option<DateTime<Utc>> {
    let dt = match v {
        Value::String(s) => DateTime::parse_from_rfc3339(s).ok()?.with_timezone(&Utc),
        Value::Number(n) => DateTime::from_timestamp_millis(n.as_i64()?)?,
        _ => return None,
    };
    DateTime::from_timestamp_millis(dt.timestamp_millis())
}

/// Parses a well-formed session document into a [`SessionLog`].
///
/// Events without an `action` (as left behind by a truncated file) are
/// skipped. Events whose timestamp is missing or unparseable inherit the
/// previous event's timestamp.
pub fn parse_session(bytes: &[u8], student_id: &str, mapping: &CategoryMapping) -> Result<SessionLog> {
    let root: Value = serde_json::from_slice(bytes)?;
    let root = root
        .as_object()
        .ok_or_else(|| schema_err("$", "document root is not an object"))?;
    let events = root
        .get("events")
        .ok_or_else(|| schema_err("$.events", "missing events array"))?
        .as_array()
        .ok_or_else(|| schema_err("$.events", "events is not an array"))?;

    let epoch = DateTime::<Utc>::UNIX_EPOCH;
    let mut last_ts = epoch;
    let mut actions = Vec::with_capacity(events.len());
    let mut energies = Vec::with_capacity(events.len());
    for (i, ev) in events.iter().enumerate() {
        let obj = ev
            .as_object()
            .ok_or_else(|| schema_err(format!("$.events[{i}]"), "event is not an object"))?;
        let raw_name = match obj.get("action") {
            None | Some(Value::Null) => continue,
            Some(Value::String(s)) if s.is_empty() => continue,
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(schema_err(format!("$.events[{i}].action"), "action is not a string"));
            }
        };
        let timestamp = obj.get("ts").and_then(parse_timestamp).unwrap_or(last_ts);
        last_ts = timestamp;
        let category = categorize(&raw_name, mapping)?;
        let energy = match obj.get("netEnergy") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().filter(|e| e.is_finite()).ok_or_else(|| {
                schema_err(format!("$.events[{i}].netEnergy"), "netEnergy is not a finite number")
            })?),
        };
        actions.push(DesignAction {
            timestamp,
            raw_name,
            category,
        });
        energies.push(energy);
    }

    // Stable sort keeps file order among equal timestamps.
    let mut order: Vec<usize> = (0..actions.len()).collect();
    order.sort_by_key(|&i| actions[i].timestamp);
    let final_net_energy = order
        .iter()
        .rev()
        .find_map(|&i| (actions[i].category == ActionCategory::Analysis).then_some(energies[i]).flatten());
    let mut slots: Vec<Option<DesignAction>> = actions.into_iter().map(Some).collect();
    let actions = order.iter().filter_map(|&i| slots[i].take()).collect();

    Ok(SessionLog {
        student_id: student_id.to_string(),
        actions,
        final_net_energy,
    })
}

/// Result of pushing one file through scan, repair and parse.
#[derive(Debug, Clone)]
pub struct CleanedFile {
    pub path: PathBuf,
    pub log: RepairLog,
    /// Repaired (or untouched) bytes, present when the file yielded a session.
    pub bytes: Option<Vec<u8>>,
    pub session: Option<SessionLog>,
}

fn student_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Repairs and parses one file's contents.
pub fn clean_file(path: &Path, bytes: &[u8], mapping: &CategoryMapping) -> CleanedFile {
    let (fixed, mut log) = repair(bytes);
    log.file = path.display().to_string();
    let mut cleaned = CleanedFile {
        path: path.to_path_buf(),
        log,
        bytes: None,
        session: None,
    };
    if matches!(cleaned.log.outcome, RepairOutcome::Repaired | RepairOutcome::CleanAsIs) {
        match parse_session(&fixed, &student_id_of(path), mapping) {
            Ok(session) => {
                cleaned.session = Some(session);
                cleaned.bytes = Some(fixed);
            }
            Err(e) => {
                cleaned.log.outcome = RepairOutcome::Unrepairable;
                cleaned.log.residual.push(Diagnostic {
                    byte_offset: 0,
                    kind: DiagnosticKind::UnknownToken,
                    excerpt: e.to_string().chars().take(40).collect(),
                });
            }
        }
    }
    cleaned
}

/// Runs every `.json` file in `dir` through repair and parsing, in path order.
pub fn clean_directory(dir: &Path, mapping: &CategoryMapping) -> Result<Vec<CleanedFile>> {
    scan_directory(dir)?
        .into_iter()
        .map(|f| {
            let bytes = fs::read(&f.path).map_err(|e| Error::io(&f.path, e))?;
            Ok(clean_file(&f.path, &bytes, mapping))
        })
        .collect()
}

/// Loads every usable session in `dir`. Empty and unrepairable files are left
/// out of the cohort but still appear in the returned repair logs.
pub fn load_cohort(dir: &Path, mapping: &CategoryMapping) -> Result<(Cohort, Vec<RepairLog>)> {
    let files = clean_directory(dir, mapping)?;
    let mut sessions = Vec::new();
    let mut logs = Vec::with_capacity(files.len());
    for f in files {
        sessions.extend(f.session);
        logs.push(f.log);
    }
    let cohort = Cohort::new(sessions, dir.display().to_string())?;
    Ok((cohort, logs))
}

/// Renders repair logs as `repairs.csv`.
pub fn repairs_csv(logs: &[RepairLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["file", "outcome", "n_diagnostics", "first_diagnostic_kind", "first_offset"])?;
    for log in logs {
        let first = log.diagnostics().next();
        w.write_record([
            log.file.clone(),
            log.outcome.to_string(),
            log.diagnostics().count().to_string(),
            first.map(|d| d.kind.to_string()).unwrap_or_default(),
            first.map(|d| d.byte_offset.to_string()).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("repairs.csv", e.into_error()))
}
