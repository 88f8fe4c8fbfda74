//! Session registry with an optional on-disk event log.
//!
//! Layout: one `<id>.jsonl` file per session in the data directory, one
//! [`Event`] per line. An event is fsynced before the state it produces
//! becomes visible. A torn final line (crash mid-write) is dropped and
//! truncated away on load; any other malformed line is an error.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use arc_swap::ArcSwap;

use crate::config::SessionConfig;
use crate::error::{Result, ServiceError};
use crate::session::{
    timestamp, ConsentRequest, Event, OutcomeRequest, Recommendation, Recorded, Session,
    SessionSummary,
};

const LOG_EXTENSION: &str = "jsonl";

/// Published state of a session: its canonical JSON and summary.
#[derive(Debug)]
pub struct Snapshot {
    pub json: String,
    pub summary: SessionSummary,
    pub recommendation: Recommendation,
}

impl Snapshot {
    fn of(session: &Session) -> Self {
        Self {
            json: session.view_json(),
            summary: session.summary(),
            recommendation: session.recommendation().clone(),
        }
    }
}

struct Slot {
    /// Single writer per session.
    writer: Mutex<Writer>,
    /// Readers never take the writer lock.
    snapshot: ArcSwap<Snapshot>,
}

struct Writer {
    session: Session,
    log: Option<File>,
}

/// Answer to an outcome or consent submission.
#[derive(Debug, Clone)]
pub struct Applied {
    pub seq: u64,
    /// True when an idempotency key matched an earlier submission.
    pub replayed: bool,
    pub recommendation: Recommendation,
    pub snapshot: Arc<Snapshot>,
}

pub struct Store {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl Store {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens `dir`, creating it if needed, and replays every session log.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|entry| entry.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == LOG_EXTENSION));
        paths.sort();
        for path in paths {
            let events = read_log(&path, true)?;
            if events.is_empty() {
                tracing::warn!(path = %path.display(), "skipping empty session log");
                continue;
            }
            let session = Session::replay(&events).map_err(|e| ServiceError::Corrupt {
                path: path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            let log = OpenOptions::new().append(true).open(&path)?;
            let id = session.id().to_string();
            sessions.insert(id, Arc::new(slot(session, Some(log))));
        }
        tracing::info!(dir = %dir.display(), sessions = sessions.len(), "store opened");
        Ok(Self {
            dir: Some(dir),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn create(&self, config: SessionConfig) -> Result<Arc<Snapshot>> {
        let id = uuid::Uuid::new_v4().to_string();
        let (session, event) = Session::start(id.clone(), config, timestamp())?;
        let log = match &self.dir {
            Some(dir) => {
                let path = dir.join(format!("{id}.{LOG_EXTENSION}"));
                let mut file = OpenOptions::new()
                    .create_new(true)
                    .append(true)
                    .open(&path)?;
                append(&mut file, &event)?;
                sync_dir(dir)?;
                Some(file)
            }
            None => None,
        };
        let slot = Arc::new(slot(session, log));
        let snapshot = slot.snapshot.load_full();
        self.sessions
            .write()
            .expect("registry lock")
            .insert(id, slot);
        Ok(snapshot)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Snapshot>> {
        Ok(self.slot(id)?.snapshot.load_full())
    }

    /// Summaries ordered by creation time, then id.
    pub fn list(&self) -> Vec<SessionSummary> {
        let mut out: Vec<SessionSummary> = self
            .sessions
            .read()
            .expect("registry lock")
            .values()
            .map(|s| s.snapshot.load().summary.clone())
            .collect();
        out.sort_by(|a, b| (&a.created_at, &a.id).cmp(&(&b.created_at, &b.id)));
        out
    }

    pub fn record_outcome(
        &self,
        id: &str,
        request: OutcomeRequest,
        key: Option<String>,
    ) -> Result<Applied> {
        let slot = self.slot(id)?;
        let mut writer = slot.writer.lock().expect("session writer lock");
        match writer.session.submit_outcome(request, key, timestamp())? {
            Recorded::Replayed {
                seq,
                recommendation,
            } => Ok(Applied {
                seq,
                replayed: true,
                recommendation,
                snapshot: slot.snapshot.load_full(),
            }),
            Recorded::Fresh { event, next } => commit(&slot, &mut writer, &event, *next),
        }
    }

    pub fn consent(&self, id: &str, request: ConsentRequest) -> Result<Applied> {
        let slot = self.slot(id)?;
        let mut writer = slot.writer.lock().expect("session writer lock");
        let (event, next) = writer.session.submit_consent(request, timestamp())?;
        commit(&slot, &mut writer, &event, next)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }
}

fn slot(session: Session, log: Option<File>) -> Slot {
    let snapshot = ArcSwap::from_pointee(Snapshot::of(&session));
    Slot {
        writer: Mutex::new(Writer { session, log }),
        snapshot,
    }
}

fn commit(slot: &Slot, writer: &mut Writer, event: &Event, next: Session) -> Result<Applied> {
    if let Some(file) = writer.log.as_mut() {
        append(file, event)?;
    }
    let snapshot = Arc::new(Snapshot::of(&next));
    let recommendation = next.recommendation().clone();
    writer.session = next;
    slot.snapshot.store(snapshot.clone());
    Ok(Applied {
        seq: event.seq,
        replayed: false,
        recommendation,
        snapshot,
    })
}

fn append(file: &mut File, event: &Event) -> Result<()> {
    let mut line = serde_json::to_vec(event).expect("event serializes");
    line.push(b'\n');
    let len = file.metadata()?.len();
    let written = file.write_all(&line).and_then(|()| file.sync_data());
    if let Err(e) = written {
        // Keep the log line-aligned so later appends stay parseable.
        let _ = file.set_len(len);
        return Err(e.into());
    }
    Ok(())
}

#[cfg(unix)]
fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) -> Result<()> {
    Ok(())
}

/// Reads an event log. With `repair`, a torn final line is truncated away.
pub fn read_log(path: &Path, repair: bool) -> Result<Vec<Event>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_len: u64 = 0;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf)?;
        if read == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            tracing::warn!(path = %path.display(), line = line_no, "dropping torn final line");
            if repair {
                OpenOptions::new()
                    .write(true)
                    .open(path)?
                    .set_len(good_len)?;
            }
            break;
        }
        let event =
            serde_json::from_str::<Event>(buf.trim_end()).map_err(|e| ServiceError::Corrupt {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        events.push(event);
        good_len += read as u64;
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use oddstop_core::{Action, Outcome};

    fn config(json: &str) -> SessionConfig {
        serde_json::from_str(json).unwrap()
    }

    fn failure() -> OutcomeRequest {
        OutcomeRequest {
            outcome: Outcome::Failure,
            h: None,
            arrival_time: None,
        }
    }

    #[test]
    fn reopen_restores_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let created = store
            .create(config(r#"{"protocol":"P2","h":[0.5,0.5,0.5]}"#))
            .unwrap();
        let id = created.summary.id.clone();
        let applied = store
            .record_outcome(&id, failure(), Some("k".into()))
            .unwrap();
        assert_eq!(applied.recommendation.action, Action::ConsentRequired);
        store
            .consent(
                &id,
                ConsentRequest {
                    granted: true,
                    note: None,
                },
            )
            .unwrap();
        let before = store.get(&id).unwrap().json.clone();
        drop(store);

        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.get(&id).unwrap().json, before);
        let again = store
            .record_outcome(&id, failure(), Some("k".into()))
            .unwrap();
        assert!(again.replayed);
        assert_eq!(again.seq, 2);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = store
            .create(config(r#"{"protocol":"P2","h":[0.5,0.5,0.5]}"#))
            .unwrap()
            .summary
            .id
            .clone();
        let before = store.get(&id).unwrap().json.clone();
        drop(store);
        let path = dir.path().join(format!("{id}.jsonl"));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":2,"ts":"2026-01-01T00:00:00.000Z","kind":"outc"#)
            .unwrap();
        drop(f);

        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.get(&id).unwrap().json, before);
        store.record_outcome(&id, failure(), None).unwrap();
        drop(store);
        assert_eq!(read_log(&path, false).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.jsonl"), "not json\n{}\n").unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(ServiceError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_session() {
        let store = Store::in_memory();
        assert!(matches!(store.get("nope"), Err(ServiceError::NotFound(_))));
    }
}
