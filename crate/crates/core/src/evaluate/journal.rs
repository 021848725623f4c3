//! Append-only session journals and a store that replays them on open.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::item::EvalItem;
use super::session::{EvalSession, SessionConfig, SessionEvent};
use crate::error::{Error, Result};

/// One JSON event per line, synced after every append.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Journal { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, events: &[SessionEvent]) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut w = BufWriter::new(&self.file);
        for ev in events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        drop(w);
        self.file.sync_data()?;
        Ok(())
    }

    /// Reads every complete event. A torn final line from an interrupted
    /// write is cut off the file; a malformed complete line is an error.
    pub fn read(path: &Path) -> Result<Vec<SessionEvent>> {
        let bytes = std::fs::read(path)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(path = %path.display(), bytes = bytes.len() - complete, "dropping torn journal tail");
            OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
        }
        let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

struct Slot {
    session: EvalSession,
    journal: Option<Journal>,
}

impl Slot {
    fn persist(&mut self) -> Result<()> {
        let events = self.session.take_events();
        match &mut self.journal {
            Some(j) => j.append(&events),
            None => Ok(()),
        }
    }
}

/// Thread-safe collection of sessions. Each session serializes its own
/// transitions; with a directory, every transition is appended to the
/// session journal before the call returns.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    next_id: Mutex<u64>,
    fingerprint: Option<String>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            dir: None,
            sessions: RwLock::new(BTreeMap::new()),
            next_id: Mutex::new(1),
            fingerprint: None,
        }
    }

    /// Stamps sessions created from now on with a config fingerprint.
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = Some(fingerprint.into());
        self
    }

    /// Opens `dir`, replaying every `*.jsonl` journal in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = BTreeMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut next = 1;
        for path in paths {
            let session = EvalSession::replay(Journal::read(&path)?)?;
            if let Some(n) = session.session_id.strip_prefix("session-").and_then(|n| n.parse::<u64>().ok()) {
                next = next.max(n + 1);
            }
            let slot = Slot {
                journal: Some(Journal::open(&path)?),
                session,
            };
            sessions.insert(slot.session.session_id.clone(), Arc::new(Mutex::new(slot)));
        }
        Ok(SessionStore {
            dir: Some(dir),
            sessions: RwLock::new(sessions),
            next_id: Mutex::new(next),
            fingerprint: None,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn create(&self, items: Vec<EvalItem>, config: SessionConfig) -> Result<EvalSession> {
        let id = {
            let mut n = self.next_id.lock();
            let id = format!("session-{:04}", *n);
            *n += 1;
            id
        };
        let session = EvalSession::create_stamped(&id, items, config, self.fingerprint.clone())?;
        let journal = match &self.dir {
            Some(d) => Some(Journal::open(d.join(format!("{id}.jsonl")))?),
            None => None,
        };
        let mut slot = Slot { session, journal };
        slot.persist()?;
        let out = slot.session.clone();
        self.sessions.write().insert(id, Arc::new(Mutex::new(slot)));
        Ok(out)
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<EvalSession> {
        Ok(self.slot(id)?.lock().session.clone())
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().keys().cloned().collect()
    }

    /// Runs `f` under the session's lock and journals whatever it applied,
    /// including the events applied before `f` failed.
    pub fn update<R>(&self, id: &str, f: impl FnOnce(&mut EvalSession) -> Result<R>) -> Result<R> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock();
        let out = f(&mut slot.session);
        slot.persist()?;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::avatar::{default_avatars, score_items};
    use crate::evaluate::protocol::{run_protocol, EchoHumans};
    use crate::evaluate::session::SessionStatus;

    fn items(n: usize) -> Vec<EvalItem> {
        let mut v: Vec<EvalItem> = (0..n).map(|i| EvalItem::new(format!("i{i}"), format!("case {i}"), format!("plan {i}"))).collect();
        score_items(&mut v, &default_avatars(1), None).unwrap();
        v
    }

    #[test]
    fn store_reopens_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = SessionStore::open(dir.path()).unwrap().with_fingerprint("f00d");
            let s = store.create(items(30), SessionConfig::default()).unwrap();
            let p = s.next_for("r").unwrap();
            store.update(&s.session_id, |s| s.submit(&p.item.item_id, "r", 3)).unwrap();
            s.session_id
        };
        let store = SessionStore::open(dir.path()).unwrap();
        let s = store.get(&id).unwrap();
        assert_eq!(s.config_fingerprint.as_deref(), Some("f00d"));
        assert_eq!(s.strata.values().map(|st| st.human.len()).sum::<usize>(), 1);
        let again = store.create(items(10), SessionConfig::default()).unwrap();
        assert_ne!(again.session_id, id);
        store.update(&id, |s| run_protocol(s, &mut EchoHumans::new(1))).unwrap();
        let reopened = SessionStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&id).unwrap().status, SessionStatus::TerminatedPass);
        assert!(matches!(reopened.get("session-9999"), Err(Error::UnknownSession(_))));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let s = store.create(items(12), SessionConfig::default()).unwrap();
        let path = dir.path().join(format!("{}.jsonl", s.session_id));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"event\":\"scored\",\"str").unwrap();
        drop(f);
        drop(store);
        let store = SessionStore::open(dir.path()).unwrap();
        assert_eq!(store.get(&s.session_id).unwrap(), s);
        assert!(std::fs::read(&path).unwrap().ends_with(b"\n"));
    }

    #[test]
    fn corrupt_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(Journal::read(&path), Err(Error::Parse { line: 1, .. })));
    }
}
