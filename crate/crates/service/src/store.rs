//! Session registry and the append-only event logs behind it.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use tokio::sync::Mutex;

use crate::error::{ServiceError, ServiceResult};
use crate::session::{resolve_domain, DuelView, Event, LoggedEvent, PublicState, Session, SessionSpec, WinnerView};

/// A live session with its log file.
pub struct Entry {
    session: Session,
    log: Option<File>,
}

impl Entry {
    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Persists `event`, then applies it. A failed write leaves the state
    /// untouched.
    fn commit(&mut self, event: Event) -> ServiceResult<()> {
        let logged = LoggedEvent {
            seq: self.session.next_seq(),
            event,
        };
        if let Some(file) = self.log.as_mut() {
            let mut line = serde_json::to_vec(&logged).map_err(|e| ServiceError::CorruptLog(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.session.apply(&logged)
    }

    /// The pending duel, proposing one first if needed.
    pub fn next_duel(&mut self) -> ServiceResult<DuelView> {
        if let Some(event) = self.session.propose_event()? {
            self.commit(event)?;
        }
        Ok(self.session.pending().cloned().expect("a duel is pending"))
    }

    /// Records the answer to the pending duel and returns the new dataset
    /// size.
    pub fn record_outcome(&mut self, y: u8) -> ServiceResult<usize> {
        let event = self.session.outcome_event(y)?;
        self.commit(event)?;
        Ok(self.session.size())
    }

    /// Lets the simulated oracle answer `steps` duels.
    pub fn simulate(&mut self, steps: usize) -> ServiceResult<usize> {
        if !self.session.is_simulated() {
            return Err(ServiceError::NotSimulated);
        }
        for _ in 0..steps {
            self.next_duel()?;
            let event = self.session.simulated_outcome_event()?;
            self.commit(event)?;
        }
        Ok(self.session.size())
    }

    pub fn winner(&mut self) -> ServiceResult<WinnerView> {
        self.session.winner()
    }

    pub fn state(&self) -> PublicState {
        self.session.public_state()
    }
}

/// Rebuilds a session from the text of its log.
///
/// A final line without its newline is the trace of an interrupted write
/// and is dropped. The returned length is that of the valid prefix.
pub fn replay(text: &str) -> ServiceResult<(Session, usize)> {
    let mut session: Option<Session> = None;
    let mut valid = 0;
    for line in text.split_inclusive('\n') {
        if !line.ends_with('\n') {
            tracing::warn!("dropping an incomplete final log line");
            break;
        }
        let logged: LoggedEvent =
            serde_json::from_str(line).map_err(|e| ServiceError::CorruptLog(format!("line {}: {e}", valid + 1)))?;
        let s = match session.as_mut() {
            Some(s) => s,
            None => session.insert(Session::from_created(&logged.event)?),
        };
        s.apply(&logged)?;
        valid += line.len();
    }
    let session = session.ok_or_else(|| ServiceError::CorruptLog("empty log".into()))?;
    Ok((session, valid))
}

type Shared = Arc<Mutex<Entry>>;

pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Shared>>,
}

impl SessionStore {
    /// A store without persistence.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) an event directory and replays every
    /// `<id>.jsonl` log in it.
    pub fn open(dir: impl Into<PathBuf>) -> ServiceResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for item in fs::read_dir(&dir)? {
            let path = item?.path();
            if path.extension().is_none_or(|e| e != "jsonl") {
                continue;
            }
            let entry = load(&path)?;
            sessions.insert(entry.session.id().to_string(), Arc::new(Mutex::new(entry)));
        }
        tracing::info!(dir = %dir.display(), sessions = sessions.len(), "event logs replayed");
        Ok(Self {
            dir: Some(dir),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("registry lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create(&self, spec: SessionSpec) -> ServiceResult<String> {
        resolve_domain(&spec)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created = Event::Created {
            id: id.clone(),
            spec,
        };
        let session = Session::from_created(&created)?;
        let log = match self.log_path(&id) {
            Some(path) => Some(OpenOptions::new().append(true).create_new(true).open(path)?),
            None => None,
        };
        let mut entry = Entry { session, log };
        entry.commit(created)?;
        self.sessions
            .write()
            .expect("registry lock")
            .insert(id.clone(), Arc::new(Mutex::new(entry)));
        Ok(id)
    }

    fn get(&self, id: &str) -> ServiceResult<Shared> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Runs `f` on one session. Calls on the same session queue up in
    /// arrival order; the work itself runs on the blocking pool because
    /// model fits take a while.
    pub async fn with_session<T, F>(&self, id: &str, f: F) -> ServiceResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Entry) -> ServiceResult<T> + Send + 'static,
    {
        let shared = self.get(id)?;
        let mut guard = shared.lock_owned().await;
        tokio::task::spawn_blocking(move || f(&mut guard))
            .await
            .map_err(|e| ServiceError::Storage(std::io::Error::other(e)))?
    }
}

fn load(path: &Path) -> ServiceResult<Entry> {
    let text = fs::read_to_string(path)?;
    let (session, valid) = replay(&text).map_err(|e| match e {
        ServiceError::CorruptLog(m) => ServiceError::CorruptLog(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if path.file_stem().and_then(|s| s.to_str()) != Some(session.id()) {
        return Err(ServiceError::CorruptLog(format!(
            "{} holds session `{}`",
            path.display(),
            session.id()
        )));
    }
    let file = OpenOptions::new().append(true).open(path)?;
    if valid < text.len() {
        file.set_len(valid as u64)?;
    }
    Ok(Entry {
        session,
        log: Some(file),
    })
}
