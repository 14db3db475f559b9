use std::collections::BTreeMap;
use std::path::PathBuf;

use parking_lot::RwLock;

use crate::model::SessionState;
use crate::persist;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("session `{0}` already exists")]
    Exists(String),
    #[error("session `{0}` is unknown")]
    Unknown(String),
    #[error("persisting sessions: {0}")]
    Io(String),
}

/// All sessions, optionally mirrored to `sessions.json`.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    sessions: RwLock<BTreeMap<String, SessionState>>,
    path: Option<PathBuf>,
}

impl SessionRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: PathBuf) -> Result<Self, RegistryError> {
        let sessions: BTreeMap<String, SessionState> = persist::read_json(&path)
            .map_err(|e| RegistryError::Io(e.to_string()))?
            .unwrap_or_default();
        Ok(Self {
            sessions: RwLock::new(sessions),
            path: Some(path),
        })
    }

    fn save(&self, map: &BTreeMap<String, SessionState>) -> Result<(), RegistryError> {
        match &self.path {
            Some(p) => persist::write_json(p, map).map_err(|e| RegistryError::Io(e.to_string())),
            None => Ok(()),
        }
    }

    pub fn create(&self, session: SessionState) -> Result<(), RegistryError> {
        let mut map = self.sessions.write();
        if map.contains_key(&session.session_id) {
            return Err(RegistryError::Exists(session.session_id));
        }
        map.insert(session.session_id.clone(), session);
        self.save(&map)
    }

    pub fn get(&self, session_id: &str) -> Option<SessionState> {
        self.sessions.read().get(session_id).cloned()
    }

    /// Applies `f` to a session and persists the result if `f` succeeds.
    pub fn update<T, E>(
        &self,
        session_id: &str,
        f: impl FnOnce(&mut SessionState) -> Result<T, E>,
    ) -> Result<Result<T, E>, RegistryError> {
        let mut map = self.sessions.write();
        let Some(s) = map.get_mut(session_id) else {
            return Err(RegistryError::Unknown(session_id.to_owned()));
        };
        let mut draft = s.clone();
        match f(&mut draft) {
            Ok(v) => {
                *s = draft;
                self.save(&map)?;
                Ok(Ok(v))
            }
            Err(e) => Ok(Err(e)),
        }
    }

    pub fn for_experiment(&self, experiment_id: &str) -> Vec<SessionState> {
        self.sessions
            .read()
            .values()
            .filter(|s| s.experiment_id == experiment_id)
            .cloned()
            .collect()
    }

    pub fn all(&self) -> Vec<SessionState> {
        self.sessions.read().values().cloned().collect()
    }
}
