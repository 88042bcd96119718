use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use anthro_core::conversation::{load_persona_file, Persona, PersonaError};
use anthro_core::orchestrator::{Engine, SessionHandle, TurnError};
use anthro_core::persist::DataDir;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown persona {0}")]
    UnknownPersona(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Turn(#[from] TurnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every `*.json` persona in `dir`, keyed by id.
pub fn load_personas(dir: &Path) -> Result<BTreeMap<String, Persona>, PersonaError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let persona = load_persona_file(&path)?;
        out.insert(persona.id.clone(), persona);
    }
    Ok(out)
}

/// Sessions known to this process.
pub struct Registry {
    engine: Arc<Engine>,
    personas: BTreeMap<String, Persona>,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
}

impl Registry {
    /// Build the registry and reopen every session persisted in the engine's data directory.
    pub fn open(engine: Arc<Engine>, personas: BTreeMap<String, Persona>) -> Result<Self, RegistryError> {
        let mut sessions = BTreeMap::new();
        if let Some(data) = engine.data_dir() {
            for id in data.session_ids()? {
                let record = data.read_session(&id)?;
                let Some(persona) = personas.get(&record.persona_id) else {
                    tracing::warn!(session = %id, persona = %record.persona_id, "persona missing; session not loaded");
                    continue;
                };
                let handle = engine.open_session(&id, persona.clone())?;
                sessions.insert(id, handle);
            }
        }
        tracing::info!(sessions = sessions.len(), personas = personas.len(), "registry ready");
        Ok(Self {
            engine,
            personas,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn data_dir(&self) -> Option<&DataDir> {
        self.engine.data_dir()
    }

    pub fn personas(&self) -> &BTreeMap<String, Persona> {
        &self.personas
    }

    pub fn create(&self, persona_id: &str) -> Result<Arc<SessionHandle>, RegistryError> {
        let persona = self
            .personas
            .get(persona_id)
            .ok_or_else(|| RegistryError::UnknownPersona(persona_id.to_string()))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let handle = self.engine.create_session(&id, persona.clone())?;
        self.sessions.write().unwrap().insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionHandle>, RegistryError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownSession(id.to_string()))
    }

    pub fn list(&self) -> Vec<Arc<SessionHandle>> {
        self.sessions.read().unwrap().values().cloned().collect()
    }
}
