//! Named scenarios persisted to a single JSON file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use scvlab_core::wire::ParamsDoc;
use scvlab_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub label: String,
    pub params: ParamsDoc,
    /// RFC 3339, set when the id is first stored.
    pub created_at: String,
}

/// Body of `PUT /api/scenarios/{id}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInput {
    #[serde(default)]
    pub label: String,
    pub params: ParamsDoc,
}

pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::Validation {
            field: "id".into(),
            message: "1 to 64 characters from [A-Za-z0-9_-]".into(),
        })
    }
}

/// Readers share a lock that writers hold only to swap in a new map; the
/// file is written and synced before the swap.
#[derive(Debug, Default)]
pub struct Registry {
    path: Option<PathBuf>,
    scenarios: RwLock<BTreeMap<String, Scenario>>,
    writer: Mutex<()>,
}

impl Registry {
    /// In-memory registry.
    pub fn ephemeral() -> Self {
        Registry::default()
    }

    /// Loads `path` if it exists; later mutations are saved there.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let scenarios = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("registry {}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Registry {
            path: Some(path),
            scenarios: RwLock::new(scenarios),
            writer: Mutex::new(()),
        })
    }

    pub fn get(&self, id: &str) -> Option<Scenario> {
        self.scenarios.read().expect("registry lock").get(id).cloned()
    }

    pub fn list(&self) -> Vec<Scenario> {
        self.scenarios.read().expect("registry lock").values().cloned().collect()
    }

    /// Inserts or replaces a scenario. Returns it and whether it is new.
    pub fn put(&self, id: &str, input: ScenarioInput) -> Result<(Scenario, bool)> {
        check_id(id)?;
        input.params.resolve()?;
        let _guard = self.writer.lock().expect("registry writer");
        let mut next = self.scenarios.read().expect("registry lock").clone();
        let created_at = next
            .get(id)
            .map(|s| s.created_at.clone())
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
        let scenario = Scenario {
            id: id.to_owned(),
            label: input.label,
            params: input.params,
            created_at,
        };
        let created = next.insert(id.to_owned(), scenario.clone()).is_none();
        if let Some(path) = &self.path {
            save(path, &next)?;
        }
        *self.scenarios.write().expect("registry lock") = next;
        Ok((scenario, created))
    }
}

fn save(path: &Path, scenarios: &BTreeMap<String, Scenario>) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("registry.json");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut file = fs::File::create(&tmp)?;
    file.write_all(scvlab_core::wire::to_json(scenarios).as_bytes())?;
    file.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}
