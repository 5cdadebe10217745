//! Model catalog: registered models, their persistence, and secret resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sql::{CreateModelStmt, ModelKind, OptionValue, Options};
use crate::storage::TableCatalog;
use crate::types::DataType;

pub const CATALOG_FILE: &str = "models.jsonl";
pub const SECRETS_FILE: &str = "secrets.jsonl";
const CATALOG_FORMAT: &str = "semaquery-model-catalog";
const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub path: String,
    pub kind: ModelKind,
    pub on_prompt: bool,
    pub base_api: Option<String>,
    pub secret: Option<String>,
    pub relation: Option<String>,
    pub input_set: Option<Vec<String>>,
    pub output_set: Option<Vec<(String, DataType)>>,
    pub options: Options,
}

impl ModelEntry {
    pub fn from_stmt(stmt: &CreateModelStmt) -> ModelEntry {
        ModelEntry {
            name: stmt.name.clone(),
            path: stmt.path.clone(),
            kind: stmt.kind,
            on_prompt: stmt.on_prompt,
            base_api: stmt.api.clone(),
            secret: stmt.secret.clone(),
            relation: stmt.relation.clone(),
            input_set: stmt.features.clone(),
            output_set: stmt.outputs.clone(),
            options: stmt.options.clone(),
        }
    }

    pub fn option(&self, key: &str) -> Option<&OptionValue> {
        self.options.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v)
    }
}

/// An API key. Debug and Display never show the value.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

#[derive(Serialize, Deserialize)]
struct SecretRecord {
    name: String,
    value: String,
}

/// Environment variable consulted when a secret is not in the secrets file.
pub fn secret_env_var(name: &str) -> String {
    let norm: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' }).collect();
    format!("SEMAQUERY_SECRET_{norm}")
}

/// Secrets live apart from the model catalog, in an owner-read-only file.
#[derive(Debug, Default)]
pub struct SecretStore {
    file: Option<PathBuf>,
    values: BTreeMap<String, Secret>,
}

impl SecretStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; a missing file is not an error.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut values = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                // The serde error could echo the value back, so report only the position.
                let rec: SecretRecord = serde_json::from_str(line)
                    .map_err(|_| Error::catalog(format!("corrupt secrets file at line {}", i + 1)))?;
                values.insert(rec.name.to_ascii_lowercase(), Secret(rec.value));
            }
        }
        Ok(SecretStore { file: Some(path), values })
    }

    pub fn insert(&mut self, name: &str, value: &str) -> Result<()> {
        self.values.insert(name.to_ascii_lowercase(), Secret::new(value));
        self.persist()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(&name.to_ascii_lowercase()) || std::env::var_os(secret_env_var(name)).is_some()
    }

    pub fn resolve(&self, name: &str) -> Result<Secret> {
        if let Some(s) = self.values.get(&name.to_ascii_lowercase()) {
            return Ok(s.clone());
        }
        match std::env::var(secret_env_var(name)) {
            Ok(v) => Ok(Secret(v)),
            Err(_) => {
                Err(Error::Config(format!("secret '{name}' not found in the secrets file or {}", secret_env_var(name))))
            }
        }
    }

    fn persist(&self) -> Result<()> {
        let Some(path) = &self.file else { return Ok(()) };
        let mut out = String::new();
        for (name, secret) in &self.values {
            let rec = SecretRecord { name: name.clone(), value: secret.0.clone() };
            out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::catalog(e.to_string()))?);
            out.push('\n');
        }
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
            opts.mode(0o600);
            let mut f = opts.open(path)?;
            f.set_permissions(fs::Permissions::from_mode(0o600))?;
            f.write_all(out.as_bytes())?;
        }
        #[cfg(not(unix))]
        opts.open(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CatalogHeader {
    format: String,
    version: u32,
}

/// Registered models keyed by case-insensitive name.
#[derive(Debug, Default)]
pub struct ModelCatalog {
    entries: BTreeMap<String, Arc<ModelEntry>>,
    file: Option<PathBuf>,
    pub secrets: SecretStore,
}

impl ModelCatalog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a catalog directory holding the model and secrets files.
    pub fn open_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let file = dir.join(CATALOG_FILE);
        let entries = if file.exists() { load_entries(&file)? } else { BTreeMap::new() };
        Ok(ModelCatalog { entries, file: Some(file), secrets: SecretStore::open(dir.join(SECRETS_FILE))? })
    }

    /// Validates and registers a model. Returns the entry; path checks are the caller's.
    pub fn create_model(&mut self, stmt: &CreateModelStmt, tables: &TableCatalog) -> Result<Arc<ModelEntry>> {
        let key = stmt.name.to_ascii_lowercase();
        if self.entries.contains_key(&key) {
            return Err(Error::catalog(format!("model already exists: {}", stmt.name)));
        }
        if let Some(secret) = &stmt.secret {
            if !self.secrets.contains(secret) {
                return Err(Error::catalog(format!("secret not found: {secret}")));
            }
        }
        if let Some(rel) = &stmt.relation {
            let table = tables.get(rel).map_err(|_| Error::catalog(format!("relation not found: {rel}")))?;
            for f in stmt.features.iter().flatten() {
                if table.column_index(f).is_none() {
                    return Err(Error::catalog(format!("feature column '{f}' not found in {rel}")));
                }
            }
        }
        if let Some(api) = &stmt.api {
            if !(api.starts_with("http://") || api.starts_with("https://")) || api.len() <= "https://".len() {
                return Err(Error::catalog(format!("malformed API URL: {api}")));
            }
        }
        let entry = Arc::new(ModelEntry::from_stmt(stmt));
        self.entries.insert(key, entry.clone());
        self.persist()?;
        Ok(entry)
    }

    pub fn insert(&mut self, entry: ModelEntry) -> Result<()> {
        self.entries.insert(entry.name.to_ascii_lowercase(), Arc::new(entry));
        self.persist()
    }

    pub fn lookup(&self, name: &str) -> Result<Arc<ModelEntry>> {
        self.entries
            .get(&name.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| Error::catalog(format!("model not found: {name}")))
    }

    pub fn drop_model(&mut self, name: &str) -> Result<()> {
        if self.entries.remove(&name.to_ascii_lowercase()).is_none() {
            return Err(Error::catalog(format!("model not found: {name}")));
        }
        self.persist()
    }

    pub fn list_models(&self) -> Vec<Arc<ModelEntry>> {
        self.entries.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn persist(&self) -> Result<()> {
        match &self.file {
            Some(f) => save_entries(f, self.entries.values().map(|e| e.as_ref())),
            None => Ok(()),
        }
    }
}

/// Writes a header line followed by one JSON record per model.
pub fn save_entries<'a>(path: &Path, entries: impl Iterator<Item = &'a ModelEntry>) -> Result<()> {
    let header = CatalogHeader { format: CATALOG_FORMAT.into(), version: CATALOG_VERSION };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::catalog(e.to_string()))?;
    out.push('\n');
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| Error::catalog(e.to_string()))?);
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_entries(path: &Path) -> Result<BTreeMap<String, Arc<ModelEntry>>> {
    let text = fs::read_to_string(path)?;
    let mut entries = BTreeMap::new();
    let mut offset = 0usize;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end();
        let corrupt = |msg: String| {
            Error::catalog(format!("corrupt catalog {} at line {}, byte offset {offset}: {msg}", path.display(), i + 1))
        };
        if i == 0 {
            let h: CatalogHeader = serde_json::from_str(body).map_err(|e| corrupt(e.to_string()))?;
            if h.format != CATALOG_FORMAT || h.version != CATALOG_VERSION {
                return Err(corrupt(format!("unsupported header {}/{}", h.format, h.version)));
            }
        } else if !body.is_empty() {
            let e: ModelEntry = serde_json::from_str(body).map_err(|e| corrupt(e.to_string()))?;
            entries.insert(e.name.to_ascii_lowercase(), Arc::new(e));
        }
        offset += line.len();
    }
    Ok(entries)
}
