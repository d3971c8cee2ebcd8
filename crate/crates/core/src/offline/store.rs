//! File-backed product record store.
//!
//! One JSON document per product under the store directory. Saves write a
//! temporary file and rename it over the old one, so a concurrent reader sees
//! either the previous or the new document, never a mix.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ProductRecord, RecordError};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("product {0:?} not found")]
    NotFound(String),
    #[error("product {id:?} stored with schema version {found}, this build reads {RECORD_SCHEMA_VERSION}; migrate the store first")]
    SchemaVersion { id: String, found: u32 },
    #[error("product {id:?} document is corrupt: {source}")]
    Corrupt { id: String, source: serde_json::Error },
    #[error("product id {0:?} must be 1-128 characters of [A-Za-z0-9_.-] and not start with '.'")]
    InvalidId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] RecordError),
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    record: &'a ProductRecord,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

#[derive(Deserialize)]
struct DocumentIn {
    record: ProductRecord,
}

#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

impl RecordStore {
    /// Open (creating if needed) a store rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, record: &ProductRecord) -> Result<(), StoreError> {
        record.validate()?;
        check_id(&record.product_id)?;
        let body = serde_json::to_vec_pretty(&DocumentOut {
            schema_version: RECORD_SCHEMA_VERSION,
            record,
        })
        .expect("records always serialise");
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .dir
            .join(format!(".{}.{}.{n}.tmp", record.product_id, std::process::id()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()?;
            fs::rename(&tmp, self.path_for(&record.product_id))
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        Ok(result?)
    }

    pub fn load(&self, id: &str) -> Result<ProductRecord, StoreError> {
        check_id(id).map_err(|_| StoreError::NotFound(id.to_string()))?;
        let bytes = match fs::read(self.path_for(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |source| StoreError::Corrupt {
            id: id.to_string(),
            source,
        };
        let probe: VersionProbe = serde_json::from_slice(&bytes).map_err(corrupt)?;
        if probe.schema_version != RECORD_SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                id: id.to_string(),
                found: probe.schema_version,
            });
        }
        let doc: DocumentIn = serde_json::from_slice(&bytes).map_err(corrupt)?;
        Ok(doc.record)
    }

    pub fn exists(&self, id: &str) -> bool {
        check_id(id).is_ok() && self.path_for(id).is_file()
    }

    /// Stored product ids, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(id) = name.strip_suffix(".json") {
                if check_id(id).is_ok() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
