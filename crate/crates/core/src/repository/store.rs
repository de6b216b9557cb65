//! Filesystem layout of the repository.
//!
//! ```text
//! <root>/index.json
//! <root>/models/<model_id>/model.stl
//! <root>/models/<model_id>/meta-<printer>-<material>.json
//! ```
//!
//! Files are replaced atomically (write to a temp file, then rename).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::document::MetadataDocument;
use super::RepositoryError;

pub const INDEX_FILE: &str = "index.json";
pub const MODELS_DIR: &str = "models";
pub const STL_FILE: &str = "model.stl";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Combo {
    pub printer_id: String,
    pub material_id: String,
}

impl Combo {
    pub fn new(printer_id: &str, material_id: &str) -> Self {
        Self { printer_id: printer_id.to_owned(), material_id: material_id.to_owned() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIndexEntry {
    pub model_id: String,
    pub name: String,
    pub tags: Vec<String>,
    pub download_count: u64,
    pub available_combos: Vec<Combo>,
    pub created_at: DateTime<Utc>,
    /// Folder of the model relative to the store root.
    pub path: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IndexFile {
    pub schema_version: u32,
    pub models: Vec<ModelIndexEntry>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RepositoryError> {
        let root = root.into();
        fs::create_dir_all(root.join(MODELS_DIR))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model_dir(&self, model_id: &str) -> PathBuf {
        self.root.join(MODELS_DIR).join(model_id)
    }

    pub fn relative_model_dir(model_id: &str) -> String {
        format!("{MODELS_DIR}/{model_id}")
    }

    pub fn stl_path(&self, model_id: &str) -> PathBuf {
        self.model_dir(model_id).join(STL_FILE)
    }

    pub fn document_path(&self, model_id: &str, combo: &Combo) -> PathBuf {
        self.model_dir(model_id).join(format!("meta-{}-{}.json", combo.printer_id, combo.material_id))
    }

    pub fn load_index(&self) -> Result<IndexFile, RepositoryError> {
        match fs::read(self.root.join(INDEX_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RepositoryError::InvalidDocument(format!("index: {e}"))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(IndexFile { schema_version: 1, models: Vec::new() }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_index(&self, index: &IndexFile) -> Result<(), RepositoryError> {
        let bytes = serde_json::to_vec(index).expect("index serialization cannot fail");
        write_atomic(&self.root.join(INDEX_FILE), &bytes)
    }

    pub fn write_stl(&self, model_id: &str, bytes: &[u8]) -> Result<(), RepositoryError> {
        fs::create_dir_all(self.model_dir(model_id))?;
        write_atomic(&self.stl_path(model_id), bytes)
    }

    pub fn read_stl(&self, model_id: &str) -> Result<Vec<u8>, RepositoryError> {
        Ok(fs::read(self.stl_path(model_id))?)
    }

    pub fn load_document(&self, model_id: &str, combo: &Combo) -> Result<Option<MetadataDocument>, RepositoryError> {
        match fs::read(self.document_path(model_id, combo)) {
            Ok(bytes) => MetadataDocument::from_json(&bytes).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_document(&self, doc: &MetadataDocument) -> Result<(), RepositoryError> {
        let combo = Combo::new(&doc.printer_id, &doc.material_id);
        fs::create_dir_all(self.model_dir(&doc.model_id))?;
        write_atomic(&self.document_path(&doc.model_id, &combo), &doc.to_json())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RepositoryError> {
    let dir = path.parent().expect("store paths always have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
