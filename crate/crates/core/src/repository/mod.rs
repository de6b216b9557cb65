//! Persistent store of models and their slicing documents.
//!
//! [`Repository`] owns the on-disk store, the in-memory model index, and the
//! orchestrator that produces new results. All writes to one model's documents
//! go through that model's lock; index updates take the index lock afterwards,
//! never the other way round.

pub mod catalog;
pub mod document;
pub mod http;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::io::{Cursor, Write as _};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{self, GeometryError, TriangleMesh};
use crate::grid::{self, CellIndex, GridAxes, GridError, SliceGrid};
use crate::interpolation::{self, InterpolationError};
use crate::orchestrator::{self, BatchId, BatchOutcome, Orchestrator, OrchestratorError, SliceJob};
use crate::slicer::{ModelRef, PrintProfile, ResultStatus, SliceRequest, SlicerBackend, SlicingResult, SyntheticSlicer};

pub use catalog::Catalog;
pub use document::{CellRecord, MetadataDocument};
pub use store::{Combo, ModelIndexEntry, Store};

/// Layer height and scale of the search preview cell.
pub const PREVIEW_LAYER_MM: f64 = 0.15;
pub const PREVIEW_SCALE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown printer {0}")]
    UnknownPrinter(String),
    #[error("unknown material {0}")]
    UnknownMaterial(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("interpolated results are computed locally and cannot be uploaded")]
    RejectedInterpolated,
    #[error("nothing to slice: every requested cell is already sliced")]
    NothingToSlice,
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Interpolation(#[from] InterpolationError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive error: {0}")]
    Archive(String),
}

#[derive(Debug, Clone)]
pub struct RepositoryConfig {
    pub store_dir: PathBuf,
    /// Levels per grid axis.
    pub grid_levels: usize,
    /// Fraction of a new model's grid that is sliced rather than interpolated.
    pub slice_fraction: f64,
    /// Parallelism used when a caller does not ask for a specific value.
    pub default_parallelism: usize,
    pub parallelism_cap: usize,
    pub catalog: Catalog,
}

impl RepositoryConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            grid_levels: grid::DEFAULT_LEVELS,
            slice_fraction: 0.10,
            default_parallelism: 256,
            parallelism_cap: orchestrator::MAX_PARALLELISM,
            catalog: Catalog::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AddModel {
    pub stl: Vec<u8>,
    pub name: String,
    pub tags: Vec<String>,
    pub share: bool,
    pub printer_id: Option<String>,
    pub material_id: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AddOutcome {
    pub model_id: String,
    /// False when identical content was already in the repository.
    pub created: bool,
    pub batch_id: Option<BatchId>,
    /// The locally computed document, only for unshared models.
    pub document: Option<MetadataDocument>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchHit {
    #[serde(flatten)]
    pub entry: ModelIndexEntry,
    pub preview: Option<SlicingResult>,
}

#[derive(Debug, Clone)]
pub struct Download {
    pub zip: Vec<u8>,
    pub has_metadata: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceSelection {
    Cells(Vec<CellIndex>),
    Fraction(f64),
}

/// Cloneable handle to a repository.
#[derive(Clone)]
pub struct Repository {
    inner: Arc<Inner>,
}

struct Inner {
    config: RepositoryConfig,
    store: Store,
    index: RwLock<BTreeMap<String, ModelIndexEntry>>,
    model_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    orchestrator: Orchestrator,
    backend: Arc<dyn SlicerBackend>,
    next_job: AtomicU64,
    private_results: Mutex<HashMap<BatchId, MetadataDocument>>,
}

impl Repository {
    /// Opens (or creates) a repository backed by the synthetic slicer.
    pub fn open(config: RepositoryConfig) -> Result<Self, RepositoryError> {
        Self::with_backend(config, Arc::new(SyntheticSlicer::new()))
    }

    pub fn with_backend(config: RepositoryConfig, backend: Arc<dyn SlicerBackend>) -> Result<Self, RepositoryError> {
        let store = Store::open(&config.store_dir)?;
        let index = store.load_index()?.models.into_iter().map(|e| (e.model_id.clone(), e)).collect();
        let orchestrator = Orchestrator::default().with_parallelism_cap(config.parallelism_cap);
        Ok(Self {
            inner: Arc::new(Inner {
                config,
                store,
                index: RwLock::new(index),
                model_locks: Mutex::new(HashMap::new()),
                orchestrator,
                backend,
                next_job: AtomicU64::new(1),
                private_results: Mutex::new(HashMap::new()),
            }),
        })
    }

    pub fn config(&self) -> &RepositoryConfig {
        &self.inner.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.inner.config.catalog
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.inner.orchestrator
    }

    pub fn default_axes(&self) -> GridAxes {
        let n = self.inner.config.grid_levels;
        grid::build_axes(n, n).expect("configured grid size is at least 2")
    }

    pub fn entry(&self, model_id: &str) -> Option<ModelIndexEntry> {
        self.inner.index.read().unwrap().get(model_id).cloned()
    }

    pub fn models(&self) -> Vec<ModelIndexEntry> {
        self.inner.index.read().unwrap().values().cloned().collect()
    }

    /// Adds a model.
    ///
    /// Shared models are stored and a background batch slices the configured
    /// fraction of the default grid, interpolating the rest. Unshared models are
    /// sliced the same way but nothing is written; the document is returned.
    /// Identical STL content always maps to the same model id.
    pub fn add_model(&self, request: AddModel) -> Result<AddOutcome, RepositoryError> {
        let mesh = Arc::new(geometry::parse_stl(&request.stl)?);
        geometry::compute_metrics(&mesh)?;
        let combo = self.combo(request.printer_id.as_deref(), request.material_id.as_deref())?;
        let model_id = content_id(&request.stl);
        let axes = self.default_axes();
        let cells = grid::place_samples(&axes, self.inner.config.slice_fraction)?;
        let parallelism = self.inner.config.default_parallelism.min(self.inner.config.parallelism_cap);

        if !request.share {
            let jobs = self.jobs(&model_id, &mesh, &axes, &combo, &cells);
            let batch = self.inner.orchestrator.submit_batch(jobs, parallelism, Arc::clone(&self.inner.backend))?;
            self.inner.orchestrator.wait(batch, Duration::MAX)?;
            let outcome = self.inner.orchestrator.outcome(batch)?;
            let document = build_document(&model_id, &combo, SliceGrid::new(axes), &outcome)?;
            return Ok(AddOutcome { model_id, created: false, batch_id: Some(batch), document: Some(document) });
        }

        let lock = self.model_lock(&model_id);
        let _guard = lock.lock().unwrap();
        if self.entry(&model_id).is_some() {
            return Ok(AddOutcome { model_id, created: false, batch_id: None, document: None });
        }
        self.inner.store.write_stl(&model_id, &request.stl)?;
        let entry = ModelIndexEntry {
            model_id: model_id.clone(),
            name: if request.name.is_empty() { model_id.clone() } else { request.name },
            tags: request.tags,
            download_count: 0,
            available_combos: Vec::new(),
            created_at: Utc::now(),
            path: Store::relative_model_dir(&model_id),
        };
        self.update_index(|index| {
            index.insert(model_id.clone(), entry);
        })?;
        log::info!("added model {model_id}");
        let batch = self.start_batch(&model_id, &mesh, &axes, &combo, &cells, parallelism, true)?;
        Ok(AddOutcome { model_id, created: true, batch_id: Some(batch), document: None })
    }

    /// Case-insensitive name/tag search, best matches first, then by popularity.
    pub fn search(&self, query: &str, printer_id: &str, material_id: &str) -> Result<Vec<SearchHit>, RepositoryError> {
        let combo = self.combo(Some(printer_id), Some(material_id))?;
        let needle = query.trim().to_lowercase();
        let mut scored: Vec<(u8, ModelIndexEntry)> = self
            .models()
            .into_iter()
            .filter_map(|e| match_score(&e, &needle).map(|score| (score, e)))
            .collect();
        scored.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(b.1.download_count.cmp(&a.1.download_count))
                .then_with(|| a.1.name.cmp(&b.1.name))
                .then_with(|| a.1.model_id.cmp(&b.1.model_id))
        });
        scored
            .into_iter()
            .map(|(_, entry)| {
                let preview = if entry.available_combos.contains(&combo) {
                    self.inner.store.load_document(&entry.model_id, &combo)?.and_then(|d| preview_of(&d))
                } else {
                    None
                };
                Ok(SearchHit { entry, preview })
            })
            .collect()
    }

    /// Zip with `model.stl` and `meta.json`; counts as one download.
    ///
    /// When there is no document for the combination the archive still
    /// succeeds, carrying an empty document.
    pub fn download(&self, model_id: &str, printer_id: &str, material_id: &str) -> Result<Download, RepositoryError> {
        let combo = self.combo(Some(printer_id), Some(material_id))?;
        if self.entry(model_id).is_none() {
            return Err(RepositoryError::UnknownModel(model_id.to_owned()));
        }
        let (stl, document) = {
            let lock = self.model_lock(model_id);
            let _guard = lock.lock().unwrap();
            (self.inner.store.read_stl(model_id)?, self.inner.store.load_document(model_id, &combo)?)
        };
        let has_metadata = document.is_some();
        let document = document.unwrap_or_else(|| MetadataDocument::empty(model_id, printer_id, material_id));
        let zip = build_archive(&stl, &document.to_json())?;
        self.update_index(|index| {
            if let Some(e) = index.get_mut(model_id) {
                e.download_count += 1;
            }
        })?;
        Ok(Download { zip, has_metadata })
    }

    /// Merges externally sliced results into the stored document.
    pub fn upload_results(
        &self,
        model_id: &str,
        printer_id: &str,
        material_id: &str,
        results: &[CellRecord],
    ) -> Result<MetadataDocument, RepositoryError> {
        let combo = self.combo(Some(printer_id), Some(material_id))?;
        if self.entry(model_id).is_none() {
            return Err(RepositoryError::UnknownModel(model_id.to_owned()));
        }
        if results.iter().any(|r| r.status != ResultStatus::Sliced) {
            return Err(RepositoryError::RejectedInterpolated);
        }
        if results.iter().any(|r| !(r.time_s >= 0.0 && r.material_mm3 >= 0.0)) {
            return Err(RepositoryError::InvalidDocument("negative or missing values".into()));
        }
        let incoming: Vec<(CellIndex, SlicingResult)> =
            results.iter().map(|r| (r.cell(), SlicingResult::sliced(r.time_s, r.material_mm3))).collect();
        self.merge_into_document(model_id, &combo, &incoming)
    }

    /// Starts slicing cells of a model's grid.
    ///
    /// Already sliced cells are skipped. With `share` off the merged document is
    /// kept in memory for the caller (see [`private_document`](Self::private_document))
    /// and the store is left untouched.
    pub fn start_slice(
        &self,
        model_id: &str,
        printer_id: &str,
        material_id: &str,
        selection: &SliceSelection,
        parallelism: Option<usize>,
        share: bool,
    ) -> Result<BatchId, RepositoryError> {
        let combo = self.combo(Some(printer_id), Some(material_id))?;
        if self.entry(model_id).is_none() {
            return Err(RepositoryError::UnknownModel(model_id.to_owned()));
        }
        let current = self.current_grid(model_id, &combo)?;
        let axes = current.axes().clone();
        let wanted = match selection {
            SliceSelection::Cells(cells) => {
                for &c in cells {
                    axes.check(c)?;
                }
                cells.clone()
            }
            SliceSelection::Fraction(f) => grid::place_samples(&axes, *f)?,
        };
        let mut cells: Vec<CellIndex> = wanted.into_iter().filter(|&c| !current.get(c).is_some_and(SlicingResult::is_sliced)).collect();
        cells.sort();
        cells.dedup();
        if cells.is_empty() {
            return Err(RepositoryError::NothingToSlice);
        }
        let mesh = Arc::new(geometry::parse_stl(&self.inner.store.read_stl(model_id)?)?);
        let parallelism = parallelism.unwrap_or(self.inner.config.default_parallelism.min(self.inner.config.parallelism_cap));
        self.start_batch(model_id, &mesh, &axes, &combo, &cells, parallelism, share)
    }

    /// The document produced by an unshared batch, once it has finished.
    pub fn private_document(&self, batch: BatchId) -> Option<MetadataDocument> {
        self.inner.private_results.lock().unwrap().get(&batch).cloned()
    }

    pub fn document(&self, model_id: &str, printer_id: &str, material_id: &str) -> Result<Option<MetadataDocument>, RepositoryError> {
        let combo = self.combo(Some(printer_id), Some(material_id))?;
        self.inner.store.load_document(model_id, &combo)
    }

    /// Starts batches for unsliced cells, most downloaded models first, until
    /// `capacity` jobs have been handed out.
    ///
    /// A model without any document is backfilled for the default printer and
    /// material; otherwise each existing document with gaps is a candidate.
    pub fn backfill_tick(&self, capacity: usize) -> Result<Vec<BatchId>, RepositoryError> {
        let mut models = self.models();
        models.sort_by(|a, b| b.download_count.cmp(&a.download_count).then_with(|| a.model_id.cmp(&b.model_id)));
        let default_combo = self.combo(None, None)?;
        let mut remaining = capacity;
        let mut batches = Vec::new();
        for entry in models {
            if remaining == 0 {
                break;
            }
            let mut combos = entry.available_combos.clone();
            if combos.is_empty() {
                combos.push(default_combo.clone());
            }
            for combo in combos {
                if remaining == 0 {
                    break;
                }
                let current = self.current_grid(&entry.model_id, &combo)?;
                let missing: Vec<CellIndex> = current
                    .iter()
                    .filter(|(_, r)| !r.is_some_and(|r| r.is_sliced()))
                    .map(|(c, _)| c)
                    .take(remaining)
                    .collect();
                if missing.is_empty() {
                    continue;
                }
                let mesh = Arc::new(geometry::parse_stl(&self.inner.store.read_stl(&entry.model_id)?)?);
                let parallelism = missing.len().min(self.inner.config.parallelism_cap);
                remaining -= missing.len();
                let id = self.start_batch(&entry.model_id, &mesh, current.axes(), &combo, &missing, parallelism, true)?;
                log::info!("backfill: batch {id} for {} ({} cells)", entry.model_id, missing.len());
                batches.push(id);
            }
        }
        Ok(batches)
    }

    /// Runs [`backfill_tick`](Self::backfill_tick) every `interval` on a
    /// background thread, waiting for each round's batches before the next.
    pub fn spawn_backfill_worker(&self, interval: Duration, capacity: usize) -> BackfillWorker {
        let stop = Arc::new(AtomicBool::new(false));
        let repo = self.clone();
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("backfill".into())
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    match repo.backfill_tick(capacity) {
                        Ok(batches) => {
                            for b in batches {
                                let _ = repo.orchestrator().wait(b, Duration::MAX);
                            }
                        }
                        Err(e) => log::warn!("backfill failed: {e}"),
                    }
                    let mut slept = Duration::ZERO;
                    while slept < interval && !flag.load(Ordering::SeqCst) {
                        let step = Duration::from_millis(50).min(interval - slept);
                        std::thread::sleep(step);
                        slept += step;
                    }
                }
            })
            .expect("spawning backfill worker");
        BackfillWorker { stop, handle: Some(handle) }
    }

    fn combo(&self, printer_id: Option<&str>, material_id: Option<&str>) -> Result<Combo, RepositoryError> {
        let catalog = self.catalog();
        let printer = printer_id.filter(|p| !p.is_empty()).unwrap_or(catalog.default_printer());
        let material = material_id.filter(|m| !m.is_empty()).unwrap_or(catalog.default_material());
        if !catalog.has_printer(printer) {
            return Err(RepositoryError::UnknownPrinter(printer.to_owned()));
        }
        if !catalog.has_material(material) {
            return Err(RepositoryError::UnknownMaterial(material.to_owned()));
        }
        Ok(Combo::new(printer, material))
    }

    fn model_lock(&self, model_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.inner.model_locks.lock().unwrap();
        Arc::clone(locks.entry(model_id.to_owned()).or_default())
    }

    fn update_index(&self, f: impl FnOnce(&mut BTreeMap<String, ModelIndexEntry>)) -> Result<(), RepositoryError> {
        let mut index = self.inner.index.write().unwrap();
        f(&mut index);
        let file = store::IndexFile { schema_version: 1, models: index.values().cloned().collect() };
        self.inner.store.save_index(&file)
    }

    fn current_grid(&self, model_id: &str, combo: &Combo) -> Result<SliceGrid, RepositoryError> {
        match self.inner.store.load_document(model_id, combo)? {
            Some(doc) if doc.has_axes() => doc.to_grid(),
            _ => Ok(SliceGrid::new(self.default_axes())),
        }
    }

    fn merge_into_document(
        &self,
        model_id: &str,
        combo: &Combo,
        incoming: &[(CellIndex, SlicingResult)],
    ) -> Result<MetadataDocument, RepositoryError> {
        let lock = self.model_lock(model_id);
        let _guard = lock.lock().unwrap();
        let current = self.current_grid(model_id, combo)?;
        let merged = orchestrator::merge_results(&current, incoming)?;
        let document = MetadataDocument::from_grid(model_id, &combo.printer_id, &combo.material_id, &refresh_interpolation(merged)?);
        self.inner.store.save_document(&document)?;
        self.update_index(|index| {
            if let Some(e) = index.get_mut(model_id) {
                if !e.available_combos.contains(combo) {
                    e.available_combos.push(combo.clone());
                    e.available_combos.sort();
                }
            }
        })?;
        Ok(document)
    }

    fn jobs(&self, model_id: &str, mesh: &Arc<TriangleMesh>, axes: &GridAxes, combo: &Combo, cells: &[CellIndex]) -> Vec<SliceJob> {
        cells
            .iter()
            .map(|&cell| {
                let (layer_height, scale) = axes.point(cell);
                let request = SliceRequest {
                    model: ModelRef::Mesh(Arc::clone(mesh)),
                    profile: PrintProfile::for_layer_height(&combo.printer_id, &combo.material_id, layer_height),
                    scale,
                };
                SliceJob::new(self.inner.next_job.fetch_add(1, Ordering::Relaxed), model_id, cell, request)
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn start_batch(
        &self,
        model_id: &str,
        mesh: &Arc<TriangleMesh>,
        axes: &GridAxes,
        combo: &Combo,
        cells: &[CellIndex],
        parallelism: usize,
        share: bool,
    ) -> Result<BatchId, RepositoryError> {
        let jobs = self.jobs(model_id, mesh, axes, combo, cells);
        let repo = self.clone();
        let model = model_id.to_owned();
        let combo = combo.clone();
        let hook: orchestrator::CompletionHook = Box::new(move |outcome: &BatchOutcome| {
            for failed in outcome.failures() {
                log::warn!("batch {}: cell ({}, {}) failed: {:?}", outcome.batch_id, failed.cell.r, failed.cell.s, failed.error);
            }
            let result = if share {
                repo.merge_into_document(&model, &combo, &outcome.results()).map(|_| ())
            } else {
                repo.current_grid(&model, &combo)
                    .and_then(|grid| build_document(&model, &combo, grid, outcome))
                    .map(|doc| {
                        repo.inner.private_results.lock().unwrap().insert(outcome.batch_id, doc);
                    })
            };
            if let Err(e) = result {
                log::error!("batch {}: merging results for {model} failed: {e}", outcome.batch_id);
            }
        });
        Ok(self.inner.orchestrator.submit_batch_then(jobs, parallelism, Arc::clone(&self.inner.backend), hook)?)
    }
}

/// Stops the backfill thread when dropped.
pub struct BackfillWorker {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl BackfillWorker {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for BackfillWorker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Stable identifier derived from the STL bytes.
pub fn content_id(stl: &[u8]) -> String {
    let digest = Sha256::digest(stl);
    hex::encode(&digest[..8])
}

/// Re-fits the unsliced cells. Sliced cells that cannot support a fit (too
/// few, or all on one line) leave the grid as merged.
fn refresh_interpolation(grid: SliceGrid) -> Result<SliceGrid, RepositoryError> {
    match interpolation::interpolate_grid(&grid) {
        Ok(filled) => Ok(filled),
        Err(InterpolationError::TooFewSamples(_) | InterpolationError::DegenerateDesign) => Ok(grid),
    }
}

fn build_document(model_id: &str, combo: &Combo, base: SliceGrid, outcome: &BatchOutcome) -> Result<MetadataDocument, RepositoryError> {
    let merged = orchestrator::merge_results(&base, &outcome.results())?;
    let grid = refresh_interpolation(merged)?;
    Ok(MetadataDocument::from_grid(model_id, &combo.printer_id, &combo.material_id, &grid))
}

/// Result at the populated cell closest to the preview configuration, with
/// both axes normalized to their span.
fn preview_of(doc: &MetadataDocument) -> Option<SlicingResult> {
    let axes = &doc.axes;
    let span = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        if hi > lo { hi - lo } else { 1.0 }
    };
    let (r_span, s_span) = (span(&axes.resolutions), span(&axes.scales));
    doc.cells
        .iter()
        .filter(|c| axes.contains(c.cell()))
        .min_by(|a, b| {
            let dist = |c: &CellRecord| {
                let (r, s) = axes.point(c.cell());
                ((r - PREVIEW_LAYER_MM) / r_span).powi(2) + ((s - PREVIEW_SCALE) / s_span).powi(2)
            };
            dist(a).total_cmp(&dist(b))
        })
        .map(CellRecord::result)
}

/// Higher is better; `None` means no match. An empty query matches everything equally.
fn match_score(entry: &ModelIndexEntry, needle: &str) -> Option<u8> {
    if needle.is_empty() {
        return Some(0);
    }
    let name = entry.name.to_lowercase();
    if name == needle {
        Some(4)
    } else if name.starts_with(needle) {
        Some(3)
    } else if name.contains(needle) {
        Some(2)
    } else if entry.tags.iter().any(|t| t.to_lowercase().contains(needle)) {
        Some(1)
    } else {
        None
    }
}

fn build_archive(stl: &[u8], meta: &[u8]) -> Result<Vec<u8>, RepositoryError> {
    let archive_err = |e: zip::result::ZipError| RepositoryError::Archive(e.to_string());
    let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let options = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    writer.start_file("model.stl", options).map_err(archive_err)?;
    writer.write_all(stl)?;
    writer.start_file("meta.json", options).map_err(archive_err)?;
    writer.write_all(meta)?;
    Ok(writer.finish().map_err(archive_err)?.into_inner())
}
