//! Slicing backends.
//!
//! [`SyntheticSlicer`] evaluates a closed-form cost model so that grids and
//! experiments can run without a slicing engine installed. [`ExternalSlicer`]
//! shells out to a CuraEngine-compatible command line and scrapes the print
//! time and filament usage it reports. Neither keeps the generated toolpath.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError, MeshMetrics, TriangleMesh};

/// Fraction of the enclosed volume that is extruded as infill.
pub const INFILL: f64 = 0.2;
/// Shell thickness in mm; shell material is area times this.
pub const WALL_MM: f64 = 1.2;
pub const NOZZLE_MM: f64 = 0.4;
pub const SPEED_MM_S: f64 = 50.0;
/// Fixed per-layer overhead in seconds (travel, layer change).
pub const LAYER_OVERHEAD_S: f64 = 2.0;

pub const MIN_LAYER_HEIGHT_MM: f64 = 0.02;
pub const MAX_LAYER_HEIGHT_MM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("invalid print profile: {0}")]
    InvalidProfile(String),
    #[error("invalid scale {0}: must be in (0, 1]")]
    InvalidScale(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("slicing backend failed: {0}")]
    BackendFailure(String),
    #[error("could not read {what} from engine output")]
    ParseFailure { what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrintProfile {
    pub profile_id: String,
    pub layer_height_mm: f64,
    pub display_name: String,
    pub printer_id: String,
    pub material_id: String,
}

impl PrintProfile {
    /// A profile that differs from the printer defaults only in layer height.
    pub fn for_layer_height(printer_id: &str, material_id: &str, layer_height_mm: f64) -> Self {
        Self {
            profile_id: format!("lh-{layer_height_mm:.4}"),
            layer_height_mm,
            display_name: format!("{layer_height_mm:.3} mm"),
            printer_id: printer_id.to_owned(),
            material_id: material_id.to_owned(),
        }
    }

    pub fn validate(&self) -> Result<(), SliceError> {
        let lh = self.layer_height_mm;
        if !(MIN_LAYER_HEIGHT_MM..=MAX_LAYER_HEIGHT_MM).contains(&lh) {
            return Err(SliceError::InvalidProfile(format!(
                "{}: layer height {lh} outside [{MIN_LAYER_HEIGHT_MM}, {MAX_LAYER_HEIGHT_MM}] mm",
                self.profile_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultStatus {
    Sliced,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicingResult {
    pub print_time_s: f64,
    pub material_mm3: f64,
    pub status: ResultStatus,
    /// Estimated prediction error in percent; only set on interpolated results.
    pub accuracy_pct: Option<f64>,
}

impl SlicingResult {
    pub fn sliced(print_time_s: f64, material_mm3: f64) -> Self {
        Self { print_time_s, material_mm3, status: ResultStatus::Sliced, accuracy_pct: None }
    }

    pub fn interpolated(print_time_s: f64, material_mm3: f64, accuracy_pct: f64) -> Self {
        Self {
            print_time_s,
            material_mm3,
            status: ResultStatus::Interpolated,
            accuracy_pct: Some(accuracy_pct),
        }
    }

    pub fn is_sliced(&self) -> bool {
        self.status == ResultStatus::Sliced
    }

    /// Material as grams for a filament of the given density (g/cm³).
    pub fn material_grams(&self, density_g_cm3: f64) -> f64 {
        self.material_mm3 / 1000.0 * density_g_cm3
    }
}

/// The model a request refers to: an in-memory mesh or an STL on disk.
#[derive(Debug, Clone)]
pub enum ModelRef {
    Mesh(Arc<TriangleMesh>),
    File(PathBuf),
}

impl ModelRef {
    pub fn load(&self) -> Result<Arc<TriangleMesh>, SliceError> {
        match self {
            ModelRef::Mesh(mesh) => Ok(Arc::clone(mesh)),
            ModelRef::File(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| SliceError::BackendFailure(format!("{}: {e}", path.display())))?;
                Ok(Arc::new(geometry::parse_stl(&bytes)?))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SliceRequest {
    pub model: ModelRef,
    pub profile: PrintProfile,
    /// Uniform scale factor, 1.0 = original size.
    pub scale: f64,
}

impl SliceRequest {
    pub fn validate(&self) -> Result<(), SliceError> {
        self.profile.validate()?;
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(SliceError::InvalidScale(self.scale));
        }
        Ok(())
    }
}

/// A slicing engine. Implementations must be safe to call concurrently.
pub trait SlicerBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Slices one request, returning a `Sliced` result. Toolpaths are never returned.
    fn slice(&self, request: &SliceRequest) -> Result<SlicingResult, SliceError>;
}

/// Closed-form print time and filament volume for metrics at a given layer height and scale.
///
/// Returns `(print_time_s, material_mm3)`.
pub fn synthetic_cost(metrics: &MeshMetrics, layer_height_mm: f64, scale: f64) -> (f64, f64) {
    let volume = metrics.volume_mm3 * scale.powi(3);
    let area = metrics.surface_area_mm2 * scale * scale;
    let layers = layer_count(metrics.height_mm * scale, layer_height_mm);
    let material = volume * INFILL + area * WALL_MM;
    let flow = layer_height_mm * NOZZLE_MM * SPEED_MM_S;
    let time = LAYER_OVERHEAD_S * layers + material / flow;
    (time, material)
}

/// `ceil(height / layer_height)`, ignoring float noise just above an integer.
fn layer_count(height_mm: f64, layer_height_mm: f64) -> f64 {
    let raw = height_mm / layer_height_mm;
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        raw.ceil()
    }
}

/// Deterministic analytic slicer with an optional simulated processing delay.
#[derive(Debug, Clone, Default)]
pub struct SyntheticSlicer {
    delay: Option<Duration>,
}

impl SyntheticSlicer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps for `delay` on every call, standing in for engine run time.
    pub fn with_delay(delay: Duration) -> Self {
        Self { delay: Some(delay) }
    }

    pub fn slice_metrics(&self, metrics: &MeshMetrics, profile: &PrintProfile, scale: f64) -> SlicingResult {
        let (time, material) = synthetic_cost(metrics, profile.layer_height_mm, scale);
        SlicingResult::sliced(time, material)
    }
}

impl SlicerBackend for SyntheticSlicer {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn slice(&self, request: &SliceRequest) -> Result<SlicingResult, SliceError> {
        request.validate()?;
        let mesh = request.model.load()?;
        let metrics = geometry::compute_metrics(&mesh)?;
        if let Some(delay) = self.delay {
            std::thread::sleep(delay);
        }
        Ok(self.slice_metrics(&metrics, &request.profile, request.scale))
    }
}

/// Adapter for a CuraEngine-style command line:
/// `<engine> slice -j <settings.json> -l <model.stl> -s key=value ... -o <out.gcode>`.
///
/// The mesh is scaled before it is handed to the engine; each call gets its own
/// temporary directory, which also receives the gcode and is removed afterwards.
#[derive(Debug, Clone)]
pub struct ExternalSlicer {
    engine: PathBuf,
    settings: PathBuf,
    filament_diameter_mm: f64,
    extra_settings: Vec<(String, String)>,
}

impl ExternalSlicer {
    pub fn new(engine: impl Into<PathBuf>, settings: impl Into<PathBuf>) -> Self {
        Self {
            engine: engine.into(),
            settings: settings.into(),
            filament_diameter_mm: 2.85,
            extra_settings: Vec::new(),
        }
    }

    /// Diameter used to convert reported filament length into volume.
    pub fn filament_diameter(mut self, mm: f64) -> Self {
        self.filament_diameter_mm = mm;
        self
    }

    pub fn setting(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra_settings.push((key.into(), value.into()));
        self
    }

    fn overrides(&self, request: &SliceRequest) -> Vec<String> {
        let mut args = vec![format!("layer_height={}", request.profile.layer_height_mm)];
        args.extend(self.extra_settings.iter().map(|(k, v)| format!("{k}={v}")));
        args
    }

    fn run(&self, request: &SliceRequest, workdir: &Path) -> Result<String, SliceError> {
        let mesh = request.model.load()?;
        let model_path = workdir.join("model.stl");
        let scaled = if request.scale == 1.0 { (*mesh).clone() } else { mesh.scaled(request.scale) };
        std::fs::write(&model_path, geometry::write_binary_stl(&scaled))
            .map_err(|e| SliceError::BackendFailure(format!("writing temporary mesh: {e}")))?;

        let mut cmd = Command::new(&self.engine);
        cmd.arg("slice").arg("-j").arg(&self.settings).arg("-l").arg(&model_path);
        for kv in self.overrides(request) {
            cmd.arg("-s").arg(kv);
        }
        cmd.arg("-o").arg(workdir.join("out.gcode"));
        let output = cmd
            .output()
            .map_err(|e| SliceError::BackendFailure(format!("{}: {e}", self.engine.display())))?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        let stderr = String::from_utf8_lossy(&output.stderr);
        if !output.status.success() {
            return Err(SliceError::BackendFailure(format!(
                "{} exited with {}: {}",
                self.engine.display(),
                output.status,
                stderr.trim()
            )));
        }
        // CuraEngine logs its summary on stderr; older builds use stdout.
        Ok(format!("{stdout}\n{stderr}"))
    }
}

impl SlicerBackend for ExternalSlicer {
    fn name(&self) -> &str {
        "external"
    }

    fn slice(&self, request: &SliceRequest) -> Result<SlicingResult, SliceError> {
        request.validate()?;
        let workdir = tempfile::Builder::new()
            .prefix("slicehub-")
            .tempdir()
            .map_err(|e| SliceError::BackendFailure(format!("creating temp dir: {e}")))?;
        let output = self.run(request, workdir.path())?;
        let (time, material) = parse_engine_output(&output, self.filament_diameter_mm)?;
        Ok(SlicingResult::sliced(time, material))
    }
}

struct OutputPatterns {
    time_s: Regex,
    time_comment: Regex,
    volume_mm3: Regex,
    length_mm: Regex,
    length_m: Regex,
}

fn patterns() -> &'static OutputPatterns {
    static PATTERNS: OnceLock<OutputPatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| OutputPatterns {
        time_s: Regex::new(r"(?m)^\s*Print time \(s\):\s*([0-9]+(?:\.[0-9]+)?)").unwrap(),
        time_comment: Regex::new(r"(?m)^;TIME:\s*([0-9]+(?:\.[0-9]+)?)").unwrap(),
        volume_mm3: Regex::new(r"(?m)^\s*Filament \(mm\^3\):\s*([0-9]+(?:\.[0-9]+)?)").unwrap(),
        length_mm: Regex::new(r"(?m)^\s*Filament \(mm\):\s*([0-9]+(?:\.[0-9]+)?)").unwrap(),
        length_m: Regex::new(r"(?m)^;Filament used:\s*([0-9]+(?:\.[0-9]+)?)m").unwrap(),
    })
}

/// Extracts `(print_time_s, material_mm3)` from engine output.
///
/// Recognized lines: `Print time (s): N` or `;TIME:N` for time, and
/// `Filament (mm^3): N`, `Filament (mm): N` or `;Filament used: Nm` for
/// material. Lengths are converted to volume with the filament diameter.
pub fn parse_engine_output(output: &str, filament_diameter_mm: f64) -> Result<(f64, f64), SliceError> {
    let p = patterns();
    let capture = |re: &Regex| -> Option<f64> { re.captures(output)?.get(1)?.as_str().parse().ok() };
    let time = capture(&p.time_s)
        .or_else(|| capture(&p.time_comment))
        .ok_or(SliceError::ParseFailure { what: "print time" })?;
    let cross_section = std::f64::consts::PI * (filament_diameter_mm / 2.0).powi(2);
    let material = capture(&p.volume_mm3)
        .or_else(|| capture(&p.length_mm).map(|mm| mm * cross_section))
        .or_else(|| capture(&p.length_m).map(|m| m * 1000.0 * cross_section))
        .ok_or(SliceError::ParseFailure { what: "filament amount" })?;
    Ok((time, material))
}
