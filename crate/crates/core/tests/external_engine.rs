//! Drives `ExternalSlicer` against small shell scripts that mimic the
//! engine's command line and log output.

#![cfg(unix)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use slicehub::geometry::cube;
use slicehub::grid::CellIndex;
use slicehub::orchestrator::{JobState, Orchestrator, SliceJob};
use slicehub::slicer::{ExternalSlicer, ModelRef, PrintProfile, SliceError, SliceRequest, SlicerBackend};

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Logs its arguments, writes a gcode file, and reports a time that depends on
/// the layer height so the test can tell the override reached the engine.
fn fake_engine(dir: &Path) -> PathBuf {
    let log = dir.join("calls.log");
    script(
        dir,
        "engine.sh",
        &format!(
            r#"echo "$@" >> {log}
out=""; lh=""
while [ $# -gt 0 ]; do
  case "$1" in
    -o) out="$2"; shift ;;
    -s) case "$2" in layer_height=*) lh="${{2#layer_height=}}" ;; esac; shift ;;
    -l) [ -s "$2" ] || {{ echo "missing model" >&2; exit 3; }}; shift ;;
  esac
  shift
done
echo ";FLAVOR:Marlin" > "$out"
echo "Slicing done" >&2
awk -v lh="$lh" 'BEGIN {{ printf "Print time (s): %d\nFilament (mm^3): 1234.5\n", 12 / lh }}' >&2
"#,
            log = log.display()
        ),
    )
}

fn request(lh: f64, scale: f64) -> SliceRequest {
    SliceRequest {
        model: ModelRef::Mesh(Arc::new(cube(20.0))),
        profile: PrintProfile::for_layer_height("ultimaker-3", "pla", lh),
        scale,
    }
}

#[test]
fn parses_engine_summary_and_passes_layer_height() {
    let dir = tempfile::tempdir().unwrap();
    let engine = fake_engine(dir.path());
    let settings = dir.path().join("printer.def.json");
    fs::write(&settings, "{}").unwrap();
    let slicer = ExternalSlicer::new(&engine, &settings);

    let result = slicer.slice(&request(0.1, 0.5)).unwrap();
    assert_eq!(result.print_time_s, 120.0);
    assert_eq!(result.material_mm3, 1234.5);
    assert!(result.is_sliced());

    let log = fs::read_to_string(dir.path().join("calls.log")).unwrap();
    assert!(log.starts_with("slice -j "), "{log}");
    assert!(log.contains(&format!("-j {}", settings.display())));
    assert!(log.contains("-s layer_height=0.1"));
}

#[test]
fn gcode_and_model_do_not_outlive_the_call() {
    let dir = tempfile::tempdir().unwrap();
    let engine = fake_engine(dir.path());
    let slicer = ExternalSlicer::new(&engine, dir.path().join("p.json"));
    slicer.slice(&request(0.2, 1.0)).unwrap();

    let log = fs::read_to_string(dir.path().join("calls.log")).unwrap();
    let args: Vec<&str> = log.split_whitespace().collect();
    let after = |flag: &str| PathBuf::from(args[args.iter().position(|a| *a == flag).unwrap() + 1]);
    let (gcode, model) = (after("-o"), after("-l"));
    assert_eq!(gcode.extension().unwrap(), "gcode");
    assert!(!gcode.exists());
    assert!(!model.exists());
    assert!(!gcode.parent().unwrap().exists());
}

#[test]
fn extra_settings_are_forwarded() {
    let dir = tempfile::tempdir().unwrap();
    let engine = fake_engine(dir.path());
    let slicer = ExternalSlicer::new(&engine, dir.path().join("p.json")).setting("infill_sparse_density", "20");
    slicer.slice(&request(0.15, 1.0)).unwrap();
    let log = fs::read_to_string(dir.path().join("calls.log")).unwrap();
    assert!(log.contains("-s infill_sparse_density=20"));
}

#[test]
fn filament_length_converts_to_volume() {
    let dir = tempfile::tempdir().unwrap();
    let engine = script(dir.path(), "engine.sh", "echo ';TIME:600'\necho ';Filament used: 2m'\n");
    let slicer = ExternalSlicer::new(&engine, dir.path().join("p.json")).filament_diameter(1.75);
    let result = slicer.slice(&request(0.2, 1.0)).unwrap();
    assert_eq!(result.print_time_s, 600.0);
    let expected = 2000.0 * std::f64::consts::PI * (1.75f64 / 2.0).powi(2);
    assert!((result.material_mm3 - expected).abs() < 1e-9 * expected);
}

#[test]
fn failures_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let failing = script(dir.path(), "fail.sh", "echo 'no printer definition' >&2\nexit 2\n");
    let err = ExternalSlicer::new(&failing, dir.path().join("p.json")).slice(&request(0.2, 1.0)).unwrap_err();
    assert!(matches!(&err, SliceError::BackendFailure(m) if m.contains("no printer definition")), "{err}");

    let silent = script(dir.path(), "silent.sh", "exit 0\n");
    let err = ExternalSlicer::new(&silent, dir.path().join("p.json")).slice(&request(0.2, 1.0)).unwrap_err();
    assert!(matches!(err, SliceError::ParseFailure { what: "print time" }));

    let missing = ExternalSlicer::new(dir.path().join("nope"), dir.path().join("p.json"));
    assert!(matches!(missing.slice(&request(0.2, 1.0)), Err(SliceError::BackendFailure(_))));
}

#[test]
fn flaky_engine_succeeds_on_retry() {
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("seen");
    let engine = script(
        dir.path(),
        "flaky.sh",
        &format!(
            "if [ ! -e {m} ]; then touch {m}; exit 1; fi\necho 'Print time (s): 42'\necho 'Filament (mm^3): 7'\n",
            m = marker.display()
        ),
    );
    let backend: Arc<dyn SlicerBackend> = Arc::new(ExternalSlicer::new(&engine, dir.path().join("p.json")));
    let orchestrator = Orchestrator::default();
    let job = SliceJob::new(1, "m", CellIndex::new(0, 0), request(0.2, 1.0));
    let batch = orchestrator.submit_batch(vec![job], 1, backend).unwrap();
    let status = orchestrator.wait(batch, Duration::from_secs(30)).unwrap();
    assert_eq!((status.completed, status.failed), (1, 0));
    let outcome = orchestrator.outcome(batch).unwrap();
    assert_eq!(outcome.jobs[0].state, JobState::Done);
    assert_eq!(outcome.jobs[0].attempts, 2);
    assert_eq!(outcome.jobs[0].result.unwrap().print_time_s, 42.0);
}
