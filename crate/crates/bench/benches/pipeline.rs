use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slicehub::geometry::{cube, write_binary_stl};
use slicehub::grid::{default_bounds, filter};
use slicehub::interpolation::{fit_grid, interpolate_grid};
use slicehub::orchestrator::SliceJob;
use slicehub::repository::MetadataDocument;
use slicehub::slicer::ModelRef;
use slicehub::{compute_metrics, parse_stl, Orchestrator, PrintProfile, SliceRequest, SlicerBackend, SyntheticSlicer};
use slicehub_bench::sampled_grid;

fn geometry(c: &mut Criterion) {
    let stl = write_binary_stl(&cube(20.0));
    c.bench_function("parse_and_measure_cube", |b| {
        b.iter(|| compute_metrics(&parse_stl(black_box(&stl)).unwrap()).unwrap())
    });
}

fn interpolation(c: &mut Criterion) {
    let mut group = c.benchmark_group("interpolate_16x16");
    for fraction in [0.02, 0.10, 0.30] {
        let grid = sampled_grid(20.0, 16, fraction);
        group.bench_with_input(BenchmarkId::new("fit", fraction), &grid, |b, g| b.iter(|| fit_grid(g).unwrap()));
        group.bench_with_input(BenchmarkId::new("fill", fraction), &grid, |b, g| {
            b.iter(|| interpolate_grid(g).unwrap())
        });
    }
    group.finish();
}

fn filtering(c: &mut Criterion) {
    let grid = interpolate_grid(&sampled_grid(20.0, 16, 0.10)).unwrap();
    let bounds = default_bounds(&grid).unwrap();
    c.bench_function("filter_16x16", |b| b.iter(|| filter(black_box(&grid), &bounds).unwrap()));
}

fn documents(c: &mut Criterion) {
    let grid = interpolate_grid(&sampled_grid(20.0, 16, 0.10)).unwrap();
    let doc = MetadataDocument::from_grid("0123456789abcdef", "ultimaker-3", "pla", &grid);
    let json = doc.to_json();
    c.bench_function("document_to_json", |b| b.iter(|| black_box(&doc).to_json()));
    c.bench_function("document_from_json", |b| b.iter(|| MetadataDocument::from_json(black_box(&json)).unwrap()));
}

fn orchestration(c: &mut Criterion) {
    let mesh = Arc::new(cube(20.0));
    let grid = sampled_grid(20.0, 16, 1.0);
    let backend: Arc<dyn SlicerBackend> = Arc::new(SyntheticSlicer::new());
    let orchestrator = Orchestrator::default();
    let mut group = c.benchmark_group("synthetic_batch_256");
    group.sample_size(20);
    for parallelism in [1, 16, 256] {
        group.bench_function(BenchmarkId::from_parameter(parallelism), |b| {
            b.iter(|| {
                let jobs = grid
                    .axes()
                    .cells()
                    .enumerate()
                    .map(|(i, cell)| {
                        let (lh, scale) = grid.axes().point(cell);
                        let request = SliceRequest {
                            model: ModelRef::Mesh(mesh.clone()),
                            profile: PrintProfile::for_layer_height("ultimaker-3", "pla", lh),
                            scale,
                        };
                        SliceJob::new(i as u64, "bench", cell, request)
                    })
                    .collect();
                let batch = orchestrator.submit_batch(jobs, parallelism, backend.clone()).unwrap();
                orchestrator.wait(batch, Duration::MAX).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, geometry, interpolation, filtering, documents, orchestration);
criterion_main!(benches);
