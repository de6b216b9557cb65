//! Parallel execution of slicing jobs, batch progress, and result merging.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellIndex, GridError, SliceGrid};
use crate::slicer::{SliceRequest, SlicerBackend, SlicingResult};

pub const MAX_PARALLELISM: usize = 1000;
/// Attempts per job: the first run plus one retry.
pub const MAX_ATTEMPTS: u32 = 2;
/// Suggested interval for clients polling batch status.
pub const POLL_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("parallelism {0} outside 1..={MAX_PARALLELISM}")]
    ParallelismOutOfRange(usize),
    #[error("batch has no jobs")]
    EmptyBatch,
    #[error("unknown batch {0}")]
    UnknownBatch(BatchId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatchId(pub u64);

impl std::fmt::Display for BatchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct SliceJob {
    pub job_id: u64,
    pub model_id: String,
    pub cell: CellIndex,
    pub request: SliceRequest,
    pub state: JobState,
    pub result: Option<SlicingResult>,
    pub error: Option<String>,
    pub attempts: u32,
}

impl SliceJob {
    pub fn new(job_id: u64, model_id: impl Into<String>, cell: CellIndex, request: SliceRequest) -> Self {
        Self {
            job_id,
            model_id: model_id.into(),
            cell,
            request,
            state: JobState::Pending,
            result: None,
            error: None,
            attempts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStatus {
    pub batch_id: BatchId,
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub eta_s: Option<f64>,
    pub started_at: DateTime<Utc>,
    /// Set once every job has returned and the completion hook has run.
    pub finished: bool,
}

pub type Task = Box<dyn FnOnce() + Send + 'static>;

/// Runs a set of tasks with bounded concurrency.
///
/// `run_all` blocks until every task has returned. The in-process pool is the
/// only implementation here; a remote executor would forward tasks elsewhere.
pub trait Executor: Send + Sync {
    fn run_all(&self, tasks: Vec<Task>, parallelism: usize);
}

/// Spawns up to `parallelism` OS threads that drain a shared task queue.
#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadPoolExecutor;

impl Executor for ThreadPoolExecutor {
    fn run_all(&self, tasks: Vec<Task>, parallelism: usize) {
        let workers = parallelism.clamp(1, tasks.len().max(1));
        let queue = Mutex::new(VecDeque::from(tasks));
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let next = queue.lock().unwrap().pop_front();
                    match next {
                        Some(task) => task(),
                        None => break,
                    }
                });
            }
        });
    }
}

struct Batch {
    id: BatchId,
    started: Instant,
    started_at: DateTime<Utc>,
    total: usize,
    jobs: Mutex<Vec<SliceJob>>,
    completed: AtomicUsize,
    failed: AtomicUsize,
    state: Mutex<Completion>,
    finished_cv: Condvar,
}

#[derive(Default)]
struct Completion {
    finished: bool,
    elapsed: Option<Duration>,
}

impl Batch {
    fn status(&self) -> BatchStatus {
        let completion = self.state.lock().unwrap();
        // read `failed` before `completed` so a concurrent finish can only raise the sum
        let failed = self.failed.load(Ordering::SeqCst);
        let completed = self.completed.load(Ordering::SeqCst);
        let elapsed = completion.elapsed.unwrap_or_else(|| self.started.elapsed()).as_secs_f64();
        let remaining = self.total.saturating_sub(completed + failed);
        let eta_s = if completed + failed == 0 {
            None
        } else {
            Some(elapsed * remaining as f64 / completed.max(1) as f64)
        };
        BatchStatus {
            batch_id: self.id,
            total: self.total,
            completed,
            failed,
            eta_s,
            started_at: self.started_at,
            finished: completion.finished,
        }
    }
}

/// Final state of every job in a batch, in submission order.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub batch_id: BatchId,
    pub jobs: Vec<SliceJob>,
}

impl BatchOutcome {
    /// `(cell, result)` for every successful job.
    pub fn results(&self) -> Vec<(CellIndex, SlicingResult)> {
        self.jobs.iter().filter_map(|j| j.result.map(|r| (j.cell, r))).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &SliceJob> {
        self.jobs.iter().filter(|j| j.state == JobState::Failed)
    }
}

pub type CompletionHook = Box<dyn FnOnce(&BatchOutcome) + Send + 'static>;

/// Tracks batches and dispatches their jobs to an [`Executor`].
pub struct Orchestrator {
    executor: Arc<dyn Executor>,
    batches: Mutex<HashMap<BatchId, Arc<Batch>>>,
    next_batch: AtomicU64,
    max_parallelism: usize,
}

impl Default for Orchestrator {
    fn default() -> Self {
        Self::new(Arc::new(ThreadPoolExecutor))
    }
}

impl Orchestrator {
    pub fn new(executor: Arc<dyn Executor>) -> Self {
        Self { executor, batches: Mutex::new(HashMap::new()), next_batch: AtomicU64::new(1), max_parallelism: MAX_PARALLELISM }
    }

    /// Lowers the accepted parallelism ceiling (never above [`MAX_PARALLELISM`]).
    pub fn with_parallelism_cap(mut self, cap: usize) -> Self {
        self.max_parallelism = cap.clamp(1, MAX_PARALLELISM);
        self
    }

    pub fn parallelism_cap(&self) -> usize {
        self.max_parallelism
    }

    /// Starts a batch in the background and returns immediately.
    pub fn submit_batch(
        &self,
        jobs: Vec<SliceJob>,
        parallelism: usize,
        backend: Arc<dyn SlicerBackend>,
    ) -> Result<BatchId, OrchestratorError> {
        self.submit_batch_then(jobs, parallelism, backend, Box::new(|_| {}))
    }

    /// Like [`submit_batch`](Self::submit_batch), running `on_complete` after the
    /// last job returns and before the batch reports itself finished.
    pub fn submit_batch_then(
        &self,
        jobs: Vec<SliceJob>,
        parallelism: usize,
        backend: Arc<dyn SlicerBackend>,
        on_complete: CompletionHook,
    ) -> Result<BatchId, OrchestratorError> {
        if parallelism == 0 || parallelism > self.max_parallelism {
            return Err(OrchestratorError::ParallelismOutOfRange(parallelism));
        }
        if jobs.is_empty() {
            return Err(OrchestratorError::EmptyBatch);
        }
        let id = BatchId(self.next_batch.fetch_add(1, Ordering::SeqCst));
        let batch = Arc::new(Batch {
            id,
            started: Instant::now(),
            started_at: Utc::now(),
            total: jobs.len(),
            jobs: Mutex::new(jobs),
            completed: AtomicUsize::new(0),
            failed: AtomicUsize::new(0),
            state: Mutex::new(Completion::default()),
            finished_cv: Condvar::new(),
        });
        self.batches.lock().unwrap().insert(id, Arc::clone(&batch));

        let executor = Arc::clone(&self.executor);
        thread::Builder::new()
            .name(format!("batch-{id}"))
            .spawn(move || run_batch(batch, executor, parallelism, backend, on_complete))
            .expect("spawning batch coordinator");
        log::debug!("submitted batch {id}");
        Ok(id)
    }

    pub fn status(&self, id: BatchId) -> Result<BatchStatus, OrchestratorError> {
        Ok(self.batch(id)?.status())
    }

    /// Blocks until the batch is finished or the timeout elapses.
    pub fn wait(&self, id: BatchId, timeout: Duration) -> Result<BatchStatus, OrchestratorError> {
        let batch = self.batch(id)?;
        let deadline = Instant::now().checked_add(timeout);
        let mut state = batch.state.lock().unwrap();
        while !state.finished {
            state = match deadline {
                None => batch.finished_cv.wait(state).unwrap(),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        break;
                    }
                    batch.finished_cv.wait_timeout(state, deadline - now).unwrap().0
                }
            };
        }
        drop(state);
        Ok(batch.status())
    }

    /// Snapshot of every job in the batch.
    pub fn outcome(&self, id: BatchId) -> Result<BatchOutcome, OrchestratorError> {
        let batch = self.batch(id)?;
        let jobs = batch.jobs.lock().unwrap().clone();
        Ok(BatchOutcome { batch_id: id, jobs })
    }

    fn batch(&self, id: BatchId) -> Result<Arc<Batch>, OrchestratorError> {
        self.batches.lock().unwrap().get(&id).cloned().ok_or(OrchestratorError::UnknownBatch(id))
    }
}

fn run_batch(
    batch: Arc<Batch>,
    executor: Arc<dyn Executor>,
    parallelism: usize,
    backend: Arc<dyn SlicerBackend>,
    on_complete: CompletionHook,
) {
    let tasks: Vec<Task> = (0..batch.total)
        .map(|index| {
            let batch = Arc::clone(&batch);
            let backend = Arc::clone(&backend);
            Box::new(move || run_job(&batch, index, backend.as_ref())) as Task
        })
        .collect();
    executor.run_all(tasks, parallelism);

    let outcome = BatchOutcome { batch_id: batch.id, jobs: batch.jobs.lock().unwrap().clone() };
    on_complete(&outcome);

    let mut state = batch.state.lock().unwrap();
    state.elapsed = Some(batch.started.elapsed());
    state.finished = true;
    batch.finished_cv.notify_all();
    log::debug!(
        "batch {} finished: {} done, {} failed",
        batch.id,
        batch.completed.load(Ordering::SeqCst),
        batch.failed.load(Ordering::SeqCst)
    );
}

fn run_job(batch: &Batch, index: usize, backend: &dyn SlicerBackend) {
    let request = {
        let mut jobs = batch.jobs.lock().unwrap();
        let job = &mut jobs[index];
        debug_assert_eq!(job.state, JobState::Pending, "job {} dispatched twice", job.job_id);
        job.state = JobState::Running;
        job.request.clone()
    };
    let mut attempts = 0;
    let outcome = loop {
        attempts += 1;
        match backend.slice(&request) {
            Ok(result) => break Ok(result),
            Err(e) if attempts >= MAX_ATTEMPTS => break Err(e.to_string()),
            Err(e) => log::warn!("batch {} job {index}: attempt {attempts} failed: {e}", batch.id),
        }
    };
    let mut jobs = batch.jobs.lock().unwrap();
    let job = &mut jobs[index];
    job.attempts = attempts;
    match outcome {
        Ok(result) => {
            job.state = JobState::Done;
            job.result = Some(result);
            batch.completed.fetch_add(1, Ordering::SeqCst);
        }
        Err(message) => {
            job.state = JobState::Failed;
            job.error = Some(message);
            batch.failed.fetch_add(1, Ordering::SeqCst);
        }
    }
}

/// Applies results to a grid.
///
/// Results are applied in cell order, keeping arrival order within a cell, so
/// the last sliced result for a cell wins. Interpolated results only fill
/// cells that are empty or already interpolated; they never replace a sliced one.
pub fn merge_results(grid: &SliceGrid, results: &[(CellIndex, SlicingResult)]) -> Result<SliceGrid, GridError> {
    for (cell, _) in results {
        grid.axes().check(*cell)?;
    }
    let mut ordered: Vec<&(CellIndex, SlicingResult)> = results.iter().collect();
    ordered.sort_by_key(|(cell, _)| *cell);
    let mut merged = grid.clone();
    for &(cell, result) in ordered {
        let keep_existing = !result.is_sliced() && merged.get(cell).is_some_and(SlicingResult::is_sliced);
        if !keep_existing {
            merged.set(cell, result)?;
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cube;
    use crate::grid::{build_axes, GridAxes};
    use crate::slicer::{ModelRef, PrintProfile, SliceError, SyntheticSlicer};
    use proptest::prelude::*;
    use std::sync::atomic::AtomicU32;

    fn jobs(n: usize) -> Vec<SliceJob> {
        let mesh = Arc::new(cube(10.0));
        let axes = GridAxes::default_grid();
        axes.cells()
            .take(n)
            .enumerate()
            .map(|(i, cell)| {
                let (lh, scale) = axes.point(cell);
                let request = SliceRequest {
                    model: ModelRef::Mesh(Arc::clone(&mesh)),
                    profile: PrintProfile::for_layer_height("p", "m", lh),
                    scale,
                };
                SliceJob::new(i as u64, "cube", cell, request)
            })
            .collect()
    }

    /// Fails the first `failures` calls for every scale below 0.5.
    struct Flaky {
        calls: AtomicU32,
        failures_per_job: u32,
        seen: Mutex<HashMap<u64, u32>>,
    }

    impl SlicerBackend for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn slice(&self, request: &SliceRequest) -> Result<SlicingResult, SliceError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if request.scale < 0.5 {
                let key = (request.scale.to_bits()) ^ request.profile.layer_height_mm.to_bits();
                let mut seen = self.seen.lock().unwrap();
                let n = seen.entry(key).or_insert(0);
                *n += 1;
                if *n <= self.failures_per_job {
                    return Err(SliceError::BackendFailure("engine crashed".into()));
                }
            }
            SyntheticSlicer::new().slice(request)
        }
    }

    #[test]
    fn parallelism_bounds() {
        let orch = Orchestrator::default();
        let backend: Arc<dyn SlicerBackend> = Arc::new(SyntheticSlicer::new());
        assert_eq!(
            orch.submit_batch(jobs(1), 0, Arc::clone(&backend)),
            Err(OrchestratorError::ParallelismOutOfRange(0))
        );
        assert_eq!(
            orch.submit_batch(jobs(1), 1001, Arc::clone(&backend)),
            Err(OrchestratorError::ParallelismOutOfRange(1001))
        );
        assert_eq!(orch.submit_batch(Vec::new(), 4, backend), Err(OrchestratorError::EmptyBatch));
    }

    #[test]
    fn single_job_batch() {
        let orch = Orchestrator::default();
        let id = orch.submit_batch(jobs(1), 1, Arc::new(SyntheticSlicer::new())).unwrap();
        let status = orch.wait(id, Duration::from_secs(10)).unwrap();
        assert!(status.finished);
        assert_eq!((status.total, status.completed, status.failed), (1, 1, 0));
        assert_eq!(status.eta_s, Some(0.0));
        let outcome = orch.outcome(id).unwrap();
        assert_eq!(outcome.jobs[0].state, JobState::Done);
        assert!(outcome.jobs[0].result.is_some());
    }

    #[test]
    fn fresh_batch_has_no_eta() {
        let orch = Orchestrator::default();
        let id = orch
            .submit_batch(jobs(2), 1, Arc::new(SyntheticSlicer::with_delay(Duration::from_millis(300))))
            .unwrap();
        let status = orch.status(id).unwrap();
        assert_eq!(status.completed, 0);
        assert_eq!(status.eta_s, None);
        assert!(!status.finished);
        orch.wait(id, Duration::from_secs(10)).unwrap();
    }

    #[test]
    fn unknown_batch() {
        let orch = Orchestrator::default();
        assert_eq!(orch.status(BatchId(99)), Err(OrchestratorError::UnknownBatch(BatchId(99))));
    }

    #[test]
    fn retry_once_then_fail() {
        let orch = Orchestrator::default();
        let flaky = Arc::new(Flaky { calls: AtomicU32::new(0), failures_per_job: 1, seen: Mutex::new(HashMap::new()) });
        let id = orch.submit_batch(jobs(32), 8, flaky.clone()).unwrap();
        let status = orch.wait(id, Duration::from_secs(10)).unwrap();
        assert_eq!(status.failed, 0, "one failure per job is absorbed by the retry");

        let hard = Arc::new(Flaky { calls: AtomicU32::new(0), failures_per_job: 5, seen: Mutex::new(HashMap::new()) });
        let id = orch.submit_batch(jobs(32), 8, hard.clone()).unwrap();
        let status = orch.wait(id, Duration::from_secs(10)).unwrap();
        let outcome = orch.outcome(id).unwrap();
        let failing = outcome.jobs.iter().filter(|j| j.request.scale < 0.5).count();
        assert!(failing > 0);
        assert_eq!(status.failed, failing);
        assert_eq!(status.completed + status.failed, 32);
        for job in outcome.failures() {
            assert_eq!(job.attempts, 2);
            assert!(job.error.is_some() && job.result.is_none());
        }
        assert_eq!(outcome.results().len(), 32 - failing);
    }

    #[test]
    fn every_job_runs_exactly_once() {
        let calls = Arc::new(Flaky { calls: AtomicU32::new(0), failures_per_job: 0, seen: Mutex::new(HashMap::new()) });
        let orch = Orchestrator::default();
        let id = orch.submit_batch(jobs(256), 17, calls.clone()).unwrap();
        orch.wait(id, Duration::from_secs(30)).unwrap();
        assert_eq!(calls.calls.load(Ordering::SeqCst), 256);
        assert!(orch.outcome(id).unwrap().jobs.iter().all(|j| j.attempts == 1 && j.state == JobState::Done));
    }

    #[test]
    fn completion_hook_runs_before_finished() {
        let orch = Orchestrator::default();
        let seen = Arc::new(Mutex::new(None));
        let sink = Arc::clone(&seen);
        let id = orch
            .submit_batch_then(
                jobs(10),
                4,
                Arc::new(SyntheticSlicer::new()),
                Box::new(move |outcome| *sink.lock().unwrap() = Some(outcome.results().len())),
            )
            .unwrap();
        let status = orch.wait(id, Duration::from_secs(10)).unwrap();
        assert!(status.finished);
        assert_eq!(*seen.lock().unwrap(), Some(10));
    }

    #[test]
    fn progress_is_monotone() {
        let orch = Orchestrator::default();
        let id = orch
            .submit_batch(jobs(40), 4, Arc::new(SyntheticSlicer::with_delay(Duration::from_millis(5))))
            .unwrap();
        let mut last = 0;
        loop {
            let s = orch.status(id).unwrap();
            assert!(s.completed + s.failed >= last);
            assert!(s.completed + s.failed <= s.total);
            assert!(s.eta_s.is_none_or(|e| e >= 0.0));
            last = s.completed + s.failed;
            if s.finished {
                break;
            }
            thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(last, 40);
    }

    #[test]
    fn eta_tracks_throughput() {
        // 4 serial jobs of 250 ms: after two have finished, eta ≈ elapsed
        let orch = Orchestrator::default();
        let id = orch
            .submit_batch(jobs(4), 1, Arc::new(SyntheticSlicer::with_delay(Duration::from_millis(250))))
            .unwrap();
        let status = loop {
            let s = orch.status(id).unwrap();
            if s.completed >= 2 {
                break s;
            }
            thread::sleep(Duration::from_millis(2));
        };
        if status.completed == 2 {
            let eta = status.eta_s.unwrap();
            assert!((eta - 0.5).abs() < 0.15, "eta {eta}");
        }
        orch.wait(id, Duration::from_secs(10)).unwrap();
    }

    #[test]
    fn wall_time_is_bounded_by_waves() {
        // 12 jobs of 100 ms with 4 workers: three waves
        let d = Duration::from_millis(100);
        let orch = Orchestrator::default();
        let start = Instant::now();
        let id = orch.submit_batch(jobs(12), 4, Arc::new(SyntheticSlicer::with_delay(d))).unwrap();
        orch.wait(id, Duration::from_secs(10)).unwrap();
        let wall = start.elapsed();
        assert!(wall >= 3 * d, "{wall:?}");
        assert!(wall < 4 * d, "{wall:?}");
    }

    fn sliced(t: f64) -> SlicingResult {
        SlicingResult::sliced(t, t / 2.0)
    }

    #[test]
    fn merge_precedence() {
        let mut grid = SliceGrid::new(build_axes(3, 3).unwrap());
        let c = CellIndex::new(1, 1);
        grid.set(c, sliced(10.0)).unwrap();
        let merged = merge_results(&grid, &[(c, SlicingResult::interpolated(99.0, 99.0, 5.0))]).unwrap();
        assert_eq!(merged, grid);

        let merged = merge_results(&grid, &[(c, sliced(11.0)), (c, sliced(12.0))]).unwrap();
        assert_eq!(merged.get(c), Some(&sliced(12.0)));

        let e = CellIndex::new(0, 2);
        let merged = merge_results(&grid, &[(e, SlicingResult::interpolated(5.0, 5.0, 1.0)), (e, sliced(6.0))]).unwrap();
        assert_eq!(merged.get(e), Some(&sliced(6.0)));
    }

    #[test]
    fn merge_rejects_out_of_range() {
        let grid = SliceGrid::new(build_axes(2, 2).unwrap());
        let err = merge_results(&grid, &[(CellIndex::new(0, 0), sliced(1.0)), (CellIndex::new(2, 0), sliced(1.0))]);
        assert!(matches!(err, Err(GridError::IndexOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn merge_is_idempotent_and_commutative(
            picks in prop::collection::btree_map((0usize..6, 0usize..6), (1.0f64..1e4, any::<bool>()), 0..36),
            seed in any::<u64>(),
        ) {
            let mut base = SliceGrid::new(build_axes(6, 6).unwrap());
            base.set(CellIndex::new(0, 0), sliced(1.0)).unwrap();
            let results: Vec<(CellIndex, SlicingResult)> = picks
                .into_iter()
                .map(|((r, s), (t, is_sliced))| {
                    let res = if is_sliced { sliced(t) } else { SlicingResult::interpolated(t, t, 3.0) };
                    (CellIndex::new(r, s), res)
                })
                .collect();
            let once = merge_results(&base, &results).unwrap();
            let twice = merge_results(&once, &results).unwrap();
            prop_assert_eq!(&once, &twice);

            let mut permuted = results.clone();
            let mut state = seed | 1;
            for i in (1..permuted.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                permuted.swap(i, (state % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(merge_results(&base, &permuted).unwrap(), once);
        }
    }
}
