use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slicehub::eval;
use slicehub::repository::http;
use slicehub::repository::{AddModel, SliceSelection};
use slicehub::slicer::{ExternalSlicer, SlicerBackend, SyntheticSlicer};
use slicehub::{Repository, RepositoryConfig};

/// Shared repository of slicing results.
#[derive(Parser, Debug)]
#[command(name = "slicehub", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serve the HTTP API
    Serve(ServeArgs),
    /// Add an STL file to the repository
    Add(AddArgs),
    /// Search models by name or tag
    Search(SearchArgs),
    /// Slice more cells of a stored model
    Slice(SliceArgs),
    /// Run one backfill round and wait for it
    Backfill(BackfillArgs),
    /// Accuracy experiments over a generated corpus
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args, Debug, Clone)]
struct StoreArgs {
    /// Repository directory
    #[arg(long, env = "SLICEHUB_STORE", default_value = "slicehub-store")]
    store: PathBuf,

    /// Levels per grid axis
    #[arg(long, default_value_t = 16)]
    grid_levels: usize,

    /// Fraction of a new model's grid that is sliced
    #[arg(long, default_value_t = 0.10)]
    slice_fraction: f64,

    /// Highest accepted parallelism
    #[arg(long, default_value_t = 1000)]
    parallelism_cap: usize,

    /// Slicing engine executable (CuraEngine compatible); synthetic estimates when absent
    #[arg(long, env = "SLICEHUB_ENGINE", requires = "engine_settings")]
    engine: Option<PathBuf>,

    /// Printer definition passed to the engine with `-j`
    #[arg(long, env = "SLICEHUB_ENGINE_SETTINGS")]
    engine_settings: Option<PathBuf>,
}

impl StoreArgs {
    fn open(&self) -> Result<Repository> {
        let mut config = RepositoryConfig::new(&self.store);
        config.grid_levels = self.grid_levels;
        config.slice_fraction = self.slice_fraction;
        config.parallelism_cap = self.parallelism_cap;
        config.default_parallelism = config.default_parallelism.min(self.parallelism_cap);
        let backend: Arc<dyn SlicerBackend> = match (&self.engine, &self.engine_settings) {
            (Some(engine), Some(settings)) => Arc::new(ExternalSlicer::new(engine, settings)),
            _ => Arc::new(SyntheticSlicer::new()),
        };
        Repository::with_backend(config, backend).with_context(|| format!("opening store {}", self.store.display()))
    }
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,

    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,

    #[arg(long, env = "SLICEHUB_PORT", default_value_t = 8080)]
    port: u16,

    /// Seconds between backfill rounds; 0 disables backfill
    #[arg(long, default_value_t = 0)]
    backfill_interval: u64,

    /// Slicing jobs per backfill round
    #[arg(long, default_value_t = 256)]
    backfill_capacity: usize,
}

#[derive(Args, Debug)]
struct AddArgs {
    #[command(flatten)]
    store: StoreArgs,

    stl: PathBuf,

    #[arg(long)]
    name: Option<String>,

    /// Comma-separated tags
    #[arg(long, value_delimiter = ',')]
    tags: Vec<String>,

    /// Slice locally without storing anything
    #[arg(long)]
    no_share: bool,

    #[arg(long)]
    printer: Option<String>,

    #[arg(long)]
    material: Option<String>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    store: StoreArgs,

    #[arg(default_value = "")]
    query: String,

    #[arg(long, default_value = "")]
    printer: String,

    #[arg(long, default_value = "")]
    material: String,
}

#[derive(Args, Debug)]
struct SliceArgs {
    #[command(flatten)]
    store: StoreArgs,

    model_id: String,

    #[arg(long, default_value_t = 1.0)]
    fraction: f64,

    #[arg(long)]
    parallelism: Option<usize>,

    #[arg(long, default_value = "")]
    printer: String,

    #[arg(long, default_value = "")]
    material: String,
}

#[derive(Args, Debug)]
struct BackfillArgs {
    #[command(flatten)]
    store: StoreArgs,

    #[arg(long, default_value_t = 256)]
    capacity: usize,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Closest-match error against random constraints per grid size
    Constraints {
        #[arg(long, default_value_t = 20)]
        models: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,3,5,9,17,31")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        constraints: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interpolation error per sliced sub-lattice of a 16x16 grid
    Interp {
        #[arg(long, default_value_t = 20)]
        models: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,3,5,9,16")]
        sublattices: Vec<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve(args) => serve(args),
        Command::Add(args) => add(args),
        Command::Search(args) => search(args),
        Command::Slice(args) => slice(args),
        Command::Backfill(args) => backfill(args),
        Command::Eval(cmd) => run_eval(cmd),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let repo = args.store.open()?;
    let _worker = (args.backfill_interval > 0)
        .then(|| repo.spawn_backfill_worker(Duration::from_secs(args.backfill_interval), args.backfill_capacity));
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(http::serve(repo, addr)).with_context(|| format!("serving on {addr}"))
}

fn add(args: AddArgs) -> Result<()> {
    let repo = args.store.open()?;
    let stl = fs::read(&args.stl).with_context(|| format!("reading {}", args.stl.display()))?;
    let name = args.name.unwrap_or_else(|| {
        args.stl.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let outcome = repo.add_model(AddModel {
        stl,
        name,
        tags: args.tags,
        share: !args.no_share,
        printer_id: args.printer,
        material_id: args.material,
    })?;
    if let Some(doc) = outcome.document {
        println!("{}", String::from_utf8(doc.to_json())?);
        return Ok(());
    }
    if let Some(batch) = outcome.batch_id {
        let status = repo.orchestrator().wait(batch, Duration::MAX)?;
        log::info!("sliced {} cells ({} failed)", status.completed, status.failed);
    }
    let verb = if outcome.created { "added" } else { "already present" };
    println!("{} {verb}", outcome.model_id);
    Ok(())
}

fn search(args: SearchArgs) -> Result<()> {
    let repo = args.store.open()?;
    for hit in repo.search(&args.query, &args.printer, &args.material)? {
        let preview = hit
            .preview
            .map(|p| format!("{:.0} s, {:.0} mm3", p.print_time_s, p.material_mm3))
            .unwrap_or_else(|| "no data".into());
        println!("{}\t{}\t{} downloads\t{preview}", hit.entry.model_id, hit.entry.name, hit.entry.download_count);
    }
    Ok(())
}

fn slice(args: SliceArgs) -> Result<()> {
    let repo = args.store.open()?;
    let batch = repo.start_slice(
        &args.model_id,
        &args.printer,
        &args.material,
        &SliceSelection::Fraction(args.fraction),
        args.parallelism,
        true,
    )?;
    let status = repo.orchestrator().wait(batch, Duration::MAX)?;
    println!("batch {batch}: {} sliced, {} failed", status.completed, status.failed);
    Ok(())
}

fn backfill(args: BackfillArgs) -> Result<()> {
    let repo = args.store.open()?;
    let batches = repo.backfill_tick(args.capacity)?;
    if batches.is_empty() {
        println!("nothing to backfill");
    }
    for batch in batches {
        let status = repo.orchestrator().wait(batch, Duration::MAX)?;
        println!("batch {batch}: {} sliced, {} failed", status.completed, status.failed);
    }
    Ok(())
}

fn run_eval(cmd: EvalCommand) -> Result<()> {
    let (reports, out) = match cmd {
        EvalCommand::Constraints { models, sizes, constraints, seed, out } => {
            if models == 0 || sizes.iter().any(|&n| n < 2) {
                bail!("need at least one model and grid sizes of 2 or more");
            }
            let corpus = eval::generate_corpus(models, seed);
            (eval::constraint_error_experiment(&corpus, &sizes, constraints, seed), out)
        }
        EvalCommand::Interp { models, sublattices, seed, out } => {
            if models == 0 || sublattices.iter().any(|&k| !(2..=16).contains(&k)) {
                bail!("need at least one model and sub-lattice sizes between 2 and 16");
            }
            let corpus = eval::generate_corpus(models, seed);
            (eval::interpolation_error_experiment(&corpus, &sublattices, seed), out)
        }
    };
    match out {
        Some(path) => {
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            eval::write_csv(&reports, file)?;
            log::info!("wrote {}", path.display());
        }
        None => eval::write_csv(&reports, std::io::stdout())?,
    }
    Ok(())
}
