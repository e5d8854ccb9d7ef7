//! `tessgp`: fit, predict, design and benchmark from the command line.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tessgp::adaptive::{boundary_candidates, epsilon_pairs, greedy_maximin_select, smallest_region};
use tessgp::io::{read_points_csv, read_training_csv, write_points_csv, Bounds, RawData, RunMetadata};
use tessgp::predict::{grid_points, integrated_surface_from, parse_grid_spec, GridAnchor, SampleModels};
use tessgp::rjmcmc::{map_model, run_chain, Chain, McmcConfig};
use tessgp::rng::{stream_rng, Stream};
use tessgp::sobol::sobol_points;
use tessgp::testbed::{run_adaptive_benchmark, run_benchmark, select_points, AdaptiveConfig, BenchmarkConfig, Sampler, Scenario};
use tessgp::{Error, PriorConfig, TrainingSet};

const METADATA_FILE: &str = "metadata.json";
const CHAIN_FILE: &str = "chain.jsonl";

#[derive(Parser)]
#[command(name = "tessgp", version, about = "Piecewise GP emulation over Voronoi tessellations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler on a training CSV and store the chain.
    Fit(FitArgs),
    /// Integrated predictive mean on a grid or at given points.
    Predict(PredictArgs),
    /// Propose new design points.
    Design(DesignArgs),
    /// Run a built-in benchmark scenario.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV with header `x1,..,xd,y`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for `chain.jsonl` and `metadata.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fraction of iterations discarded before storing.
    #[arg(long, default_value_t = 0.25)]
    burn_in: f64,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Pin the nugget to zero (deterministic simulator).
    #[arg(long)]
    deterministic: bool,
    /// Pilot iterations for tuning the move step; 0 disables tuning.
    #[arg(long, default_value_t = 0)]
    pilot: usize,
}

#[derive(Args)]
struct PredictArgs {
    /// `chain.jsonl` written by `fit`; `metadata.json` is read from the same directory.
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Grid points per axis, e.g. `100x100` or `20` for every axis.
    #[arg(long, conflicts_with = "points")]
    grid: Option<String>,
    /// CSV of query points in original coordinates.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Place grid points at cell centres instead of including the corners.
    #[arg(long)]
    cell_centres: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Boundary,
    BoundaryEps,
    Sobol,
    Maxvar,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    chain: PathBuf,
    /// Training CSV the chain was fitted on (not needed for `sobol`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 5)]
    n_points: usize,
    /// Boundary candidate set (or max-variance pool) size. Defaults to 2000
    /// in up to two dimensions and 50000 above.
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Target region of the MAP model; the one holding the fewest data by default.
    #[arg(long)]
    region: Option<usize>,
    /// Root seed; the fit seed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// `diamond`, `curved` or `regime6`.
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20_000)]
    iterations: usize,
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    /// Design size; the scenario default when omitted.
    #[arg(long)]
    design_size: Option<usize>,
    /// Grid points per axis for the MSE evaluation (2-d scenarios).
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 0.25)]
    burn_in: f64,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Also augment the design with each sampler and rerun.
    #[arg(long)]
    adaptive: bool,
    /// Points added per sampler in the adaptive run.
    #[arg(long, default_value_t = 5)]
    n_points: usize,
    #[arg(long, default_value_t = 2000)]
    candidates: usize,
    /// Exit nonzero when any report check fails.
    #[arg(long)]
    strict: bool,
    /// Forbid multi-region tessellations (guard testing).
    #[arg(long, hide = true)]
    pin_single_region: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Core(Error),
    Usage(String),
    Checks(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e {
                Error::MalformedCsv { .. } | Error::Csv(_) | Error::Io(_) | Error::Json(_) | Error::InvalidArgument(_) => 2,
                Error::DimensionMismatch { .. } => 2,
                Error::InsufficientData { .. } => 3,
                Error::OutOfDomain { .. } => 4,
                Error::NoBoundary => 5,
                _ => 1,
            },
            Failure::Usage(_) => 2,
            Failure::Checks(_) => 6,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Usage(m) => m.clone(),
            Failure::Checks(names) => format!("failed checks: {}", names.join("; ")),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Usage(format!("cannot open {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_data(path: &Path) -> CliResult<RawData> {
    read_training_csv(open(path)?).map_err(|e| match e {
        Error::MalformedCsv { row, column, message } => Failure::Usage(format!(
            "{}: malformed CSV at row {row}, column {column:?}: {message}",
            path.display()
        )),
        other => other.into(),
    })
}

fn metadata_path(chain: &Path) -> PathBuf {
    chain.with_file_name(METADATA_FILE)
}

struct Artifacts {
    meta: RunMetadata,
    chain: Chain,
}

fn load_artifacts(chain_path: &Path) -> CliResult<Artifacts> {
    let meta: RunMetadata = serde_json::from_reader(open(&metadata_path(chain_path))?)?;
    let samples = Chain::read_jsonl(open(chain_path)?)?;
    let chain = Chain::from_samples(samples)?;
    if chain.map_sample().tessellation.dim() != meta.bounds.dim() {
        return Err(Failure::Usage("chain and metadata disagree on dimension".into()));
    }
    Ok(Artifacts { meta, chain })
}

fn training_set(path: &Path, meta: &RunMetadata) -> CliResult<TrainingSet> {
    let raw = load_data(path)?;
    if raw.dim() != meta.bounds.dim() || raw.inputs.len() != meta.n_points {
        return Err(Failure::Usage(format!(
            "{} does not match the data the chain was fitted on ({} points in {} dimensions)",
            path.display(),
            meta.n_points,
            meta.bounds.dim()
        )));
    }
    Ok(raw.to_training_set(&meta.bounds)?)
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    let raw = load_data(&args.data)?;
    if raw.inputs.len() < 4 {
        return Err(Error::InsufficientData { n: raw.inputs.len(), required: 4 }.into());
    }
    if !(0.0..1.0).contains(&args.burn_in) || args.thin == 0 {
        return Err(Failure::Usage("--burn-in must lie in [0, 1) and --thin be positive".into()));
    }
    let bounds = Bounds::from_points(&raw.inputs)?;
    let data = raw.to_training_set(&bounds)?;
    let mut config = McmcConfig::new(raw.dim(), args.iterations, args.seed);
    config.prior = PriorConfig::new(args.lambda)?;
    config.deterministic = args.deterministic;
    config.burn_in_fraction = args.burn_in;
    config.thin = args.thin;
    config.pilot_iterations = args.pilot;
    let chain = run_chain(&data, &config)?;

    fs::create_dir_all(&args.out)?;
    let mut w = BufWriter::new(File::create(args.out.join(CHAIN_FILE))?);
    chain.write_jsonl(&mut w)?;
    w.flush()?;
    let meta = RunMetadata {
        input_names: raw.input_names,
        bounds,
        n_points: data.len(),
        seed: args.seed,
        config,
        tallies: chain.tallies.clone(),
    };
    let mut w = BufWriter::new(File::create(args.out.join(METADATA_FILE))?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n")?;
    w.flush()?;
    eprintln!(
        "stored {} samples; MAP has {} regions",
        chain.len(),
        chain.map_sample().tessellation.r()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let art = load_artifacts(&args.chain)?;
    let data = training_set(&args.data, &art.meta)?;
    let bounds = &art.meta.bounds;
    let d = bounds.dim();
    let points = match (&args.grid, &args.points) {
        (_, Some(path)) => read_points_csv(open(path)?, d)?
            .iter()
            .enumerate()
            .map(|(i, x)| bounds.scale_checked(x, i))
            .collect::<tessgp::Result<Vec<_>>>()?,
        (Some(spec), None) => {
            let anchor = if args.cell_centres { GridAnchor::CellCentre } else { GridAnchor::Corner };
            grid_points(&parse_grid_spec(spec, d)?, anchor)?
        }
        (None, None) => return Err(Failure::Usage("one of --grid or --points is required".into())),
    };
    let models = SampleModels::build(&art.chain.samples, &data)?;
    let grid = integrated_surface_from(&models, &points)?;
    let mut w = output(args.out.as_deref())?;
    grid.write_csv_named(&mut w, &art.meta.input_names, |u| bounds.unscale(u))?;
    w.flush()?;
    Ok(())
}

fn cmd_design(args: DesignArgs) -> CliResult<()> {
    if args.n_points == 0 {
        return Err(Failure::Usage("--n-points must be positive".into()));
    }
    let art = load_artifacts(&args.chain)?;
    let meta = &art.meta;
    let d = meta.bounds.dim();
    let seed = args.seed.unwrap_or(meta.seed);
    let n_star = args.candidates.unwrap_or(if d <= 2 { 2000 } else { 50_000 });
    let mut rng = stream_rng(seed, Stream::Sampler);
    let need_data = || -> CliResult<TrainingSet> {
        let path = args
            .data
            .as_deref()
            .ok_or_else(|| Failure::Usage("--data is required for this sampler".into()))?;
        training_set(path, meta)
    };
    let unit: Vec<Vec<f64>> = match args.sampler {
        SamplerArg::Sobol => sobol_points(args.n_points, d)?,
        SamplerArg::Maxvar => {
            let config = AdaptiveConfig {
                n_p: args.n_points,
                n_star,
            };
            select_points(Sampler::MaxVariance, &art.chain, &need_data()?, &meta.config, &config, &mut rng)?
        }
        SamplerArg::Boundary | SamplerArg::BoundaryEps => {
            let data = need_data()?;
            let map = map_model(&art.chain, &data, &meta.config)?;
            if map.tess.r() < 2 {
                return Err(Error::NoBoundary.into());
            }
            let target = match args.region {
                Some(r) if r < map.tess.r() => r,
                Some(r) => return Err(Failure::Usage(format!("MAP model has no region {r}"))),
                None => smallest_region(&map.counts()).ok_or(Error::NoBoundary)?,
            };
            let set = boundary_candidates(&map.tess, target, n_star, &mut rng)?;
            if set.is_partial() {
                eprintln!("warning: only {} of {} boundary candidates found", set.points.len(), n_star);
            }
            let existing: Vec<Vec<f64>> = data.points().map(<[f64]>::to_vec).collect();
            let chosen: Vec<Vec<f64>> = greedy_maximin_select(&set.points, &existing, args.n_points)?
                .into_iter()
                .map(|i| set.points[i].clone())
                .collect();
            if matches!(args.sampler, SamplerArg::BoundaryEps) {
                let pairs = epsilon_pairs(&chosen, &map.tess, target, args.epsilon)?;
                if pairs.len() < chosen.len() {
                    eprintln!("warning: skipped {} degenerate pairs", chosen.len() - pairs.len());
                }
                pairs.into_iter().flat_map(|p| [p.inner, p.outer]).collect()
            } else {
                chosen
            }
        }
    };
    let points: Vec<Vec<f64>> = unit.iter().map(|u| meta.bounds.unscale(u)).collect();
    let mut w = output(args.out.as_deref())?;
    write_points_csv(&mut w, &meta.input_names, &points)?;
    w.flush()?;
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> CliResult<()> {
    let scenario = Scenario::parse(&args.scenario).map_err(|e| Failure::Usage(e.to_string()))?;
    let config = BenchmarkConfig {
        seed: args.seed,
        n_iterations: args.iterations,
        lambda: args.lambda,
        n_points: args.design_size,
        grid_per_axis: args.grid,
        burn_in_fraction: args.burn_in,
        thin: args.thin,
        pin_single_region: args.pin_single_region,
        ..BenchmarkConfig::default()
    };
    let run = run_benchmark(scenario, &config)?;
    let mut failed: Vec<String> = run.report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let mut value = serde_json::to_value(&run.report)?;
    if args.adaptive {
        let adaptive = run_adaptive_benchmark(
            &run,
            &AdaptiveConfig {
                n_p: args.n_points,
                n_star: args.candidates,
            },
        )?;
        failed.extend(adaptive.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()));
        value["adaptive"] = serde_json::to_value(&adaptive)?;
    }
    let mut w = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    if args.strict && !failed.is_empty() {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Design(a) => cmd_design(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
