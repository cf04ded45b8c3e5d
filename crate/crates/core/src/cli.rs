//! Command-line front end. Exit codes: 0 success, 1 usage or input error,
//! 2 numeric failure (divergence).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{
    gen_dataset, read_points_csv, read_result_json, write_points_csv, write_result_json,
    write_samples_csv, RunArtifact, XMap,
};
use crate::losses::{ContinuityMode, ObjectiveWeights, Wrap};
use crate::pareto::{default_grid, pareto_front, run_point, sweep_runs, table1_grid, SweepRecord};
use crate::trainer::{FitConfig, InitStrategy, OptimizerHyper, OptimizerVariant, Placement};

#[derive(Debug, Parser)]
#[command(
    name = "ppfit",
    version,
    about = "Energy-regularized piecewise polynomial fitting"
)]
struct Cli {
    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the noisy sin(4πx²) benchmark as an x,y CSV.
    GenData(GenDataArgs),
    /// Fit one model, project it onto C^k and write the JSON result.
    Fit(FitArgs),
    /// Fit every (alpha, beta) of a grid; one JSON result per grid point.
    Sweep(SweepArgs),
    /// Pareto front of the results in a sweep directory.
    Front(FrontArgs),
    /// Dense x,f,f1,f2 samples of a fitted model.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 7)]
    degree: usize,
    #[arg(long, default_value_t = 16)]
    segments: usize,
    /// Continuity order.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// open | cyclic | periodic
    #[arg(long, default_value = "periodic")]
    mode: Wrap,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// amsgrad | adam | sgd
    #[arg(long, default_value = "amsgrad")]
    optimizer: OptimizerVariant,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-7)]
    epsilon: f64,
    /// per_segment_lsq | zeros
    #[arg(long, default_value = "per_segment_lsq")]
    init: InitStrategy,
    /// uniform | quantile
    #[arg(long, default_value = "uniform")]
    breakpoints: Placement,
    /// Fit in the data's own x units instead of mapping them onto [0, 1].
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, weights: ObjectiveWeights) -> FitConfig {
        FitConfig {
            degree: self.degree,
            segments: self.segments,
            mode: ContinuityMode::new(self.mode, self.k),
            weights,
            epochs: self.epochs,
            patience: self.patience,
            hyper: OptimizerHyper {
                learning_rate: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
                variant: self.optimizer,
            },
            init: self.init,
            placement: self.breakpoints,
            seed: self.seed,
        }
    }

    fn prepare(&self, data_path: &Path) -> Result<(crate::pp_model::Dataset, XMap)> {
        let raw = read_points_csv(data_path)?;
        let x_map = if self.no_normalize {
            XMap::IDENTITY
        } else {
            XMap::unit_interval(&raw)
        };
        Ok((x_map.apply(&raw), x_map))
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write dense samples of the projected model here.
    #[arg(long)]
    plot_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    samples_per_segment: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// table1 | default | path to an alpha,beta CSV
    #[arg(long, default_value = "table1")]
    grid: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Run grid points one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct FrontArgs {
    #[arg(long)]
    in_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotDataArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 50)]
    samples_per_segment: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let out = Console { quiet: cli.quiet };
    let outcome = match cli.command {
        Command::GenData(args) => gen_data(&args, out),
        Command::Fit(args) => fit_cmd(&args, out),
        Command::Sweep(args) => sweep_cmd(&args, out),
        Command::Front(args) => front_cmd(&args, out),
        Command::PlotData(args) => plot_data(&args, out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Console {
    quiet: bool,
}

impl Console {
    fn say(self, line: std::fmt::Arguments) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}

fn gen_data(args: &GenDataArgs, out: Console) -> Result<i32> {
    let data = gen_dataset(args.n, args.seed, args.sigma)?;
    write_points_csv(&args.out, &data)?;
    out.say(format_args!(
        "wrote {} points to {}",
        data.len(),
        args.out.display()
    ));
    Ok(0)
}

fn fit_cmd(args: &FitArgs, out: Console) -> Result<i32> {
    let weights = ObjectiveWeights::new(args.alpha, args.beta)?;
    let config = args.model.config(weights);
    config.validate_for_projection()?;
    let (data, x_map) = args.model.prepare(&args.data)?;
    let outcome = run_point(&data, &config)?;

    let samples = match &args.plot_out {
        Some(path) => {
            let rows = outcome.projected.dense_sample(args.samples_per_segment)?;
            write_samples_csv(path, &x_map.samples_to_data(&rows))?;
            Some(path.display().to_string())
        }
        None => None,
    };
    let artifact = RunArtifact::from_outcome(&outcome, x_map, samples);
    write_result_json(&args.out, &artifact)?;
    let l = artifact.losses;
    out.say(format_args!(
        "alpha={} beta={} epochs={} l2={:.6e} le={:.6e} lck={:.3e} -> {}",
        args.alpha,
        args.beta,
        artifact.training.epochs_run,
        l.l2,
        l.le,
        l.lck,
        args.out.display()
    ));
    Ok(0)
}

fn read_grid(choice: &str) -> Result<Vec<ObjectiveWeights>> {
    match choice {
        "table1" => return Ok(table1_grid()),
        "default" => return Ok(default_grid()),
        _ => {}
    }
    let path = Path::new(choice);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::invalid(format!("grid {choice:?}: {e}")))?;
    let mut grid = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::invalid(format!("grid {choice:?}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: "expected alpha,beta".into(),
                })
        };
        grid.push(ObjectiveWeights::new(field(0)?, field(1)?)?);
    }
    if grid.is_empty() {
        return Err(Error::invalid(format!(
            "grid file {choice:?} holds no weights"
        )));
    }
    Ok(grid)
}

fn run_file_name(index: usize, w: &ObjectiveWeights) -> String {
    format!("run_{index:03}_a{}_b{}.json", w.alpha(), w.beta())
}

fn sweep_cmd(args: &SweepArgs, out: Console) -> Result<i32> {
    let grid = read_grid(&args.grid)?;
    let base = args.model.config(grid[0]);
    base.validate_for_projection()?;
    let (data, x_map) = args.model.prepare(&args.data)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;

    let results = sweep_runs(&data, &base, &grid, !args.sequential);
    let mut failures = 0;
    for (i, (res, w)) in results.iter().zip(&grid).enumerate() {
        match res {
            Ok(outcome) => {
                let name = run_file_name(i, w);
                let artifact = RunArtifact::from_outcome(outcome, x_map, None);
                write_result_json(&args.out_dir.join(&name), &artifact)?;
                out.say(format_args!(
                    "{name}: l2={:.6e} le={:.6e} lck={:.3e}",
                    outcome.losses.l2, outcome.losses.le, outcome.losses.lck
                ));
            }
            Err(e) => {
                failures += 1;
                eprintln!(
                    "grid point alpha={} beta={} failed: {e}",
                    w.alpha(),
                    w.beta()
                );
            }
        }
    }
    Ok(if failures > 0 { 2 } else { 0 })
}

#[derive(Serialize)]
struct FrontFile {
    records: Vec<SweepRecord>,
    front: Vec<SweepRecord>,
}

/// Records of every result file in `dir`, in file-name order.
pub fn collect_records(dir: &Path) -> Result<Vec<SweepRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let artifact = read_result_json(p)?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned());
            Ok(artifact.record(name))
        })
        .collect()
}

fn front_cmd(args: &FrontArgs, out: Console) -> Result<i32> {
    let records = collect_records(&args.in_dir)?;
    let front = pareto_front(&records);
    for r in &front {
        out.say(format_args!(
            "alpha={} beta={} l2={:.6e} le={:.6e} {}",
            r.alpha,
            r.beta,
            r.l2,
            r.le,
            r.model_ref.as_deref().unwrap_or("")
        ));
    }
    let file = FrontFile { records, front };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(&args.out, text + "\n").map_err(|source| Error::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    Ok(0)
}

fn plot_data(args: &PlotDataArgs, out: Console) -> Result<i32> {
    let artifact = read_result_json(&args.model)?;
    let model = artifact.model()?;
    let rows = model.dense_sample(args.samples_per_segment)?;
    write_samples_csv(&args.out, &artifact.x_map.samples_to_data(&rows))?;
    out.say(format_args!(
        "wrote {} rows to {}",
        rows.len(),
        args.out.display()
    ));
    Ok(0)
}
