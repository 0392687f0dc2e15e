//! Command-line front end: simulate, run, eval and the full bench matrix.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{evaluate, write_pairs_csv, EvalReport, Metric, RmseMode, ScenarioResult};
use crate::fusion::FusionConfig;
use crate::pipeline::{run_pipeline, Algorithm, PipelineConfig, PipelineOutput};
use crate::record::{load_record, read_estimate_csv, save_record, write_estimate_csv};
use crate::sim::{simulate, Scenario, ScenarioRecord, SimConfig, World};

pub const OUT_DIR_ENV: &str = "LIDAR2D_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "lidar2d", version, about = "2D lidar SLAM benchmark on simulated scenario records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated scenario record (JSON lines).
    Simulate(SimulateArgs),
    /// Run one SLAM front end over a record and write its estimate and map.
    Run(RunArgs),
    /// Score an estimate CSV against a record's ground truth.
    Eval(EvalArgs),
    /// Simulate, run and score every scenario with every algorithm.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Built-in world (lab, tunnel) or a world JSON file.
    #[arg(long, default_value = "lab")]
    pub world: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Lidar range noise standard deviation in meters.
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// rect_nominal, rect_fast, fig8_nominal or fig8_fast.
    #[arg(long)]
    pub scenario: String,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario name (simulated on the fly) or a record file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum)]
    pub algo: AlgoArg,
    /// Fuse altitude and attitude into a 3D estimate.
    #[arg(long)]
    pub fusion: bool,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scenario name (simulated on the fly) or a record file.
    #[arg(long)]
    pub scenario: String,
    /// Estimate CSV produced by `run`.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Approach label in the report; defaults to the estimate file stem.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::ErrorNorm)]
    pub mode: ModeArg,
    /// Defaults to spatial when the estimate carries z, else planar.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub fusion: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::ErrorNorm)]
    pub mode: ModeArg,
    /// Defaults to spatial with fusion, else planar.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Hector,
    Rbpf,
    Submap,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Hector => Algorithm::Hector,
            AlgoArg::Rbpf => Algorithm::Rbpf,
            AlgoArg::Submap => Algorithm::Submap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ErrorNorm,
    LiteralDiff,
}

impl From<ModeArg> for RmseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ErrorNorm => RmseMode::ErrorNorm,
            ModeArg::LiteralDiff => RmseMode::LiteralDiff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Planar,
    Spatial,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Planar => Metric::Planar,
            MetricArg::Spatial => Metric::Spatial,
        }
    }
}

/// Process exit code for an error: 2 configuration, 3 data, 4 evaluation.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => 2,
        Error::Data { .. } | Error::Io { .. } | Error::Disconnected(_) => 3,
        Error::Alignment(_) | Error::Evaluation(_) => 4,
    }
}

fn load_world(arg: &str) -> Result<World> {
    if let Some(w) = World::builtin(arg) {
        return Ok(w);
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(Error::Config(format!("world {arg:?} is neither lab, tunnel nor an existing file")));
    }
    World::load(path)
}

/// A scenario name is simulated; anything else must be a record file.
fn load_scenario(arg: &str, source: &SourceArgs) -> Result<(String, ScenarioRecord)> {
    if let Some(sc) = Scenario::parse(arg) {
        let world = load_world(&source.world)?;
        return Ok((sc.name().to_string(), simulate(&SimConfig::for_scenario(sc, world, source.seed, source.sigma))?));
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "scenario {arg:?} is neither a built-in scenario nor an existing record file"
        )));
    }
    let stem = path.file_stem().map_or_else(|| "custom".to_string(), |s| s.to_string_lossy().into_owned());
    Ok((stem, load_record(path)?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_run_outputs(dir: &Path, stem: &str, out: &PipelineOutput, spatial: bool) -> Result<PathBuf> {
    let csv = dir.join(format!("{stem}.csv"));
    write_estimate_csv(&csv, &out.estimate, spatial)?;
    out.map.export_pgm(&dir.join(format!("{stem}.pgm")))?;
    if let Some(graph) = &out.graph_json {
        write_text(&dir.join(format!("{stem}_graph.json")), graph)?;
    }
    Ok(csv)
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    write_text(&dir.join(format!("{stem}.json")), &report.to_json())?;
    write_text(&dir.join(format!("{stem}.txt")), &report.to_table())
}

fn pipeline_config(algo: Algorithm, seed: u64, fusion: bool) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(algo, seed);
    cfg.fusion = fusion.then(FusionConfig::default);
    cfg
}

fn cmd_simulate(args: &SimulateArgs, log: &mut dyn Write) -> Result<()> {
    let sc = Scenario::parse(&args.scenario)
        .ok_or_else(|| Error::Config(format!("unknown scenario {:?}", args.scenario)))?;
    let world = load_world(&args.source.world)?;
    let rec = simulate(&SimConfig::for_scenario(sc, world, args.source.seed, args.source.sigma))?;
    ensure_dir(&args.out.out)?;
    let path = args.out.out.join(format!("{}.jsonl", sc.name()));
    save_record(&path, &rec)?;
    let _ = writeln!(log, "{} scans, {} truth samples -> {}", rec.scans.len(), rec.ground_truth.len(), path.display());
    Ok(())
}

fn cmd_run(args: &RunArgs, log: &mut dyn Write) -> Result<()> {
    let (name, rec) = load_scenario(&args.scenario, &args.source)?;
    let algo = Algorithm::from(args.algo);
    let out = run_pipeline(&rec, &pipeline_config(algo, args.source.seed, args.fusion))?;
    ensure_dir(&args.out.out)?;
    let csv = write_run_outputs(&args.out.out, &format!("{name}_{algo}"), &out, args.fusion)?;
    let _ = writeln!(
        log,
        "{algo} on {name}: {} poses ({} scans dropped by tilt gate) -> {}",
        out.estimate.len(),
        out.gate.dropped,
        csv.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs, log: &mut dyn Write) -> Result<()> {
    let (name, rec) = load_scenario(&args.scenario, &args.source)?;
    let (est, spatial) = read_estimate_csv(&args.estimate)?;
    let metric = args.metric.map(Metric::from).unwrap_or(if spatial { Metric::Spatial } else { Metric::Planar });
    let label = args.label.clone().unwrap_or_else(|| {
        args.estimate.file_stem().map_or_else(|| "estimate".into(), |s| s.to_string_lossy().into_owned())
    });
    let mode = RmseMode::from(args.mode);
    let (result, pairs) = evaluate(&name, &label, &rec.ground_truth, &est, mode, metric)?;
    let report = EvalReport::new(mode, metric, vec![result])?;
    ensure_dir(&args.out.out)?;
    write_pairs_csv(&args.out.out.join("pairs.csv"), &pairs, metric)?;
    write_report(&args.out.out, "report", &report)?;
    let _ = write!(log, "{}", report.to_table());
    Ok(())
}

fn bench_cell(
    dir: &Path,
    name: &str,
    rec: &ScenarioRecord,
    algo: Algorithm,
    args: &BenchArgs,
    mode: RmseMode,
    metric: Metric,
) -> Result<ScenarioResult> {
    let out = run_pipeline(rec, &pipeline_config(algo, args.source.seed, args.fusion))?;
    let stem = format!("{name}_{algo}");
    write_run_outputs(dir, &stem, &out, args.fusion)?;
    let (result, pairs) = evaluate(name, algo.name(), &rec.ground_truth, &out.estimate, mode, metric)?;
    write_pairs_csv(&dir.join(format!("{stem}_pairs.csv")), &pairs, metric)?;
    Ok(result)
}

fn cmd_bench(args: &BenchArgs, log: &mut dyn Write) -> Result<()> {
    let world = load_world(&args.source.world)?;
    let dir = &args.out.out;
    ensure_dir(&dir.join("records"))?;
    let mode = RmseMode::from(args.mode);
    let metric = args.metric.map(Metric::from).unwrap_or(if args.fusion { Metric::Spatial } else { Metric::Planar });
    let records: Vec<(Scenario, ScenarioRecord)> = Scenario::ALL
        .par_iter()
        .map(|&sc| {
            let rec = simulate(&SimConfig::for_scenario(sc, world.clone(), args.source.seed, args.source.sigma))?;
            save_record(&dir.join("records").join(format!("{}.jsonl", sc.name())), &rec)?;
            Ok((sc, rec))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, Algorithm)> =
        Algorithm::ALL.iter().flat_map(|&a| (0..records.len()).map(move |i| (i, a))).collect();
    let results: Vec<ScenarioResult> = jobs
        .par_iter()
        .map(|&(i, algo)| {
            let (sc, rec) = &records[i];
            bench_cell(dir, sc.name(), rec, algo, args, mode, metric)
        })
        .collect::<Result<_>>()?;
    let report = EvalReport::new(mode, metric, results)?;
    write_report(dir, "report", &report)?;
    let _ = write!(log, "{}", report.to_table());
    Ok(())
}

/// Parse `args` (including the program name) and run the command, writing
/// progress lines to `log`.
pub fn run<I, T>(args: I, log: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(&cli, log)
}

pub fn execute(cli: &Cli, log: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, log),
        Command::Run(a) => cmd_run(a, log),
        Command::Eval(a) => cmd_eval(a, log),
        Command::Bench(a) => cmd_bench(a, log),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::data("f", 3, "bad")), 3);
        assert_eq!(exit_code(&Error::Alignment("x".into())), 4);
    }

    #[test]
    fn unknown_world_is_a_config_error() {
        let err = load_world("/nonexistent/world.json").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("/nonexistent/world.json")));
    }
}
