use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use imop::config::{load_instance, parse_toml, to_toml, InstanceFile, RoundState, SpecFile};
use imop::datagen::{self, PortfolioData};
use imop::export::{default_big_m, export_single_level};
use imop::loss::write_histogram_csv;
use imop::model::{MopInstance, Observation};
use imop::online::{
    chi_square_statistic, learning_rate, run_online, truncated_normal_masses, uniform_masses, write_rounds_csv,
    Algorithm, GridMode, InitialTheta, RunConfig, RunOutput, RunSummary,
};

#[derive(Parser)]
#[command(name = "imop", version, about = "Online inverse multiobjective optimization experiments")]
struct Cli {
    /// Worker threads for the per-weight solves (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the linear objective terms of the two-variable MQP.
    RunMqpC(RunArgs),
    /// Learn the right-hand side of the two-variable MQP.
    RunMqpB(RunArgs),
    /// Learn the expected returns of securities 1-5 of the portfolio model.
    RunPortfolio(RunArgs),
    /// Run the online loop over observation and instance files.
    Replay(ReplayArgs),
    /// Write the single-level big-M model of a saved round.
    ExportMilp(ExportArgs),
    /// Write an observation stream with its instance and parameter files.
    GenStream(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Full,
    Accelerated,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Even,
    Interior,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Reference {
    None,
    Uniform,
    Truncnormal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    MqpC,
    MqpB,
    Portfolio,
}

#[derive(Args, Clone)]
struct LearnArgs {
    /// Number of sampled weights.
    #[arg(long = "K", alias = "k", default_value_t = 41)]
    k: usize,
    /// Learning-rate numerator: η_t = eta0 / √t.
    #[arg(long, default_value_t = 5.0)]
    eta0: f64,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Accelerated)]
    algorithm: AlgorithmArg,
    /// Weight grid; the portfolio run defaults to interior.
    #[arg(long, value_enum)]
    grid: Option<GridArg>,
    /// Record update wall time in rounds.csv and summary.json.
    #[arg(long)]
    timing: bool,
    /// Output directory [default: $IMOP_OUT_DIR or ./imop-out].
    #[arg(long, env = "IMOP_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Number of rounds.
    #[arg(long = "T", alias = "rounds", default_value_t = 1000)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of the uniform decision noise (MQP runs only).
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[command(flatten)]
    learn: LearnArgs,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Number of rounds to replay [default: every observation].
    #[arg(long = "T", alias = "rounds")]
    t: Option<usize>,
    /// Accepted for uniformity; replay is deterministic without it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference weight distribution for the chi-square statistic.
    #[arg(long, value_enum, default_value_t = Reference::Uniform)]
    reference: Reference,
    #[command(flatten)]
    learn: LearnArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    round_state: PathBuf,
    /// Big-M constant [default: 10·max(B, gradient bound over Θ)].
    #[arg(long = "bigM", alias = "big-m", value_parser = positive, allow_negative_numbers = true)]
    big_m: Option<f64>,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    #[arg(long = "T", alias = "rounds", default_value_t = 1000)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, env = "IMOP_OUT_DIR")]
    out: Option<PathBuf>,
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {v}"))
    }
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("imop-out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_config(learn: &LearnArgs, t: usize, seed: u64, default_grid: GridMode) -> RunConfig {
    RunConfig {
        algorithm: match learn.algorithm {
            AlgorithmArg::Full => Algorithm::Full,
            AlgorithmArg::Accelerated => Algorithm::Accelerated,
        },
        rounds: t,
        k: learn.k,
        eta0: learn.eta0,
        seed,
        grid: match learn.grid {
            Some(GridArg::Even) => GridMode::Even,
            Some(GridArg::Interior) => GridMode::Interior,
            None => default_grid,
        },
        initial: InitialTheta::ProjectZero,
        timing: learn.timing,
    }
}

/// MQP or portfolio instance with its truth and learner-side observations.
struct Prepared {
    instance: MopInstance<f64>,
    truth: Vec<f64>,
    observations: Vec<Observation<f64>>,
    reference: Reference,
    grid: GridMode,
}

fn prepare(experiment: Experiment, t: usize, seed: u64, noise: f64) -> Result<Prepared> {
    Ok(match experiment {
        Experiment::MqpC | Experiment::MqpB => {
            let stream = datagen::gen_mqp_stream::<f64>(t, noise, seed)?;
            let (instance, truth) = if matches!(experiment, Experiment::MqpC) {
                (datagen::mqp_objective_instance()?, datagen::MQP_C.to_vec())
            } else {
                (datagen::mqp_rhs_instance()?, datagen::MQP_B.to_vec())
            };
            Prepared { instance, truth, observations: stream.observations, reference: Reference::Uniform, grid: GridMode::Even }
        }
        Experiment::Portfolio => {
            let data = PortfolioData::table();
            let stream = datagen::gen_portfolio_stream::<f64>(&data, t, seed)?;
            Prepared {
                instance: datagen::portfolio_instance(&data)?,
                truth: datagen::portfolio_truth(&data),
                observations: datagen::portfolio_reduce(&stream.observations)?,
                reference: Reference::Truncnormal,
                grid: GridMode::Interior,
            }
        }
    })
}

fn write_inputs(dir: &Path, instance: &MopInstance<f64>, truth: Option<&[f64]>, observations: &[Observation<f64>]) -> Result<()> {
    fs::write(dir.join("instance.toml"), to_toml(&InstanceFile::from_instance(instance))?)?;
    fs::write(dir.join("spec.toml"), to_toml(&SpecFile::from_spec(instance.param(), truth))?)?;
    let mut w = create(&dir.join("observations.csv"))?;
    datagen::write_observations(observations, &mut w)?;
    w.flush()?;
    Ok(())
}

fn chi_square(out: &RunOutput<f64>, reference: Reference, rounds: usize) -> Option<f64> {
    let us = out.grid.first_coordinates();
    let masses = match reference {
        Reference::None => return None,
        Reference::Uniform => uniform_masses(&us),
        Reference::Truncnormal => truncated_normal_masses(&us, 0.5, 0.1).ok()?,
    };
    let observed: Vec<f64> = out.histogram.counts.iter().map(|&c| c as f64).collect();
    let expected: Vec<f64> = masses.iter().map(|m| m * rounds as f64).collect();
    match chi_square_statistic(&observed, &expected) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("chi-square statistic skipped: {e}");
            None
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn learn_and_write(
    dir: &Path,
    instance: &MopInstance<f64>,
    observations: &[Observation<f64>],
    truth: Option<&[f64]>,
    config: &RunConfig,
    reference: Reference,
) -> Result<RunSummary> {
    let out = run_online(instance, observations, config, truth)?;
    log::info!("initial θ {:?}", out.theta_initial);

    let mut w = create(&dir.join("rounds.csv"))?;
    write_rounds_csv(&out.logs, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("histogram.csv"))?;
    write_histogram_csv(&out.histogram, &out.grid, &mut w)?;
    w.flush()?;
    let summary = RunSummary::new(config, &out, truth, chi_square(&out, reference, observations.len()));
    let mut w = create(&dir.join("summary.json"))?;
    summary.write_json(&mut w)?;
    w.flush()?;

    // the last update, ready for export-milp
    let t = out.logs.len();
    let theta = if t >= 2 { out.logs[t - 2].theta.clone() } else { out.theta_initial.clone() };
    let state = RoundState {
        round: t,
        theta,
        y: observations[t - 1].y.clone(),
        eta: learning_rate(t, config.eta0),
        k: config.k,
        grid: config.grid,
        instance: InstanceFile::from_instance(instance),
        spec: SpecFile::from_spec(instance.param(), truth),
    };
    fs::write(dir.join("final_state.toml"), to_toml(&state)?)?;
    Ok(summary)
}

fn run_experiment(experiment: Experiment, args: &RunArgs) -> Result<()> {
    if !(args.noise >= 0.0) {
        bail!("--noise must be non-negative, got {}", args.noise);
    }
    let dir = out_dir(&args.learn.out)?;
    let p = prepare(experiment, args.t, args.seed, args.noise)?;
    let config = run_config(&args.learn, args.t, args.seed, p.grid);
    write_inputs(&dir, &p.instance, Some(&p.truth), &p.observations)?;
    let summary = learn_and_write(&dir, &p.instance, &p.observations, Some(&p.truth), &config, p.reference)?;
    report(&dir, &summary);
    Ok(())
}

fn report(dir: &Path, s: &RunSummary) {
    match s.final_error {
        Some(e) => println!("{} rounds, final error {e:.6}, mean loss {:.6}; wrote {}", s.rounds, s.mean_loss, dir.display()),
        None => println!("{} rounds, mean loss {:.6}; wrote {}", s.rounds, s.mean_loss, dir.display()),
    }
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let instance_file: InstanceFile =
        parse_toml(&read(&args.instance)?).with_context(|| format!("parsing {}", args.instance.display()))?;
    let spec_file: SpecFile = parse_toml(&read(&args.spec)?).with_context(|| format!("parsing {}", args.spec.display()))?;
    let (instance, truth) = load_instance(&instance_file, &spec_file)?;
    let file = File::open(&args.obs).with_context(|| format!("opening {}", args.obs.display()))?;
    let mut observations = datagen::read_observations::<f64, _>(BufReader::new(file))
        .with_context(|| format!("reading {}", args.obs.display()))?;
    if let Some(t) = args.t {
        if t > observations.len() {
            bail!("--T {t} exceeds the {} observations in {}", observations.len(), args.obs.display());
        }
        observations.truncate(t);
    }
    if observations.is_empty() {
        bail!("{} holds no observations", args.obs.display());
    }
    let dir = out_dir(&args.learn.out)?;
    let config = run_config(&args.learn, observations.len(), args.seed, GridMode::Even);
    let summary = learn_and_write(&dir, &instance, &observations, truth.as_deref(), &config, args.reference)?;
    report(&dir, &summary);
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let state: RoundState =
        parse_toml(&read(&args.round_state)?).with_context(|| format!("parsing {}", args.round_state.display()))?;
    let (instance, grid) = state.load()?;
    let big_m = args.big_m.unwrap_or_else(|| default_big_m(&instance, &grid));
    let model = export_single_level(&instance, &state.theta, &state.y, state.eta, &grid, big_m)?;
    let text = model.to_text();
    match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gen_stream(args: &GenArgs) -> Result<()> {
    if !(args.noise >= 0.0) {
        bail!("--noise must be non-negative, got {}", args.noise);
    }
    let dir = out_dir(&args.out)?;
    let p = prepare(args.experiment, args.t, args.seed, args.noise)?;
    write_inputs(&dir, &p.instance, Some(&p.truth), &p.observations)?;
    println!("{} observations; wrote {}", p.observations.len(), dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match &cli.command {
        Command::RunMqpC(a) => run_experiment(Experiment::MqpC, a),
        Command::RunMqpB(a) => run_experiment(Experiment::MqpB, a),
        Command::RunPortfolio(a) => run_experiment(Experiment::Portfolio, a),
        Command::Replay(a) => replay(a),
        Command::ExportMilp(a) => export(a),
        Command::GenStream(a) => gen_stream(a),
    }
}
