use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use signal_lab::agent::qnet_gradient_check;
use signal_lab::config::{ControllerKind, ExperimentConfig};
use signal_lab::harness::{self, ExperimentOutput};
use signal_lab::metrics::check_identity;
use signal_lab::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Signalized intersection experiments: classic controllers and a DQN agent
/// on a point-queue simulator.
#[derive(Debug, Parser)]
#[command(name = "signal-lab", version)]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long, global = true)]
    show_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the configured controllers (training learning ones first).
    Run(RunArgs),
    /// Train the learning controller only; writes curves and checkpoints.
    Train(RunArgs),
    /// Ablation sweep: full agent plus no-OL, no-SG and no-F variants.
    Sweep(RunArgs),
    /// Finite-difference check of Q-network gradients.
    Gradcheck(GradcheckArgs),
    /// Parse and validate a configuration file.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to one controller (fixedtime, webster, sotl, lit).
    #[arg(long)]
    controller: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the CSVs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Training episodes for learning controllers.
    #[arg(long)]
    episodes: Option<usize>,
    /// Exit 3 if any finished evaluation episode breaks the travel-time /
    /// queue identity.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    networks: usize,
    #[arg(long, default_value_t = 1000)]
    max_params: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Exit 3 if any network exceeds the tolerance.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

enum Failure {
    Config(String),
    Runtime(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse { .. } | Error::Load { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.show_defaults {
        print!("{}", ExperimentConfig::defaults_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given; see --help");
        return ExitCode::from(EXIT_CONFIG);
    };
    match dispatch(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(a) => run(a, Mode::Run),
        Command::Train(a) => run(a, Mode::Train),
        Command::Sweep(a) => run(a, Mode::Sweep),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ValidateConfig(a) => {
            let (config, _) = load(Some(&a.config))?;
            println!(
                "ok: {} controller(s), {} seed(s), {} intersection(s)",
                config.experiment.controllers.len(),
                config.experiment.seeds.len(),
                config.network.rows * config.network.cols
            );
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Run,
    Train,
    Sweep,
}

/// The config plus the directory relative demand paths resolve against.
fn load(path: Option<&Path>) -> Result<(ExperimentConfig, PathBuf), Failure> {
    match path {
        None => Ok((ExperimentConfig::default(), PathBuf::from("."))),
        Some(p) => {
            let config = ExperimentConfig::load(p).map_err(|e| match e {
                Error::Io { .. } => Failure::Config(e.to_string()),
                other => other.into(),
            })?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((config, dir))
        }
    }
}

fn run(args: RunArgs, mode: Mode) -> Result<(), Failure> {
    let (mut config, base) = load(args.config.as_deref())?;
    if let Some(c) = &args.controller {
        config.experiment.controllers = vec![c.parse::<ControllerKind>()?];
    }
    if let Some(s) = args.seed {
        config.experiment.seeds = vec![s];
    }
    if let Some(e) = args.episodes {
        config.experiment.episodes = e;
    }
    match mode {
        Mode::Run => {}
        Mode::Train | Mode::Sweep => {
            if args.controller.is_none() {
                config.experiment.controllers = vec![ControllerKind::Lit];
            }
            if !config.experiment.controllers.iter().any(|c| c.is_learning()) {
                return Err(Failure::Config(format!(
                    "`{}` needs a learning controller",
                    mode_name(mode)
                )));
            }
            config.experiment.ablation = mode == Mode::Sweep;
        }
    }
    config.validate()?;

    if mode == Mode::Train {
        return train(&config, &base, &args.out);
    }
    let output = harness::run_experiment(&config, &base)?;
    output.write_dir(&args.out)?;
    print_summary(&output);
    if args.check {
        identity_check(&output)?;
    }
    Ok(())
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Run => "run",
        Mode::Train => "train",
        Mode::Sweep => "sweep",
    }
}

fn train(config: &ExperimentConfig, base: &Path, out: &Path) -> Result<(), Failure> {
    let network = config.network.build()?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let mut output = ExperimentOutput::default();
    for &seed in &config.experiment.seeds {
        let eval = harness::evaluation_demands(config, &network, seed, base)?;
        let (agents, curve) = harness::train_lit(config, &network, &config.agent, seed, &eval[0], base)?;
        for (i, agent) in agents.iter().enumerate() {
            agent
                .checkpoint()
                .save(&out.join(format!("lit-seed{seed}-agent{i}.json")))?;
        }
        let last = curve.points.last().and_then(|p| p.avg_travel_time_s);
        println!(
            "seed {seed}: {} episodes, final greedy travel time {}",
            curve.points.len(),
            last.map(|t| format!("{t:.2} s")).unwrap_or_else(|| "n/a".into())
        );
        output.curves.push(harness::CurveRecord {
            controller: "lit".into(),
            seed,
            curve,
        });
    }
    output.write_dir(out)?;
    Ok(())
}

fn print_summary(output: &ExperimentOutput) {
    let mut labels: Vec<&str> = Vec::new();
    for r in &output.rows {
        if !labels.contains(&r.controller.as_str()) {
            labels.push(&r.controller);
        }
    }
    for l in labels {
        let means = output.seed_means(l);
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        println!("{l:<12} mean travel time {mean:8.2} s over {} seed(s)", means.len());
    }
}

fn identity_check(output: &ExperimentOutput) -> Result<(), Failure> {
    let mut checked = 0;
    for r in &output.rows {
        if let Some(residual) = check_identity(&r.metrics) {
            checked += 1;
            if residual != 0.0 {
                return Err(Failure::Check(format!(
                    "{} seed {} episode {}: identity residual {residual}",
                    r.controller, r.seed, r.episode
                )));
            }
        }
    }
    println!("identity check: {checked} finished episode(s), residual 0");
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: f64 = 0.0;
    for i in 0..args.networks {
        let r = qnet_gradient_check(args.max_params, &mut rng)?;
        println!(
            "network {i}: max relative error {:.3e} ({} checked, {} skipped at kinks)",
            r.max_relative_error, r.checked, r.skipped
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("worst relative error {worst:.3e}");
    // Written so that a NaN error also fails.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    let failed = !(worst < args.tolerance);
    if args.check && failed {
        return Err(Failure::Check(format!(
            "relative error {worst:e} >= {}",
            args.tolerance
        )));
    }
    Ok(())
}
