//! `rcb`: command-line driver for restart competing bandit experiments.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rcb_core::config::{parse_config, ExperimentConfig, Mode, OracleSpec};
use rcb_core::engine::Baseline;
use rcb_core::export::{run_preamble, write_epochs_csv, write_sweep_csv, write_trace_csv};
use rcb_core::oracle::run_oracle_check;
use rcb_core::sweep::{run_single, run_sweep, SweepGrid};

#[derive(Parser)]
#[command(
    name = "rcb",
    version,
    about = "Restart competing bandits in matching markets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trace per seed and write trace CSVs.
    Run(RunArgs),
    /// Run every seed at every grid point and write a summary CSV.
    Sweep(SweepArgs),
    /// Cross-check deferred acceptance against brute-force enumeration.
    OracleCheck(OracleArgs),
    /// Parse and validate a config, then print the resolved values.
    Validate(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    config: ConfigArg,
    /// Seeds to run, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation mode, overriding the config.
    #[arg(long, value_enum)]
    mode: Option<SimMode>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Grid as `parameter=v1,v2,...` over horizon, changes or restart_period.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    /// Optional config supplying an [oracle] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of random instances, overriding the config.
    #[arg(long)]
    instances: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    Rcb,
    Meta,
}

/// Failures that map to a nonzero exit code.
enum Failure {
    Validation(anyhow::Error),
    OracleMismatch(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut config = load_config(&common.config.config)?;
    if let Some(seeds) = &common.seed {
        if seeds.is_empty() {
            bail!("--seed needs at least one value");
        }
        config.seeds = seeds.clone();
        config.defaulted.retain(|k| *k != "seeds");
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
        config.defaulted.retain(|k| *k != "output_dir");
    }
    if let Some(mode) = common.mode {
        config.mode = match mode {
            SimMode::Rcb => Mode::Rcb,
            SimMode::Meta => Mode::Meta,
        };
        config.defaulted.retain(|k| *k != "mode");
    }
    if config.mode == Mode::OracleCheck {
        bail!("config is in oracle-check mode; use the oracle-check subcommand or --mode");
    }
    if config.instance.is_none() {
        bail!("config describes no market instance");
    }
    Ok(config)
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    parse_config(path).with_context(|| format!("invalid config {}", path.display()))
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let config = load(&args.common)?;
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    for &seed in &config.seeds {
        let (market, timeline) = config.instance_for(seed)?;
        let trace = run_single(&config, seed)?;
        let preamble = run_preamble(&config, seed, &market, &timeline, &trace);
        write_trace_csv(
            &trace,
            config.baseline,
            &preamble,
            create(&config.output_dir, &format!("trace_seed{seed}.csv"))?,
        )?;
        if config.mode == Mode::Meta {
            write_epochs_csv(
                &trace,
                &preamble,
                create(&config.output_dir, &format!("epochs_seed{seed}.csv"))?,
            )?;
        }
        let regret = trace.final_regret(config.baseline);
        println!(
            "seed {seed}: {} regret per player {:?}, stability violations {}",
            config.baseline.name(),
            regret,
            trace.stability_violations
        );
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let config = load(&args.common)?;
    let grid = match (&args.grid, &config.sweep) {
        (Some(g), _) => SweepGrid::parse(g)?,
        (None, Some(g)) => g.clone(),
        (None, None) => bail!("no grid: pass --grid or add a [sweep] section"),
    };
    let rows = run_sweep(&config, &grid)?;
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    let mut preamble = config.echo();
    preamble.push_str(&format!(
        "run.grid = {}={:?}\nrun.metric = max-player {} regret\n",
        grid.parameter.name(),
        grid.values,
        config.baseline.name()
    ));
    write_sweep_csv(&rows, &preamble, create(&config.output_dir, "sweep.csv")?)?;
    println!("grid_value\trestart_period\tmean_regret\tstd_regret\tseeds");
    for r in &rows {
        println!(
            "{}\t{}\t{:.3}\t{:.3}\t{}",
            r.grid_value,
            r.restart_period
                .map_or_else(|| "-".into(), |h| h.to_string()),
            r.mean_regret,
            r.std_regret,
            r.seeds
        );
    }
    Ok(())
}

fn oracle_check(args: OracleArgs) -> Result<(), Failure> {
    let mut spec = match &args.config {
        Some(path) => load_config(path)?.oracle,
        None => OracleSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.instances {
        spec.instances = n;
    }
    let report = run_oracle_check(&spec).map_err(anyhow::Error::from)?;
    for m in &report.mismatches {
        eprintln!(
            "mismatch on instance {} ({:?} proposing): deferred acceptance {:?}, enumeration {:?}",
            m.instance,
            m.side,
            m.deferred_acceptance.assignment(),
            m.enumerated.as_ref().map(|e| e.assignment().to_vec())
        );
    }
    println!(
        "{} instances (N = K in 2..={}), {} stable matchings, {} mismatches",
        report.instances,
        spec.max_size,
        report.stable_matchings,
        report.mismatches.len()
    );
    if report.mismatches.is_empty() {
        Ok(())
    } else {
        Err(Failure::OracleMismatch(report.mismatches.len()))
    }
}

fn validate(args: ConfigArg) -> anyhow::Result<()> {
    let config = load_config(&args.config)?;
    print!("{}", config.echo());
    if config.baseline == Baseline::Optimal {
        println!("note: regret is measured against the player-optimal benchmark");
    }
    println!("ok");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a).map_err(Failure::from),
        Command::Sweep(a) => sweep(a).map_err(Failure::from),
        Command::OracleCheck(a) => oracle_check(a),
        Command::Validate(a) => validate(a).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::OracleMismatch(n)) => {
            eprintln!("error: {n} oracle mismatches");
            ExitCode::from(2)
        }
    }
}
