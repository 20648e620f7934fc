use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use hrc_core::harness::dataset::{write_streams, DatasetConfig};
use hrc_core::harness::{
    default_model, detection_case_study, deviation_variances, load_scenario, read_records, report, run_factorial, summarize, summary_table, write_deviation_rows,
    write_records, ExperimentConfig, Group,
};
use hrc_core::infotheory::verify_random;
use hrc_core::predictor::save_checkpoint;
use hrc_core::Error;

/// Simulated human-robot collaboration study.
#[derive(Debug, Parser)]
#[command(name = "hrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record the synthetic pose dataset as CSV.
    GenData {
        #[command(flatten)]
        world: World,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "poses.csv")]
        out: PathBuf,
    },
    /// Train the action predictor and save a checkpoint.
    Train {
        #[command(flatten)]
        world: World,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Run the factorial study and write one CSV row per trial.
    Run(RunArgs),
    /// Keypoint deviation of each detection pipeline on the two-person scene.
    DetectStudy {
        #[command(flatten)]
        world: World,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "deviation.csv")]
        out: PathBuf,
    },
    /// Check the joint-versus-single-channel information inequality on random joints.
    VerifyMi {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize trial records into per-cell tables.
    Report {
        /// Trial records written by `run`.
        input: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// `default` or a TOML config file.
    #[arg(long, default_value = "default")]
    config: String,
    #[command(flatten)]
    world: World,
    /// Predictor checkpoint; trained from the seed when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one planning condition (0 or 1).
    #[arg(long)]
    pp: Option<u8>,
    /// Restrict to one perception condition (0, 1 or 2).
    #[arg(long)]
    pm: Option<u8>,
    /// Trials per (group, task) cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Step budget per trial.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct World {
    /// Task graph file; the shipped toy car when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Scenario file; the shipped toy car when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

impl World {
    fn load(&self) -> Result<Arc<hrc_core::Scenario>, Error> {
        load_scenario(self.graph.as_deref(), self.scenario.as_deref()).map(Arc::new)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Config file or defaults, overridden by flags.
fn run_config(args: RunArgs) -> Result<ExperimentConfig, Error> {
    let RunArgs { config, world, model, seed, pp, pm, trials, timeout, .. } = args;
    let mut cfg = if config == "default" {
        ExperimentConfig::default()
    } else {
        let path = Path::new(&config);
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{config}: {e}")))?;
        ExperimentConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))?
    };
    cfg.graph = world.graph.or(cfg.graph);
    cfg.scenario = world.scenario.or(cfg.scenario);
    cfg.model = model.or(cfg.model);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.trials_per_cell = trials.unwrap_or(cfg.trials_per_cell);
    cfg.timeout_steps = timeout.unwrap_or(cfg.timeout_steps);
    if let Some(pp) = pp {
        Group::new(pp, 0)?;
    }
    if let Some(pm) = pm {
        Group::new(0, pm)?;
    }
    cfg.groups.retain(|g| pp.is_none_or(|p| g.pp == p) && pm.is_none_or(|m| g.pm == m));
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData { world, seed, out } => {
            let scenario = world.load()?;
            let rows = write_streams(&scenario, &DatasetConfig { seed, ..Default::default() }, create(&out)?)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Train { world, seed, out } => {
            let scenario = world.load()?;
            let model = default_model(&scenario, seed)?;
            save_checkpoint(&model, &out)?;
            println!(
                "trajectory mse {:.6}, classification loss {:.6}; saved {}",
                model.losses.trajectory,
                model.losses.classification,
                out.display()
            );
        }
        Command::Run(args) => {
            let out = args.out.clone();
            let cfg = run_config(args)?;
            let records = run_factorial(&cfg)?;
            write_records(&records, create(&out)?)?;
            print!("{}", summary_table(&summarize(&records)?));
        }
        Command::DetectStudy { world, seed, out } => {
            let scenario = world.load()?;
            let rows = detection_case_study(&scenario, seed)?;
            write_deviation_rows(&rows, create(&out)?)?;
            for (pipeline, var) in deviation_variances(&rows) {
                println!("{pipeline:>16}  variance {var:.6}");
            }
        }
        Command::VerifyMi { samples, seed } => {
            if samples == 0 {
                return Err(Error::Config("--samples must be positive".into()));
            }
            let held = verify_random(samples, seed);
            println!("{held}/{samples} hold");
            if held != samples {
                return Err(Error::InvalidDistribution(format!("{} joints violate the inequality", samples - held)));
            }
        }
        Command::Report { input, out } => {
            let file = File::open(&input).map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
            let records = read_records(file)?;
            let summary = report(&records, &out)?;
            print!("{}", summary_table(&summary));
        }
    }
    Ok(())
}

fn is_validation(e: &Error) -> bool {
    matches!(e, Error::Parse(_) | Error::Validation(_) | Error::Config(_) | Error::BadParams(_) | Error::BadKernel(_) | Error::EmptyRecords)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
