use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use lio_core::pipeline::config::key_reference;
use lio_core::pipeline::eval::{DEFAULT_MATCH_WINDOW, eval_ate};
use lio_core::pipeline::io::read_tum;
use lio_core::pipeline::{PipelineConfig, run_to_dir};
use lio_core::simulator::Scenario;
use lio_core::simulator::scenario::PRESETS;

#[derive(Parser)]
#[command(name = "lio", version, about = "LiDAR-inertial odometry with sweep reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run odometry on the inputs named by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic run from a preset name or a manifest.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the preset or manifest seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Absolute trajectory error between two TUM trajectories.
    EvalAte {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Largest timestamp difference of a matched pair (s).
        #[arg(long, default_value_t = DEFAULT_MATCH_WINDOW)]
        window: f64,
    },
}

struct Failure {
    class: &'static str,
    message: String,
}

impl Failure {
    fn new(class: &'static str, message: impl ToString) -> Self {
        Self {
            class,
            message: message.to_string(),
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, out } => {
            let cfg = PipelineConfig::load(&config).map_err(|e| Failure::new("config", e))?;
            let (output, ate) = run_to_dir(&cfg, &out).map_err(|e| Failure::new(e.class(), e))?;
            println!("states: {}", output.states.len());
            println!("windows: {}", output.records.len());
            if let Some(t) = output.truncated_at {
                println!("truncated at: {t}");
            }
            if let Some(a) = ate {
                println!("ate: {:.6} m over {} poses", a.ate, a.matches());
            }
            println!("outputs: {}", out.display());
        }
        Command::Simulate { scenario, out, seed } => {
            let mut sc = Scenario::resolve(&scenario, seed.unwrap_or(1)).map_err(|e| Failure::new("scenario", e))?;
            if let Some(seed) = seed {
                sc.seed = seed;
            }
            let manifest = sc.export(&out).map_err(|e| Failure::new("scenario", e))?;
            println!("scenario: {} (seed {})", sc.name, sc.seed);
            println!("digest: {}", manifest.digest());
            println!("config: {}", out.join("run.cfg").display());
        }
        Command::EvalAte { est, gt, window } => {
            let est = read_tum(&est).map_err(|e| Failure::new("io", e))?;
            let gt = read_tum(&gt).map_err(|e| Failure::new("io", e))?;
            let result = eval_ate(&est, &gt, window).map_err(|e| Failure::new("eval", e))?;
            println!("ate: {:.6} m over {} poses (max {:.6} m)", result.ate, result.matches(), result.max_error());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let help = format!("Scenario presets: {}\n\n{}", PRESETS.join(", "), key_reference());
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.class, f.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
