use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use momentflow::runner::{self, ExperimentKind, RunError, RunManifest};

#[derive(Parser)]
#[command(name = "momentflow", version, about = "Moment-constrained diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Run the identity suite with default settings.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "momentflow-check")]
        out: PathBuf,
    },
    /// Print the smallest eigenvalues of the linear operator as JSON.
    Spectrum {
        #[arg(long)]
        n: u32,
        /// zero_zero, zero_free, full or line:<slope>
        #[arg(long)]
        y: String,
        #[arg(long, default_value_t = 513)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            parallel,
        } => {
            let mut m = runner::load_config(&config)?;
            if let Some(seed) = seed {
                m.seed = seed;
            }
            if let Some(k) = parallel {
                m.parallel = k;
            }
            let dir = out.unwrap_or_else(|| PathBuf::from(&m.output));
            let result = runner::run(&m, &dir)?;
            print!("{}", result.report);
            Ok(())
        }
        Command::Check { seed, out } => {
            let m = RunManifest {
                seed,
                output: out.display().to_string(),
                ..RunManifest::defaults(ExperimentKind::IdentitySuite)
            };
            let result = runner::run(&m, &out);
            if let Ok(r) = &result {
                print!("{}", r.report);
            }
            result.map(|_| ())
        }
        Command::Spectrum { n, y, points, k } => {
            let m = RunManifest {
                n,
                y: runner::parse_constraint(&y)?,
                n_points: points,
                k,
                ..RunManifest::defaults(ExperimentKind::Spectrum)
            };
            m.validate()?;
            let value = runner::spectrum_json(&m)?;
            println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {:#}", anyhow::Error::new(e).context("momentflow failed"));
            ExitCode::from(code as u8)
        }
    }
}
