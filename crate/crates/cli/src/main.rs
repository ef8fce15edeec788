use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heatdim::experiment::report::{summary_text, to_json};
use heatdim::experiment::{
    exit_code_for_error, run, spectrum_csv, verify, verify_summary, write_outputs, ExperimentConfig, EXIT_GATE_FAILURE, EXIT_OK,
};
use heatdim::Error;

#[derive(Parser)]
#[command(name = "heatdim", version, about = "Heat-kernel and spectral dimension experiments on finite models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimators and gates of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the identity and gate suite on the shipped fixtures.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "heatdim-verify")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Print the eigenvalues of the configured model as CSV.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
    },
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn execute(cmd: Command) -> Result<i32, Error> {
    match cmd {
        Command::Run { config, out, quiet } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let outcome = run(&cfg)?;
            let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("heatdim-out"));
            write_outputs(&outcome, &dir)?;
            if !quiet {
                print!("{}", summary_text(&outcome));
                println!("wrote {}", dir.display());
            }
            Ok(if outcome.report.all_gates_passed { EXIT_OK } else { EXIT_GATE_FAILURE })
        }
        Command::Verify { seed, out, quiet } => {
            let report = verify(seed)?;
            std::fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
            write(&out.join("verify.json"), &to_json(&report)?)?;
            let summary = verify_summary(&report);
            write(&out.join("summary.txt"), &summary)?;
            if !quiet {
                print!("{summary}");
            }
            Ok(if report.passed { EXIT_OK } else { EXIT_GATE_FAILURE })
        }
        Command::Spectrum { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            print!("{}", spectrum_csv(&cfg)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for_error(&e)
        }
    };
    ExitCode::from(code as u8)
}
