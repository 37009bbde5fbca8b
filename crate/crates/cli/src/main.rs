use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frobenius_cli::error::{EXIT_INTERNAL, EXIT_INPUT};
use frobenius_cli::{run, CliError, Kind, Options, ProblemFile};

#[derive(Parser)]
#[command(name = "frobenius", version, about = "Generalized inverses, leaf integration and fixed-rank charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generalized inverse of A, with the seven conditions when T is given
    Geninv(Common),
    /// Perturbed inverse B = A+ C^-1 of T near A
    Perturb(Common),
    /// Sample the leaf of a level-set family through a base point
    Leaf(LeafArgs),
    /// Chart the fixed-rank stratum around an anchor
    Rankchart(Common),
    /// First-order criticality on a constraint manifold
    Critcheck(Common),
}

#[derive(Args)]
struct Common {
    /// Problem file
    #[arg(long)]
    input: PathBuf,
    /// Report path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LeafArgs {
    #[command(flatten)]
    common: Common,
    /// Leaf CSV path
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long)]
    parallel: bool,
}

fn write_report(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    let res = match out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    };
    res.map_err(|e| CliError::Output { context: "writing report".into(), source: e })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let (kind, common, options) = match cli.command {
        Command::Geninv(c) => (Kind::Geninv, c, None),
        Command::Perturb(c) => (Kind::Perturb, c, None),
        Command::Rankchart(c) => (Kind::Rankchart, c, None),
        Command::Critcheck(c) => (Kind::Critcheck, c, None),
        Command::Leaf(l) => {
            let o = Options { step: l.step, extent: l.extent, parallel: l.parallel, csv: l.csv, ..Options::default() };
            (Kind::Leaf, l.common, Some(o))
        }
    };
    let options = Options { tol: common.tol, seed: common.seed, ..options.unwrap_or_default() };

    let outcome = ProblemFile::read(&common.input.to_string_lossy()).and_then(|p| run(kind, &p, &options));
    match outcome {
        Ok(o) => {
            if let Err(e) = write_report(&common.out, o.report.as_str()) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INTERNAL);
            }
            if let Some(msg) = o.message {
                eprintln!("error: {msg}");
            }
            ExitCode::from(o.exit)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
