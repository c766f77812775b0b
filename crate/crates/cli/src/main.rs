use adiabatica::error::Error;
use adiabatica::exec;
use adiabatica::models::{symbol_catalog, ModelInfo};
use adiabatica::observables::{energy_function_catalog, observable_catalog};
use adiabatica::run::{output_dir, run_to_dir, ExperimentKind, RunConfig, EXPERIMENTS};
use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adiabatica", version, about = "Adiabatic band projection experiments")]
struct Cli {
    /// Worker threads for parallel sweeps (1 = sequential).
    #[arg(long, global = true, env = "ADIABATICA_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config (or a previous manifest).
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List registered models, observables and energy functions.
    ListModels,
    /// Describe what an experiment measures.
    Describe { experiment: String },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else if e.is_numerical_guard() {
        3
    } else {
        1
    }
}

fn print_catalog(out: &mut impl Write, title: &str, entries: &[ModelInfo]) -> std::io::Result<()> {
    writeln!(out, "{title}:")?;
    for m in entries {
        writeln!(out, "  {} [{}]", m.name, m.kind)?;
        writeln!(out, "      {}", m.summary)?;
        if !m.params.is_empty() {
            let params: Vec<String> = m.params.iter().map(|(k, v)| format!("{k} = {v}")).collect();
            writeln!(out, "      params: {}", params.join(", "))?;
        }
    }
    Ok(())
}

fn run(config: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let cfg = match RunConfig::from_path(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return ExitCode::from(match e {
                Error::Io(_) => 1,
                _ => 2,
            });
        }
    };
    let dir = match output_dir(&cfg, out.as_deref()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_to_dir(&cfg, &dir) {
        Ok(report) => {
            println!("wrote {}", report.results_path.display());
            println!("wrote {}", report.manifest_path.display());
            if let Ok(s) = serde_json::to_string_pretty(&report.manifest.summary) {
                println!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err((e, manifest)) => {
            eprintln!("error: {e}");
            if let Some(m) = manifest {
                eprintln!("failure recorded in {}", m.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => match cli.threads {
            Some(0) => {
                eprintln!("error: --threads must be at least 1");
                ExitCode::from(2)
            }
            Some(n) => exec::with_threads(n, || run(config, out)),
            None => run(config, out),
        },
        Command::ListModels => {
            let mut out = std::io::stdout().lock();
            let written = print_catalog(&mut out, "symbol models", &symbol_catalog())
                .and_then(|_| writeln!(out))
                .and_then(|_| print_catalog(&mut out, "observables", &observable_catalog()))
                .and_then(|_| writeln!(out))
                .and_then(|_| print_catalog(&mut out, "energy functions", &energy_function_catalog()));
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            match written {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            }
        }
        Command::Describe { experiment } => match ExperimentKind::parse(&experiment) {
            Some(e) => {
                println!("{}: {}", e.name(), e.description());
                ExitCode::SUCCESS
            }
            None => {
                let names: Vec<&str> = EXPERIMENTS.iter().map(|e| e.name()).collect();
                eprintln!("error: unknown experiment `{experiment}` (known: {})", names.join(", "));
                ExitCode::from(2)
            }
        },
    }
}
