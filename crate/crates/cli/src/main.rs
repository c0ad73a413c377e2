mod args;
mod commands;
mod error;
mod manifest;
mod overrides;

use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, EXIT_INTERRUPTED, EXIT_USAGE};
use manifest::{RunManifest, Status};

/// Set by the first SIGINT.
pub(crate) static INTERRUPTED: AtomicBool = AtomicBool::new(false);
/// True while a command polls [`INTERRUPTED`] itself.
pub(crate) static COOPERATIVE: AtomicBool = AtomicBool::new(false);
/// Manifest of the running command, finalized by the interrupt handler when
/// the command does not stop cooperatively.
pub(crate) static ACTIVE: Mutex<Option<RunManifest>> = Mutex::new(None);

fn on_interrupt() {
    let again = INTERRUPTED.swap(true, Ordering::SeqCst);
    if COOPERATIVE.load(Ordering::SeqCst) && !again {
        eprintln!("interrupt: finishing the current epoch and saving (press again to abort)");
        return;
    }
    if let Some(mut m) = ACTIVE.lock().ok().and_then(|mut g| g.take()) {
        let _ = m.finish(
            Status::Interrupted,
            EXIT_INTERRUPTED,
            Some("interrupted".into()),
        );
    }
    std::process::exit(EXIT_INTERRUPTED);
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads {n}: {e}")))?;
    }
    match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a, overrides),
        Command::Eval(a) => commands::eval(a),
        Command::Experiment(a) => commands::experiment(a, overrides),
        Command::Export(a) => commands::export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (argv, overrides) = match overrides::extract(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    if let Err(e) = ctrlc::set_handler(on_interrupt) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
