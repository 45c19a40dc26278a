//! `attnprint`: extract, compare, attack and verify attention-weight
//! fingerprints from the command line.

pub mod args;
pub mod commands;
pub mod error;
pub mod report;

use clap::Parser;

pub use args::Cli;
pub use error::{CliError, Result};
pub use report::{read_report, write_report, ReportDocument, ReportFormat};

use args::Command;

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns 0 on success, 2 on a usage error and 1 on any other failure.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = serde_json::to_value(cli).expect("arguments serialize");
    if cli.verbose {
        eprintln!("{config}");
    }
    let profile = cli.profile;
    match &cli.command {
        Command::Extract(a) => commands::extract(a, profile),
        Command::Compare(a) => commands::compare(a),
        Command::Attack(a) => commands::attack(a, profile),
        Command::Augment(a) => commands::augment(a, profile),
        Command::Train(a) => commands::train_net(a, profile),
        Command::Verify(a) => commands::verify_suspect(a, config),
        Command::FalseClaim(a) => commands::false_claim(a),
        Command::Ablate(a) => commands::ablate(a, profile),
        Command::Toy(a) => commands::toy(a),
    }
}
