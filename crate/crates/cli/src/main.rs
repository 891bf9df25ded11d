mod cmd;
mod error;
mod opts;

use clap::error::ErrorKind as ClapKind;
use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

/// Concept frequency estimation over caption corpora, and zero-shot
/// classifiers built on it.
///
/// Every subcommand reads and writes files and prints one JSON line on
/// success. Errors are JSON on stderr with exit code 1 (usage), 2 (input),
/// 3 (provider) or 4 (internal).
#[derive(Debug, Parser)]
#[command(name = "tally", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Synonyms(cmd::synonyms::SynonymsArgs),
    Scan(cmd::scan::ScanArgs),
    Judge(cmd::judge::JudgeArgs),
    Freq(cmd::scan::FreqArgs),
    Analyze(cmd::analysis::AnalyzeArgs),
    Prompt(cmd::prompt::PromptArgs),
    Retrieve(cmd::linear::RetrieveArgs),
    Train(cmd::linear::TrainArgs),
    Eval(cmd::linear::EvalArgs),
    Report(cmd::analysis::ReportArgs),
}

fn dispatch(c: Command) -> CliResult<serde_json::Value> {
    match c {
        Command::Synonyms(a) => cmd::synonyms::run(a),
        Command::Scan(a) => cmd::scan::run(a),
        Command::Judge(a) => cmd::judge::run(a),
        Command::Freq(a) => cmd::scan::run_freq(a),
        Command::Analyze(a) => cmd::analysis::run_analyze(a),
        Command::Prompt(a) => cmd::prompt::run(a),
        Command::Retrieve(a) => cmd::linear::run_retrieve(a),
        Command::Train(a) => cmd::linear::run_train(a),
        Command::Eval(a) => cmd::linear::run_eval(a),
        Command::Report(a) => cmd::analysis::run_report(a),
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.kind.exit_code());
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            print!("{e}");
            return;
        }
        Err(e) => fail(CliError::usage(e.to_string().trim_end())),
    };
    match dispatch(cli.command) {
        Ok(summary) => println!("{summary}"),
        Err(e) => fail(e),
    }
}
