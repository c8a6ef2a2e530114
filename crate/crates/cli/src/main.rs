mod cli;
mod failure;
mod manifest;
mod run;

use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

use cli::{Cli, Command};
use failure::{usage, Failure, Outcome};
use manifest::RunManifest;

fn name(c: &Command) -> &'static str {
    match c {
        Command::Approx(_) => "approx",
        Command::Build(_) => "build",
        Command::Train(_) => "train",
        Command::Polyfy(_) => "polyfy",
        Command::Analyze(_) => "analyze",
        Command::PlaceSkips(_) => "place-skips",
        Command::RemoveSkips(_) => "remove-skips",
        Command::Simulate(_) => "simulate",
        Command::Report(_) => "report",
        Command::Rerun(_) => "rerun",
    }
}

fn parse(argv: &[String]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(argv)
}

/// First line of a clap error, which already carries the `error:` prefix.
fn clap_failure(e: &clap::Error) -> Failure {
    let text = e.to_string();
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
    usage(line.trim_start_matches("error:").trim())
}

fn execute(cli: Cli, argv: &[String]) -> Outcome<()> {
    let start = Instant::now();
    let command = name(&cli.command);
    let rec = match &cli.command {
        Command::Approx(a) => run::approx(a)?,
        Command::Build(a) => run::build(a)?,
        Command::Train(a) => run::train(a)?,
        Command::Polyfy(a) => run::polyfy(a)?,
        Command::Analyze(a) => run::analyze(a)?,
        Command::PlaceSkips(a) => run::place_skips(a)?,
        Command::RemoveSkips(a) => run::remove_skips(a)?,
        Command::Simulate(a) => run::simulate(a)?,
        Command::Report(a) => run::report(a)?,
        Command::Rerun(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if m.command == "rerun" {
                return Err(usage("a manifest cannot replay another rerun"));
            }
            let argv = m.replay_argv(a.out.as_deref());
            let cli = parse(&argv).map_err(|e| Failure::Input(format!("{}: {}", a.manifest.display(), clap_failure(&e).message())))?;
            return execute(cli, &argv);
        }
    };
    if let Some(path) = &rec.manifest {
        let args = argv.iter().skip_while(|a| a.as_str() != command).skip(1).cloned().collect();
        RunManifest::new(command, args, &rec, start.elapsed().as_secs_f64()).save(path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let result = match parse(&argv) {
        Ok(cli) => execute(cli, &argv),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            Ok(())
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            Err(usage("missing subcommand"))
        }
        Err(e) => Err(clap_failure(&e)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().replace('\n', " "));
            ExitCode::from(f.code() as u8)
        }
    }
}
