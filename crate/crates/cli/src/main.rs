use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpgd_cli::{execute, load_config, Command};

#[derive(Parser)]
#[command(name = "gpgd", version, about = "PGD and Group-PGD experiments on angle-subsampled polar problems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run PGD and Group-PGD, write traces and the certificate
    Run(Args),
    /// Compute and print the certificate constants
    Certify(Args),
    /// Mean curves of both methods against the bound
    Compare(Args),
    /// Dump the phantom as PGM and CSV
    Phantom(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides output.dir
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Run(a) => (Command::Run, a),
        Sub::Certify(a) => (Command::Certify, a),
        Sub::Compare(a) => (Command::Compare, a),
        Sub::Phantom(a) => (Command::Phantom, a),
    };
    let result = load_config(&args.config).and_then(|mut config| {
        if let Some(out) = args.out {
            config.out_dir = out;
        }
        let outputs = execute(command, &config)?;
        outputs.write(&config.out_dir)?;
        Ok(outputs)
    });
    match result {
        Ok(outputs) => {
            print!("{}", outputs.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gpgd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
