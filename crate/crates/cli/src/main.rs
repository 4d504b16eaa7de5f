use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use glued_dirac_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let cfg = cli.overrides.resolve()?;
    let bundle = cli.command.run(&cfg)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("reports"));
    for name in bundle.write(&dir, &cfg)? {
        println!("wrote {}", dir.join(name).display());
    }
    for (name, doc) in &bundle.documents {
        println!("{name}: {}", if doc.pass() { "pass" } else { "FAIL" });
    }
    Ok(bundle.pass())
}
