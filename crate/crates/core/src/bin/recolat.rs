use std::process::ExitCode;

use clap::Parser;
use recolat::cli::{run, Cli, Overrides};
use recolat::config::parse_config;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    use anyhow::Context;
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let cfg = parse_config(&text)?;
    let ov = Overrides {
        seed: cli.seed,
        replicates: cli.replicates,
        t: cli.t,
    };
    let rendered = run(cli.command, &cfg, &ov)?.render(cli.format)?;
    match &cli.out {
        Some(path) => std::fs::write(path, rendered).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}
