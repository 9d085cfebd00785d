use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use waveguide_pml::cli::{parse_config, run};

/// Finite PML solver and verification studies for Helmholtz waveguides.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// TOML run configuration
    config: PathBuf,
    /// Write CSV outputs here instead of `output.directory`
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write nodal field values (`fields.csv`)
    #[arg(long)]
    emit_fields: bool,
    /// Run twice and require byte-identical outputs
    #[arg(long)]
    seed_check: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match try_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn try_main() -> anyhow::Result<bool> {
    let args = Args::parse();
    let mut config = parse_config(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    config.emit_fields |= args.emit_fields;
    let dir = args.out_dir.unwrap_or_else(|| config.output_dir.clone());

    let output = run(&config).context("running study")?;
    if args.seed_check {
        let again = run(&config).context("repeating study for --seed-check")?;
        let (a, b) = (output.digests(), again.digests());
        for (name, digest) in &a {
            if b.get(name) != Some(digest) {
                bail!("--seed-check: {name} differs between runs");
            }
        }
        log::info!("seed check: {} files identical across two runs", a.len());
    }
    for path in output.write(&dir).with_context(|| format!("writing to {}", dir.display()))? {
        log::info!("wrote {}", path.display());
    }
    for c in &output.criteria {
        println!("{} {} value={} threshold={}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    Ok(output.passed())
}
