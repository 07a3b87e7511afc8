use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use kshare_core::analysis::{optimal_alpha, BoundParams};
use kshare_core::sim::{run_adl, write_outputs, AdlSettings, Environment, Gate, Population, MANIFEST_FILE};
use kshare_core::{run_scenario, Ledger, RegionId, SimConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kshare", version, about = "Knowledge sharing over regional DAG ledgers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named scenario and write its CSV files and manifest.
    Sim {
        scenario: String,
        /// JSON config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Check a config file and print its digest.
    ValidateConfig { file: PathBuf },
}

#[derive(Subcommand)]
enum Analysis {
    /// Minimize the convergence bound; prints a JSON document.
    Bound {
        /// JSON object with gamma, epsilon, horizon, h_min, h_max and k.
        #[arg(long)]
        params: PathBuf,
        /// Replace gamma with the value at which the cubic has a double root.
        #[arg(long)]
        on_condition: bool,
    },
}

#[derive(Subcommand)]
enum LedgerAction {
    /// Run asynchronous learning and export one region's ledger.
    Export {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        region: u32,
    },
    /// Re-verify an exported ledger against the config's identities.
    Import {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim { scenario, config, out, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let log = run_scenario(&cfg, &scenario)?;
            let manifest = write_outputs(&log, &out).with_context(|| format!("writing to {}", out.display()))?;
            for f in &manifest.files {
                println!("{}: {} rows", out.join(&f.name).display(), f.rows);
            }
            println!("{}", out.join(MANIFEST_FILE).display());
        }
        Command::Analyze { what: Analysis::Bound { params, on_condition } } => {
            let text = std::fs::read_to_string(&params).with_context(|| format!("reading {}", params.display()))?;
            let mut p: BoundParams =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", params.display()))?;
            if on_condition {
                p = p.on_condition();
            }
            p.validate()?;
            let opt = optimal_alpha(&p)?;
            let doc = json!({
                "params": p,
                "A": opt.coeffs.a,
                "B": opt.coeffs.b,
                "C": opt.coeffs.c,
                "D": opt.coeffs.d,
                "cubic": opt.cubic,
                "roots": opt.roots.roots,
                "case": opt.roots.case,
                "alpha_star": opt.alpha,
                "closed_form_alpha": opt.closed_form,
                "repeated_root_form": opt.repeated_root_form,
                "required_gamma": opt.required_gamma,
                "on_condition": opt.on_condition,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Ledger { action: LedgerAction::Export { file, config, seed, region } } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let env = Environment::new(&cfg, Population::build(&cfg)?)?;
            let out = run_adl(&env, &AdlSettings::all(&env, Gate::Disabled, cfg.learning.epsilon()))?;
            let ledger = &out.network.region(RegionId(region))?.ledger;
            std::fs::write(&file, ledger.export()).with_context(|| format!("writing {}", file.display()))?;
            println!("exported {} sites from region {region} to {}", ledger.len(), file.display());
        }
        Command::Ledger { action: LedgerAction::Import { file, config, seed } } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let env = Environment::new(&cfg, Population::build(&cfg)?)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let ledger = Ledger::import(&text, cfg.ledger.pow_difficulty, &env.crypto())?;
            if ledger.is_empty() {
                bail!("{} holds no sites", file.display());
            }
            println!(
                "{}: {} sites, {} tips, style assortativity {:.4}",
                file.display(),
                ledger.len(),
                ledger.tip_count(),
                ledger.style_assortativity()
            );
        }
        Command::ValidateConfig { file } => {
            let cfg = SimConfig::load(&file).with_context(|| format!("invalid config {}", file.display()))?;
            println!("ok {}", cfg.digest());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
