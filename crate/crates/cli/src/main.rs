//! `psem` command-line interface.

mod analyze;
mod config;
mod diagnose;
mod output;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use psem::{check_assumptions, load_csv, summarize, Contrast, PsemError, Result, Scenario, Schema};

use crate::config::{AnalysisConfig, StudyFile, WeightsConfig};

#[derive(Debug, Parser)]
#[command(
    name = "psem",
    version,
    about = "Principal surrogate evaluation under early clinical events"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate CEP curves with ignorance intervals and EUIs for one dataset.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input CSV (overrides the config).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        contrast: Option<Contrast>,
    },
    /// Run a simulation study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Report early-event rates, marker rates, and assumption checks.
    Diagnose {
        /// Input CSV; defaults to the config's input.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Analysis config supplying the schema and weight model.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `diagnostics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_out(configured: Option<PathBuf>) -> PathBuf {
    configured.unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            config,
            out,
            input,
            scenario,
            contrast,
        } => {
            let mut cfg = AnalysisConfig::load(&config)?;
            if let Some(i) = input {
                cfg.input = i;
            }
            cfg.input = analyze::absolute(&cfg.input);
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if let Some(c) = contrast {
                cfg.contrast = c;
            }
            let out = default_out(out.or_else(|| cfg.output.clone()));
            let results = analyze::execute(&cfg, &out)?;
            for region in &results.regions {
                for iv in &region.intervals {
                    println!(
                        "{} {}: ignorance [{:.4}, {:.4}] EUI [{:.4}, {:.4}]",
                        region.label, iv.target, iv.ignorance.lower, iv.ignorance.upper, iv.eui.lower, iv.eui.upper
                    );
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Simulate {
            config,
            seed,
            out,
            threads,
            replicates,
        } => {
            let mut file = StudyFile::load(&config)?;
            if let Some(s) = seed {
                file.seed = s;
            }
            if let Some(r) = replicates {
                file.replicates = r;
            }
            if let Some(t) = threads {
                if t == 0 {
                    return Err(PsemError::Config("--threads must be positive".into()));
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| PsemError::Config(format!("thread pool: {e}")))?;
            }
            let out = default_out(out.or_else(|| file.output.clone()));
            let result = simulate::execute(&file, &out)?;
            for c in &result.cells {
                println!(
                    "{} n={} nu={} diff={} gamma={}: power {:.3} coverage {:.3} width {:.4} failures {}",
                    c.cell.design,
                    c.cell.n,
                    c.cell.nu,
                    c.cell.diff,
                    c.cell.gamma,
                    c.power,
                    c.coverage,
                    c.mean_width,
                    c.failures
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Diagnose { input, config, out } => {
            let (input, schema, weights) = match &config {
                Some(path) => {
                    let cfg = AnalysisConfig::load(path)?;
                    (input.unwrap_or(cfg.input), cfg.schema, cfg.weights)
                }
                None => {
                    let input = input.ok_or_else(|| PsemError::Config("diagnose needs --input or --config".into()))?;
                    (input, Schema::default(), WeightsConfig::Auto)
                }
            };
            let records = load_csv(&input, &schema)?;
            let summary = summarize(&records)?;
            let model = weights.model(&records);
            let weighted = analyze::weigh(records, model.as_ref())?;
            let diagnostics = check_assumptions(&weighted.records, Some(&weighted));
            print!("{}", diagnose::report(&diagnostics));
            if let Some(dir) = out {
                output::create_dir(&dir)?;
                let report = diagnose::Report { summary, diagnostics };
                output::write_json(&dir.join("diagnostics.json"), &report)?;
            }
            Ok(())
        }
    }
}

fn fail(code: u8, kind: &str, name: &str, message: &str) -> ExitCode {
    let line = message
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    eprintln!("error[code={code} kind={kind} error={name}]: {line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            return fail(2, "config", "usage", first);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            fail(kind.exit_code() as u8, kind.name(), e.name(), &e.to_string())
        }
    }
}
