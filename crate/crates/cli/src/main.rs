//! `plc`: command-line front end for the progressive label correction harness.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plc_core::harness::{self, RunConfig, RunReport};
use plc_core::{par, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "plc",
    version,
    about = "Progressive label correction on synthetic data with a known posterior"
)]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write train/test CSVs and the oracle sidecar.
    Gen,
    /// Apply the configured noise and write the corrupted CSVs.
    Corrupt,
    /// Full pipeline with label correction.
    Run,
    /// Same training budget without correction.
    Standard,
    /// Cartesian grid of correction runs.
    Sweep,
    /// Margin profile, theorem bounds and growth trace.
    CheckTheory {
        /// Existing report.json; runs the pipeline when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn print_run(dir: &Path, report: &RunReport) {
    let s = &report.summary;
    println!("wrote {}", dir.display());
    println!(
        "rounds {} flips {} purity {:.4} -> {:.4} test_acc_bayes {}",
        report.rounds.len(),
        s.total_flips,
        s.initial_purity,
        s.final_purity,
        opt(s.test_accuracy_bayes)
    );
    if s.total_flips == 0 {
        println!("no labels were flipped");
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        par::set_threads(jobs)?;
    }
    let config = load_config(cli)?;
    let dir = config.output_dir.clone();
    match &cli.command {
        Command::Gen => {
            let data = harness::cmd_gen(&config, &dir)?;
            println!(
                "wrote {} ({} train rows, {} test rows)",
                dir.display(),
                data.train.len(),
                data.test.len()
            );
        }
        Command::Corrupt => {
            for r in harness::cmd_corrupt(&config, &dir)? {
                println!(
                    "{}: corrupted {:.4} realized {:.4}",
                    r.kind, r.corrupted_fraction, r.realized_level
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Run | Command::Standard => {
            let outcome = harness::run_pipeline(&config, matches!(cli.command, Command::Run))?;
            harness::write_run_outputs(&dir, &outcome)?;
            print_run(&dir, &outcome.report);
        }
        Command::Sweep => {
            let outcome = harness::run_sweep(&config, &dir)?;
            fs::create_dir_all(&dir)?;
            let file = fs::File::create(dir.join("sweep_summary.csv"))?;
            harness::write_sweep_summary(&outcome.axes, &outcome.rows, BufWriter::new(file))?;
            harness::write_json(&dir.join("sweep.json"), &outcome)?;
            let failures: usize = outcome.rows.iter().map(|r| r.failures).sum();
            println!(
                "{} cells, {} runs, {} failures",
                outcome.rows.len(),
                outcome.runs.len(),
                failures
            );
        }
        Command::CheckTheory { report } => {
            let report = report.as_deref().map(harness::read_report).transpose()?;
            let section = harness::cmd_check_theory(&config, report.as_ref())?;
            fs::create_dir_all(&dir)?;
            harness::write_json(&dir.join("theory.json"), &section)?;
            if let Some(p) = &section.theorem_params {
                println!(
                    "e0 {:.4} m_min {} (vacuous: {})",
                    p.e0, p.m_min, p.m_vacuous
                );
            }
            if let Some(t) = &section.lemma1_trace {
                println!("growth bound {:.4}, baseline: {}", t.bound, t.baseline);
            }
            println!("wrote {}", dir.join("theory.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
