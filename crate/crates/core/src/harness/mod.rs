//! Experiment harness: configuration, seeded end-to-end pipelines, sweeps
//! and report emission. The `plc` binary is a thin wrapper over this module.

mod config;
mod pipeline;
mod report;
mod sweep;

pub use config::{
    ComponentConfig, DataConfig, DataKind, EvalConfig, ModelConfig, ModelKind, NoiseConfig,
    NoiseKind, RunConfig, SweepConfig, TheoryConfig,
};
pub use pipeline::{
    apply_noise, cmd_corrupt, cmd_gen, fill_checks, load_data, read_oracle_spec, read_report,
    run_pipeline, theory_section, write_dataset, write_json, write_run_outputs, LoadedData,
    RunOutcome,
};
pub use report::{
    write_rounds_csv, FinalMetrics, RunReport, SeedPlan, TheoryInputs, TheorySection,
    TrainingSummary, REPORT_VERSION, ROUNDS_HEADER,
};
pub use sweep::{
    cell_config, cell_dir, mean_std, repeat_seed, run_sweep, summarize, sweep_cells,
    write_sweep_summary, SweepCell, SweepOutcome, SweepRow, SweepRun,
};

use crate::error::{Error, Result};
use crate::theory;

/// Theory report for a finished run, or for a fresh PLC run of `config`
/// when no report is given. Inputs missing from the configuration fall back
/// to those recorded in the report.
pub fn cmd_check_theory(config: &RunConfig, report: Option<&RunReport>) -> Result<TheorySection> {
    let Some(report) = report else {
        let outcome = run_pipeline(config, true)?;
        return outcome.report.theory.ok_or_else(|| {
            Error::MissingOracle("theory checks need a binary posterior oracle".into())
        });
    };
    let run_config = RunConfig::from_pairs(&report.config)?;
    if report
        .rounds
        .iter()
        .any(|r| r.purity.is_none() || r.pure_level.is_none())
    {
        return Err(Error::MissingOracle(
            "report rounds lack oracle-backed purity fields".into(),
        ));
    }
    let seeds = SeedPlan::new(&run_config);
    let data = load_data(&run_config, &seeds).map_err(Error::at("data"))?;
    let oracle = data
        .oracle
        .as_ref()
        .filter(|o| o.num_classes() == 2)
        .ok_or_else(|| {
            Error::MissingOracle("theory checks need a binary posterior oracle".into())
        })?;
    let margins = oracle.margins(&data.train.features)?;
    let profile = theory::margin_density(&margins, config.eval.margin_bins)?;
    let recorded = report.theory.as_ref().map(|t| &t.inputs);
    let pick = |given: Option<f64>, old: Option<f64>, source: Option<&String>| match given {
        Some(v) => (Some(v), "config".to_string()),
        None => (old, source.cloned().unwrap_or_else(|| "unavailable".into())),
    };
    let (alpha, alpha_source) = pick(
        config.theory.alpha,
        recorded.and_then(|r| r.alpha),
        recorded.map(|r| &r.alpha_source),
    );
    let (epsilon, epsilon_source) = pick(
        config.theory.epsilon,
        recorded.and_then(|r| r.epsilon),
        recorded.map(|r| &r.epsilon_source),
    );
    let (ell, ell_source) = match config.theory.ell {
        Some(v) => (Some(v), "config".to_string()),
        None => (profile.imbalance, "margin histogram".to_string()),
    };
    let mut section = TheorySection {
        notes: report
            .theory
            .as_ref()
            .map(|t| t.notes.clone())
            .unwrap_or_default(),
        margin_profile: Some(profile),
        consistency_fit: report.theory.as_ref().and_then(|t| t.consistency_fit),
        inputs: TheoryInputs {
            alpha,
            epsilon,
            ell,
            t0: config.theory.t0,
            alpha_source,
            epsilon_source,
            ell_source,
        },
        theorem_params: None,
        theorem_error: None,
        lemma1_trace: None,
        lemma1_error: None,
        lemma1_fraction_after_warmup: None,
        confident_region_purity: report
            .theory
            .as_ref()
            .and_then(|t| t.confident_region_purity),
    };
    fill_checks(
        &mut section,
        &run_config,
        report.command == "run",
        &report.rounds,
    );
    Ok(section)
}
