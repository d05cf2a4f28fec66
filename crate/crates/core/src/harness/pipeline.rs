use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use super::config::{DataKind, ModelKind, NoiseKind, RunConfig};
use super::report::{
    write_rounds_csv, FinalMetrics, RunReport, SeedPlan, TheoryInputs, TheorySection,
    TrainingSummary, REPORT_VERSION,
};
use crate::datagen::{
    make_gaussian_mixture, read_dataset_csv, write_dataset_csv, MixtureSpec, PosteriorOracle,
    Split, WorkingDataset,
};
use crate::error::{Error, Result};
use crate::model::SoftmaxClassifier;
use crate::noise::{
    apply_transition, asymmetric_transition, calibrate_noise_level, corrupt_feature_dependent,
    cyclic_mapping, uniform_transition, NoiseReport, PmdNoiseType, TransitionMatrix,
};
use crate::plc::{self, mean_where, LabelModel, OracleClassifier, PlcHistory, RoundRecord};
use crate::rng::derive_seed;
use crate::theory;

const STREAM_DATA: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_MODEL: u64 = 3;
const STREAM_TRAINING: u64 = 4;

const SAMPLE_NOTE: &str = "level sets are evaluated on sample margins, not population level sets";
const CONDITIONAL_NOTE: &str =
    "growth and theorem checks are conditional on the alpha, epsilon and ell inputs";

impl SeedPlan {
    pub fn new(config: &RunConfig) -> Self {
        let master = config.seed;
        Self {
            master,
            data: derive_seed(master, STREAM_DATA),
            noise: config
                .noise
                .seed
                .unwrap_or_else(|| derive_seed(master, STREAM_NOISE)),
            model: derive_seed(master, STREAM_MODEL),
            training: derive_seed(master, STREAM_TRAINING),
        }
    }
}

/// Train/test data plus the oracle when the source has one.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: WorkingDataset,
    pub test: WorkingDataset,
    pub oracle: Option<PosteriorOracle>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn read_oracle_spec(path: &Path) -> Result<PosteriorOracle> {
    let spec: MixtureSpec = serde_json::from_reader(open(path)?)?;
    PosteriorOracle::new(spec)
}

/// Generates the synthetic sets, or reads them from CSV.
pub fn load_data(config: &RunConfig, seeds: &SeedPlan) -> Result<LoadedData> {
    let data = &config.data;
    if data.kind != DataKind::Csv {
        let spec = data.mixture()?.expect("synthetic source");
        let (train, test, oracle) =
            make_gaussian_mixture(spec, data.n_train, data.n_test, seeds.data)?;
        return Ok(LoadedData {
            train,
            test,
            oracle: Some(oracle),
        });
    }
    let oracle = data
        .oracle_path
        .as_deref()
        .map(read_oracle_spec)
        .transpose()?;
    let classes = oracle.as_ref().map(|o| o.num_classes());
    let train_path = data.train_path.as_deref().expect("validated");
    let test_path = data.test_path.as_deref().expect("validated");
    let train = read_dataset_csv(open(train_path)?, classes, Split::Train)?;
    let mut test = read_dataset_csv(open(test_path)?, classes, Split::Test)?;
    if test.num_classes < train.num_classes {
        test.num_classes = train.num_classes;
    }
    if train.dimension != test.dimension || test.num_classes != train.num_classes {
        return Err(Error::Config(
            "train and test CSVs disagree on dimension or classes".into(),
        ));
    }
    if let Some(o) = &oracle {
        if o.dimension() != train.dimension {
            return Err(Error::DimensionMismatch {
                expected: o.dimension(),
                got: train.dimension,
            });
        }
    }
    Ok(LoadedData {
        train,
        test,
        oracle,
    })
}

fn transition(
    config: &RunConfig,
    kind: NoiseKind,
    classes: usize,
    level: f64,
) -> Result<TransitionMatrix> {
    match kind {
        NoiseKind::Uniform => uniform_transition(classes, level),
        _ => {
            let mapping = config
                .noise
                .mapping
                .clone()
                .unwrap_or_else(|| cyclic_mapping(classes));
            asymmetric_transition(classes, level, &mapping)
        }
    }
}

fn pmd(
    oracle: Option<&PosteriorOracle>,
    train: &WorkingDataset,
    noise_type: PmdNoiseType,
    level: f64,
    seed: u64,
) -> Result<(WorkingDataset, NoiseReport)> {
    let oracle = oracle.ok_or_else(|| {
        Error::MissingOracle("feature-dependent noise needs a posterior oracle".into())
    })?;
    let spec = calibrate_noise_level(oracle, train, noise_type, level)?;
    corrupt_feature_dependent(oracle, train, &spec, seed)
}

/// Applies the configured noise to the training set. Hybrid noise runs the
/// feature-dependent part first and the transition overlay second.
pub fn apply_noise(
    config: &RunConfig,
    oracle: Option<&PosteriorOracle>,
    train: &WorkingDataset,
    seed: u64,
) -> Result<(WorkingDataset, Vec<NoiseReport>)> {
    let noise = &config.noise;
    let c = train.num_classes;
    match noise.kind {
        NoiseKind::None => Ok((train.clone(), Vec::new())),
        NoiseKind::Pmd(t) => {
            let (ds, report) = pmd(oracle, train, t, noise.level, seed)?;
            Ok((ds, vec![report]))
        }
        kind @ (NoiseKind::Uniform | NoiseKind::Asymmetric) => {
            let matrix = transition(config, kind, c, noise.level)?;
            let (ds, report) = apply_transition(train, &matrix, seed)?;
            Ok((ds, vec![report]))
        }
        NoiseKind::Hybrid => {
            let (first, a) = pmd(
                oracle,
                train,
                noise.pmd_type,
                noise.level,
                derive_seed(seed, 1),
            )?;
            let matrix = transition(config, noise.overlay, c, noise.overlay_level)?;
            let (second, b) = apply_transition(&first, &matrix, derive_seed(seed, 2))?;
            Ok((second, vec![a, b]))
        }
    }
}

/// Everything a finished PLC or baseline run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub train: WorkingDataset,
    pub oracle: Option<PosteriorOracle>,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(Error::at(stage))
}

fn train_and_correct<M: LabelModel>(
    model: &mut M,
    config: &RunConfig,
    correct: bool,
    train: &mut WorkingDataset,
    data: &LoadedData,
    seeds: &SeedPlan,
) -> Result<(PlcHistory, Option<Vec<f64>>)> {
    let oracle = data.oracle.as_ref();
    let history = if correct {
        plc::run_plc(
            model,
            train,
            Some(&data.test),
            oracle,
            &config.schedule,
            seeds.training,
        )?
    } else {
        plc::run_standard(
            model,
            train,
            Some(&data.test),
            oracle,
            config.schedule.total_rounds,
            seeds.training,
        )?
    };
    let f1 = if train.num_classes == 2 {
        Some(
            model
                .predict_proba(&train.features)?
                .chunks(2)
                .map(|r| r[1])
                .collect(),
        )
    } else {
        None
    };
    Ok((history, f1))
}

/// Runs the full pipeline: data, noise, training with or without
/// correction, then evaluation and the theory section.
pub fn run_pipeline(config: &RunConfig, correct: bool) -> Result<RunOutcome> {
    let started = Instant::now();
    staged("config", config.validate())?;
    let seeds = SeedPlan::new(config);
    let data = staged("data", load_data(config, &seeds))?;
    let (mut train, noise) = staged(
        "noise",
        apply_noise(config, data.oracle.as_ref(), &data.train, seeds.noise),
    )?;
    let noisy = train.noisy_labels.clone();

    let (history, f1) = match config.model.kind {
        ModelKind::Mlp => {
            let arch = config
                .model
                .architecture(train.dimension, train.num_classes);
            let mut model = staged(
                "model",
                SoftmaxClassifier::new(arch, config.model.train.clone(), seeds.model),
            )?;
            staged(
                "train",
                train_and_correct(&mut model, config, correct, &mut train, &data, &seeds),
            )?
        }
        ModelKind::Oracle => {
            let oracle = data
                .oracle
                .clone()
                .ok_or_else(|| {
                    Error::MissingOracle("model.kind = oracle needs a posterior oracle".into())
                })
                .map_err(Error::at("model"))?;
            let mut model = OracleClassifier { oracle };
            staged(
                "train",
                train_and_correct(&mut model, config, correct, &mut train, &data, &seeds),
            )?
        }
    };

    let margins = match &data.oracle {
        Some(o) if o.num_classes() == 2 => Some(staged("evaluate", o.margins(&train.features))?),
        _ => None,
    };
    let summary = staged(
        "evaluate",
        final_metrics(&history.rounds, &train, &noisy, margins.as_deref()),
    )?;
    let theory = match (&data.oracle, &margins, &f1) {
        (Some(oracle), Some(margins), Some(f1)) => Some(staged(
            "theory",
            theory_section(
                config,
                correct,
                oracle,
                &train,
                margins,
                f1,
                &history.rounds,
            ),
        )?),
        _ => None,
    };
    let training = TrainingSummary {
        rounds: history.rounds.len(),
        first_loss: history.rounds.first().and_then(|r| r.train_loss),
        final_loss: history.rounds.last().and_then(|r| r.train_loss),
        final_train_accuracy: history.rounds.last().map(|r| r.train_accuracy),
    };
    let report = RunReport {
        version: REPORT_VERSION,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        command: if correct { "run" } else { "standard" }.to_string(),
        config: config.to_pairs(),
        seeds,
        noise,
        schedule: correct.then(|| config.schedule.clone()),
        training,
        rounds: history.rounds,
        summary,
        theory,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        report,
        train,
        oracle: data.oracle,
    })
}

fn final_metrics(
    rounds: &[RoundRecord],
    train: &WorkingDataset,
    noisy: &[usize],
    margins: Option<&[f64]>,
) -> Result<FinalMetrics> {
    let bayes = &train.bayes_labels;
    let working = &train.working_labels;
    let corrected = |i: usize| noisy[i] != bayes[i] && working[i] == bayes[i];
    let residual = |i: usize| working[i] != bayes[i];
    let n = train.len();
    Ok(FinalMetrics {
        test_accuracy_bayes: rounds.last().and_then(|r| r.test_accuracy_bayes),
        initial_purity: theory::purity(noisy, bayes)?,
        final_purity: theory::purity(working, bayes)?,
        total_flips: rounds.last().map_or(0, |r| r.cumulative_flips),
        corrected_count: (0..n).filter(|&i| corrected(i)).count(),
        residual_count: (0..n).filter(|&i| residual(i)).count(),
        residual_margin: margins.and_then(|m| mean_where(m, residual)),
        corrected_margin: margins.and_then(|m| mean_where(m, corrected)),
    })
}

/// Margin profile, consistency fit, theorem bounds and growth trace.
pub fn theory_section(
    config: &RunConfig,
    correct: bool,
    oracle: &PosteriorOracle,
    train: &WorkingDataset,
    margins: &[f64],
    f1: &[f64],
    rounds: &[RoundRecord],
) -> Result<TheorySection> {
    let profile = theory::margin_density(margins, config.eval.margin_bins)?;
    let eta1: Vec<f64> = oracle
        .posteriors(&train.features)?
        .chunks(2)
        .map(|r| r[1])
        .collect();
    let fit = theory::fit_consistency(
        f1,
        &eta1,
        &train.working_labels,
        &train.bayes_labels,
        config.theory.fit_quantile,
    )?;
    let t = &config.theory;
    let source = |given: bool, fallback: &str| if given { "config" } else { fallback }.to_string();
    let inputs = TheoryInputs {
        alpha: t.alpha.or(Some(fit.alpha)),
        epsilon: t.epsilon.or(Some(fit.epsilon)),
        ell: t.ell.or(profile.imbalance),
        t0: t.t0,
        alpha_source: source(t.alpha.is_some(), "fit"),
        epsilon_source: source(t.epsilon.is_some(), "fit"),
        ell_source: source(t.ell.is_some(), "margin histogram"),
    };
    let mut section = TheorySection {
        notes: vec![SAMPLE_NOTE.into(), CONDITIONAL_NOTE.into()],
        margin_profile: Some(profile),
        consistency_fit: Some(fit),
        inputs,
        theorem_params: None,
        theorem_error: None,
        lemma1_trace: None,
        lemma1_error: None,
        lemma1_fraction_after_warmup: None,
        confident_region_purity: None,
    };
    fill_checks(&mut section, config, correct, rounds);
    let final_theta = if correct {
        rounds.last().and_then(|r| r.theta)
    } else {
        None
    };
    if let (Some(theta), crate::plc::CorrectionMode::Binary) = (final_theta, config.schedule.mode) {
        let idx: Vec<usize> = (0..margins.len())
            .filter(|&i| margins[i] >= theta)
            .collect();
        if !idx.is_empty() {
            let agree = idx
                .iter()
                .filter(|&&i| train.working_labels[i] == train.bayes_labels[i])
                .count();
            section.confident_region_purity = Some(agree as f64 / idx.len() as f64);
        }
    }
    Ok(section)
}

/// Theorem bounds and growth trace from the section's inputs.
pub fn fill_checks(
    section: &mut TheorySection,
    config: &RunConfig,
    correct: bool,
    rounds: &[RoundRecord],
) {
    let TheoryInputs {
        alpha,
        epsilon,
        ell,
        t0,
        ..
    } = section.inputs.clone();
    let s = &config.schedule;
    match (alpha, epsilon, ell) {
        (Some(a), Some(e), Some(l)) => {
            match theory::theorem_bounds(a, e, l, t0, s.t0, s.beta) {
                Ok(p) => section.theorem_params = Some(p),
                Err(err) => section.theorem_error = Some(err.to_string()),
            }
            match theory::lemma1_trace(rounds, a, e, l) {
                Ok(trace) => {
                    let first = if correct { s.warmup + 1 } else { 0 };
                    section.lemma1_fraction_after_warmup = trace.fraction_met_from(first);
                    section.lemma1_trace = Some(trace);
                }
                Err(err) => section.lemma1_error = Some(err.to_string()),
            }
        }
        _ => {
            let msg = "alpha, epsilon or ell unavailable (empty margin bins leave ell undefined)"
                .to_string();
            section.theorem_error = Some(msg.clone());
            section.lemma1_error = Some(msg);
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, dataset: &WorkingDataset) -> Result<()> {
    let mut w = create(path)?;
    write_dataset_csv(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `rounds.csv` and the corrected training labels.
pub fn write_run_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), &outcome.report)?;
    let mut w = create(&dir.join("rounds.csv"))?;
    write_rounds_csv(&outcome.report.rounds, &mut w)?;
    w.flush()?;
    write_dataset(&dir.join("train_corrected.csv"), &outcome.train)
}

/// Writes `train.csv`, `test.csv` and the oracle sidecar `oracle.json`.
pub fn cmd_gen(config: &RunConfig, dir: &Path) -> Result<LoadedData> {
    staged("config", config.validate())?;
    if config.data.kind == DataKind::Csv {
        return Err(Error::Config("gen needs a synthetic data source".into()));
    }
    let seeds = SeedPlan::new(config);
    let data = staged("data", load_data(config, &seeds))?;
    staged("output", write_generated(dir, &data))?;
    Ok(data)
}

fn write_generated(dir: &Path, data: &LoadedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_dataset(&dir.join("train.csv"), &data.train)?;
    write_dataset(&dir.join("test.csv"), &data.test)?;
    if let Some(o) = &data.oracle {
        write_json(&dir.join("oracle.json"), o.spec())?;
    }
    Ok(())
}

/// Corrupts the training set and writes the updated CSVs plus `noise_report.json`.
pub fn cmd_corrupt(config: &RunConfig, dir: &Path) -> Result<Vec<NoiseReport>> {
    staged("config", config.validate())?;
    let seeds = SeedPlan::new(config);
    let data = staged("data", load_data(config, &seeds))?;
    let (train, reports) = staged(
        "noise",
        apply_noise(config, data.oracle.as_ref(), &data.train, seeds.noise),
    )?;
    let out = LoadedData { train, ..data };
    staged("output", write_generated(dir, &out))?;
    staged(
        "output",
        write_json(&dir.join("noise_report.json"), &reports),
    )?;
    Ok(reports)
}
