use plc_core::datagen::{
    make_gaussian_mixture, read_dataset_csv, write_dataset_csv, MixtureSpec, Split,
};
use plc_core::harness::{self, sweep_cells, RunConfig};
use plc_core::model::{Architecture, SoftmaxClassifier, TrainConfig};
use plc_core::noise::{calibrate_noise_level, corrupt_feature_dependent, PmdNoiseType};
use plc_core::plc::{run_plc, run_standard, CorrectionMode, CorrectionSchedule, OracleClassifier};
use plc_core::theory::{lemma1_trace, purity, GrowthStatus};

fn noisy_blob(
    seed: u64,
) -> (
    plc_core::datagen::WorkingDataset,
    plc_core::datagen::WorkingDataset,
    plc_core::datagen::PosteriorOracle,
) {
    let (train, test, oracle) =
        make_gaussian_mixture(MixtureSpec::default_blobs(), 2000, 500, seed).unwrap();
    let spec = calibrate_noise_level(&oracle, &train, PmdNoiseType::TypeI, 0.35).unwrap();
    let (noisy, _) = corrupt_feature_dependent(&oracle, &train, &spec, seed + 1).unwrap();
    (noisy, test, oracle)
}

#[test]
fn oracle_corrections_saturate_the_growth_trace() {
    let (mut train, test, oracle) = noisy_blob(3);
    let before = purity(&train.working_labels, &train.bayes_labels).unwrap();
    let schedule = CorrectionSchedule {
        warmup: 2,
        total_rounds: 8,
        ..CorrectionSchedule::default()
    };
    let mut model = OracleClassifier {
        oracle: oracle.clone(),
    };
    let history = run_plc(
        &mut model,
        &mut train,
        Some(&test),
        Some(&oracle),
        &schedule,
        9,
    )
    .unwrap();
    let after = purity(&train.working_labels, &train.bayes_labels).unwrap();
    assert!(after > before);
    let trace = lemma1_trace(&history.rounds, 1.0, 0.05, 1.2).unwrap();
    assert!(trace
        .steps
        .iter()
        .all(|s| s.status == GrowthStatus::Saturated));
    assert_eq!(
        history.rounds.last().unwrap().test_accuracy_bayes,
        Some(1.0)
    );
}

#[test]
fn correction_beats_the_baseline_on_a_small_blob() {
    let (train, test, oracle) = noisy_blob(5);
    let schedule = CorrectionSchedule {
        warmup: 10,
        total_rounds: 60,
        ..CorrectionSchedule::default()
    };
    let fresh = || {
        SoftmaxClassifier::new(Architecture::default_mlp(2, 2), TrainConfig::default(), 6).unwrap()
    };
    let mut corrected = train.clone();
    run_plc(
        &mut fresh(),
        &mut corrected,
        Some(&test),
        Some(&oracle),
        &schedule,
        7,
    )
    .unwrap();
    let mut baseline = train.clone();
    let history = run_standard(
        &mut fresh(),
        &mut baseline,
        Some(&test),
        Some(&oracle),
        60,
        7,
    )
    .unwrap();
    assert_eq!(baseline.working_labels, train.noisy_labels);
    assert!(history
        .rounds
        .iter()
        .all(|r| r.num_flipped == 0 && r.theta.is_none()));
    let p = purity(&corrected.working_labels, &corrected.bayes_labels).unwrap();
    assert!(p > purity(&train.noisy_labels, &train.bayes_labels).unwrap());
}

#[test]
fn multiclass_rule_runs_on_a_ring() {
    let (train, test, oracle) =
        make_gaussian_mixture(MixtureSpec::ring_of_blobs(3, 3.0, 1.0), 900, 300, 2).unwrap();
    let mut train = train;
    let schedule = CorrectionSchedule {
        mode: CorrectionMode::Multiclass,
        warmup: 3,
        total_rounds: 10,
        ..CorrectionSchedule::default()
    };
    let mut model =
        SoftmaxClassifier::new(Architecture::default_mlp(2, 3), TrainConfig::default(), 1).unwrap();
    let history = run_plc(
        &mut model,
        &mut train,
        Some(&test),
        Some(&oracle),
        &schedule,
        4,
    )
    .unwrap();
    assert_eq!(history.rounds.len(), 10);
    assert!(history.rounds.iter().all(|r| r.threshold_violations == 0));
}

#[test]
fn dataset_csv_round_trip() {
    let (train, _, _) = noisy_blob(8);
    let mut bytes = Vec::new();
    write_dataset_csv(&train, &mut bytes).unwrap();
    let back = read_dataset_csv(bytes.as_slice(), Some(2), Split::Train).unwrap();
    assert_eq!(back.noisy_labels, train.noisy_labels);
    assert_eq!(back.bayes_labels, train.bayes_labels);
    let mut again = Vec::new();
    write_dataset_csv(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn sweep_cells_share_seeds_per_repeat() {
    let config = RunConfig::parse(
        "data.n_train = 200\ndata.n_test = 100\nschedule.rounds = 3\nschedule.warmup = 1\n\
         sweep.schedule.beta = 0.1 | 0.2\nsweep.repeats = 2",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = harness::run_sweep(&config, dir.path()).unwrap();
    assert_eq!(outcome.runs.len(), 4);
    assert_eq!(sweep_cells(&config).len(), 2);
    for run in &outcome.runs {
        assert!(run.error.is_none());
        let twin = outcome
            .runs
            .iter()
            .find(|r| r.repeat == run.repeat && r.cell != run.cell)
            .unwrap();
        assert_eq!(run.seed, twin.seed);
        let report = harness::read_report(
            &harness::cell_dir(dir.path(), run.cell, run.repeat).join("report.json"),
        )
        .unwrap();
        assert_eq!(report.summary.initial_purity, {
            let other = harness::cell_dir(dir.path(), twin.cell, twin.repeat).join("report.json");
            harness::read_report(&other).unwrap().summary.initial_purity
        });
    }
}
