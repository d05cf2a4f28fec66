use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::datagen::{make_gaussian_mixture, MixtureSpec};
use crate::model::{Architecture, TrainConfig};
use crate::noise::{calibrate_noise_level, corrupt_feature_dependent, PmdNoiseType};

fn binary_schedule(warmup: usize, total: usize) -> CorrectionSchedule {
    CorrectionSchedule {
        warmup,
        total_rounds: total,
        ..CorrectionSchedule::default()
    }
}

fn noisy_blob(n: usize, seed: u64) -> (WorkingDataset, WorkingDataset, PosteriorOracle) {
    let (train, test, oracle) =
        make_gaussian_mixture(MixtureSpec::default_blobs(), n, n / 2, seed).unwrap();
    let spec = calibrate_noise_level(&oracle, &train, PmdNoiseType::TypeI, 0.35).unwrap();
    let (train, _) = corrupt_feature_dependent(&oracle, &train, &spec, seed + 1).unwrap();
    (train, test, oracle)
}

#[test]
fn binary_hand_example() {
    let mut labels = vec![0, 0, 1];
    let flipped = correct_once_binary(&[0.99, 0.45, 0.02], &mut labels, 0.4);
    assert_eq!(labels, vec![1, 0, 0]);
    assert_eq!(flipped, 2);
}

#[test]
fn binary_no_confident_point() {
    let mut labels = vec![1, 0, 1];
    assert_eq!(correct_once_binary(&[0.45, 0.55, 0.3], &mut labels, 0.3), 0);
    assert_eq!(labels, vec![1, 0, 1]);
}

#[test]
fn binary_zero_threshold_copies_predictions() {
    let probas = [0.9, 0.1, 0.5, 0.49];
    let mut labels = vec![0, 0, 0, 1];
    assert_eq!(correct_once_binary(&probas, &mut labels, 0.0), 3);
    assert_eq!(labels, vec![1, 0, 1, 0]);
}

#[test]
fn multiclass_hand_example() {
    let row = [0.70, 0.20, 0.10];
    let mut labels = vec![1];
    assert_eq!(correct_once_multiclass(&row, 3, &mut labels, 0.3), 1);
    assert_eq!(labels, vec![0]);
    let mut labels = vec![1];
    assert_eq!(correct_once_multiclass(&row, 3, &mut labels, 0.25), 0);
    assert_eq!(labels, vec![1]);
}

#[test]
fn multiclass_agreement_never_flips() {
    let probas = [0.6, 0.3, 0.1, 0.2, 0.5, 0.3];
    let mut labels = vec![0, 1];
    assert_eq!(correct_once_multiclass(&probas, 3, &mut labels, 1.0), 0);
}

#[test]
fn multiclass_unit_ratio_flips_disagreements_but_not_ties() {
    let probas = [0.6, 0.3, 0.1, 0.4, 0.4, 0.2];
    let mut labels = vec![2, 1];
    assert_eq!(correct_once_multiclass(&probas, 3, &mut labels, 1.0), 1);
    assert_eq!(labels, vec![0, 1]);
}

#[test]
fn multiclass_zero_probability_is_floored() {
    let probas = [1.0, 0.0];
    let mut labels = vec![1];
    assert_eq!(correct_once_multiclass(&probas, 2, &mut labels, 1e-6), 1);
    assert_eq!(labels, vec![0]);
}

#[test]
fn schedule_recurrence() {
    let schedule = CorrectionSchedule {
        warmup: 1,
        ..CorrectionSchedule::default()
    };
    let mut state = PlcState::initial(&schedule);
    for _ in 0..3 {
        state = schedule_step(&state, 0, &schedule);
    }
    assert_relative_eq!(state.level, 0.1331, epsilon = 1e-12);
    assert_relative_eq!(state.threshold, 0.3669, epsilon = 1e-12);
    assert_eq!(state.round, 3);
}

#[test]
fn schedule_frozen_during_warmup() {
    let schedule = binary_schedule(5, 10);
    let start = PlcState::initial(&schedule);
    let mut state = start;
    for t in 1..5 {
        state = schedule_step(&state, 0, &schedule);
        assert_eq!(state.round, t);
        assert_eq!(
            (state.level, state.threshold),
            (start.level, start.threshold)
        );
    }
    state = schedule_step(&state, 0, &schedule);
    assert!(state.level > start.level);
}

#[test]
fn schedule_caps_at_end() {
    let schedule = binary_schedule(0, 10);
    let state = PlcState {
        level: schedule.t_end,
        threshold: 0.5 - schedule.t_end,
        ..PlcState::initial(&schedule)
    };
    let next = schedule_step(&state, 0, &schedule);
    assert_eq!(next.level, schedule.t_end);
}

#[test]
fn schedule_holds_while_flipping() {
    let schedule = binary_schedule(0, 10);
    let state = PlcState::initial(&schedule);
    let next = schedule_step(&state, 7, &schedule);
    assert_eq!(next.level, state.level);
    assert_eq!(next.cumulative_flips, 7);
}

#[test]
fn multiclass_schedule_grows_ratio() {
    let schedule = CorrectionSchedule {
        mode: CorrectionMode::Multiclass,
        warmup: 0,
        ..CorrectionSchedule::default()
    };
    let state = schedule_step(&PlcState::initial(&schedule), 0, &schedule);
    assert_relative_eq!(state.threshold, 0.33, epsilon = 1e-12);
    assert!(
        state.theta(CorrectionMode::Multiclass)
            < PlcState::initial(&schedule).theta(CorrectionMode::Multiclass)
    );
}

#[test]
fn invalid_schedules() {
    let bad = [
        CorrectionSchedule {
            t0: 0.5,
            ..Default::default()
        },
        CorrectionSchedule {
            t_end: 0.05,
            ..Default::default()
        },
        CorrectionSchedule {
            beta: 0.0,
            ..Default::default()
        },
        CorrectionSchedule {
            warmup: 200,
            ..Default::default()
        },
        CorrectionSchedule {
            mode: CorrectionMode::Multiclass,
            r_end: 1.2,
            ..Default::default()
        },
    ];
    for schedule in bad {
        assert!(
            matches!(schedule.validate(), Err(Error::Config(_))),
            "{schedule:?}"
        );
    }
    CorrectionSchedule::default().validate().unwrap();
}

#[test]
fn oracle_classifier_corrects_confident_region() {
    let (mut train, _, oracle) = noisy_blob(4000, 7);
    let mut model = OracleClassifier {
        oracle: oracle.clone(),
    };
    let schedule = CorrectionSchedule {
        t0: 0.4,
        warmup: 1,
        total_rounds: 1,
        ..Default::default()
    };
    run_plc(&mut model, &mut train, None, Some(&oracle), &schedule, 1).unwrap();
    let margins = oracle.margins(&train.features).unwrap();
    let mut checked = 0;
    for i in 0..train.len() {
        if margins[i] >= 0.1 {
            assert_eq!(train.working_labels[i], train.bayes_labels[i]);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn no_correction_when_warmup_fills_the_run() {
    let (mut train, _, oracle) = noisy_blob(600, 3);
    let before = train.working_labels.clone();
    let mut model =
        SoftmaxClassifier::new(Architecture::default_mlp(2, 2), TrainConfig::default(), 5).unwrap();
    let schedule = CorrectionSchedule {
        warmup: 4,
        total_rounds: 4,
        correct_during_warmup: false,
        ..Default::default()
    };
    let history = run_plc(&mut model, &mut train, None, Some(&oracle), &schedule, 9).unwrap();
    assert_eq!(train.working_labels, before);
    assert_eq!(history.rounds.len(), 4);
    assert!(history.rounds.iter().all(|r| r.num_flipped == 0));
}

#[test]
fn binary_mode_rejects_multiclass_data() {
    let spec = MixtureSpec::ring_of_blobs(3, 3.0, 1.0);
    let (mut train, _, oracle) = make_gaussian_mixture(spec, 50, 10, 1).unwrap();
    let mut model = OracleClassifier { oracle };
    let err = run_plc(
        &mut model,
        &mut train,
        None,
        None,
        &binary_schedule(1, 2),
        0,
    )
    .unwrap_err();
    assert!(err.is_config_error());
}

#[test]
fn multiclass_run_with_oracle_double() {
    let spec = MixtureSpec::ring_of_blobs(4, 3.0, 1.0);
    let (mut train, test, oracle) = make_gaussian_mixture(spec, 800, 200, 2).unwrap();
    train.working_labels = train.working_labels.iter().map(|y| (y + 1) % 4).collect();
    let mut model = OracleClassifier {
        oracle: oracle.clone(),
    };
    let schedule = CorrectionSchedule {
        mode: CorrectionMode::Multiclass,
        warmup: 1,
        total_rounds: 5,
        ..Default::default()
    };
    let history = run_plc(&mut model, &mut train, Some(&test), None, &schedule, 0).unwrap();
    assert!(history.rounds[0].num_flipped > 0);
    assert!(history.rounds.iter().all(|r| r.threshold_violations == 0));
    assert!(history.rounds.iter().all(|r| r.purity.is_none()));
    assert_eq!(history.rounds[0].test_accuracy_bayes, Some(1.0));
    assert!(train.working_labels.iter().all(|&y| y < 4));
}

#[test]
fn short_run_invariants_and_determinism() {
    let run = || {
        let (mut train, test, oracle) = noisy_blob(1000, 11);
        let mut model =
            SoftmaxClassifier::new(Architecture::default_mlp(2, 2), TrainConfig::default(), 3)
                .unwrap();
        let schedule = binary_schedule(3, 30);
        let h = run_plc(
            &mut model,
            &mut train,
            Some(&test),
            Some(&oracle),
            &schedule,
            4,
        )
        .unwrap();
        (h, train.working_labels)
    };
    let (a, labels_a) = run();
    let (b, labels_b) = run();
    assert_eq!(a, b);
    assert_eq!(labels_a, labels_b);
    let schedule = binary_schedule(3, 30);
    for w in a.rounds.windows(2) {
        assert!(w[1].theta.unwrap() <= w[0].theta.unwrap());
        assert!(w[1].level.unwrap() >= w[0].level.unwrap());
    }
    for r in &a.rounds {
        assert!(r.level.unwrap() <= schedule.t_end);
        assert_eq!(r.threshold_violations, 0);
        let p = r.purity.unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    let total: usize = a.rounds.iter().map(|r| r.num_flipped).sum();
    assert_eq!(a.rounds.last().unwrap().cumulative_flips, total);
}

#[test]
fn standard_baseline_keeps_labels() {
    let (mut train, test, oracle) = noisy_blob(500, 5);
    let before = train.working_labels.clone();
    let mut model =
        SoftmaxClassifier::new(Architecture::default_mlp(2, 2), TrainConfig::default(), 3).unwrap();
    let h = run_standard(&mut model, &mut train, Some(&test), Some(&oracle), 6, 2).unwrap();
    assert_eq!(h.rounds.len(), 6);
    assert_eq!(train.working_labels, before);
    assert!(h
        .rounds
        .iter()
        .all(|r| r.theta.is_none() && r.num_flipped == 0));
    assert!(h.final_state.is_none());
}

proptest! {
    #[test]
    fn binary_correction_is_idempotent(
        probas in prop::collection::vec(0.0f64..=1.0, 1..60),
        bits in prop::collection::vec(any::<bool>(), 60),
        theta in 0.0f64..=0.5,
    ) {
        let mut labels: Vec<usize> = bits[..probas.len()].iter().map(|&b| usize::from(b)).collect();
        let original = labels.clone();
        let flipped = correct_once_binary(&probas, &mut labels, theta);
        let changed = labels.iter().zip(&original).filter(|(a, b)| a != b).count();
        prop_assert_eq!(flipped, changed);
        prop_assert_eq!(correct_once_binary(&probas, &mut labels, theta), 0);
        for (i, &f) in probas.iter().enumerate() {
            if labels[i] != original[i] {
                prop_assert_eq!(labels[i], usize::from(f >= 0.5));
            }
        }
    }

    #[test]
    fn multiclass_correction_is_idempotent(
        raw in prop::collection::vec(0.0f64..1.0, 4 * 30),
        seeds in prop::collection::vec(0usize..4, 30),
        ratio in 0.01f64..=1.0,
    ) {
        let probas: Vec<f64> = raw
            .chunks(4)
            .flat_map(|row| {
                let s: f64 = row.iter().sum::<f64>() + 1e-9;
                row.iter().map(move |v| (v + 1e-9 / 4.0) / s).collect::<Vec<_>>()
            })
            .collect();
        let mut labels = seeds.clone();
        correct_once_multiclass(&probas, 4, &mut labels, ratio);
        prop_assert!(labels.iter().all(|&y| y < 4));
        prop_assert_eq!(correct_once_multiclass(&probas, 4, &mut labels, ratio), 0);
    }

    #[test]
    fn schedule_is_monotone(
        flips in prop::collection::vec(0usize..3, 1..80),
        warmup in 0usize..10,
        beta in 0.01f64..1.0,
    ) {
        let schedule = CorrectionSchedule { warmup, beta, total_rounds: 100, ..Default::default() };
        let mut state = PlcState::initial(&schedule);
        for f in flips {
            let next = schedule_step(&state, f, &schedule);
            prop_assert!(next.level >= state.level);
            prop_assert!(next.threshold <= state.threshold);
            prop_assert!(next.level <= schedule.t_end);
            prop_assert!((next.threshold - (0.5 - next.level)).abs() < 1e-15);
            state = next;
        }
    }
}
