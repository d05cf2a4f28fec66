use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{make_gaussian_mixture, MixtureSpec};
use crate::plc::OracleClassifier;

fn record(
    round: usize,
    purity: Option<f64>,
    pure_level: Option<PureLevel>,
    theta: Option<f64>,
) -> RoundRecord {
    RoundRecord {
        round,
        theta,
        level: theta.map(|t| 0.5 - t),
        num_flipped: 0,
        cumulative_flips: 0,
        train_loss: None,
        train_accuracy: 1.0,
        purity,
        test_accuracy_bayes: None,
        residual_margin: None,
        pure_level,
        threshold_violations: 0,
    }
}

#[test]
fn purity_extremes() {
    assert_eq!(purity(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
    assert_eq!(purity(&[1, 0, 0, 1], &[0, 1, 1, 0]).unwrap(), 0.0);
    assert_eq!(purity(&[1, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert!(purity(&[0], &[0, 1]).is_err());
    assert!(purity(&[], &[]).is_err());
}

#[test]
fn pure_level_hand_example() {
    let margins = [0.4, 0.3, 0.2, 0.1, 0.05];
    let bayes = [1, 0, 1, 0, 1];
    let predicted = [1, 0, 0, 0, 1];
    assert_eq!(
        min_pure_level_from(&predicted, &bayes, &margins).unwrap(),
        PureLevel::Level(0.3)
    );
}

#[test]
fn pure_level_extremes() {
    let margins = [0.05, 0.4, 0.2];
    let bayes = [0, 1, 1];
    assert_eq!(
        min_pure_level_from(&bayes, &bayes, &margins).unwrap(),
        PureLevel::Level(0.0)
    );
    let flipped: Vec<usize> = bayes.iter().map(|y| 1 - y).collect();
    assert_eq!(
        min_pure_level_from(&flipped, &bayes, &margins).unwrap(),
        PureLevel::NoPureLevel
    );
    assert!(min_pure_level_from(&[], &[], &[]).is_err());
}

#[test]
fn pure_level_ties_with_the_disagreement_are_excluded() {
    let margins = [0.4, 0.2, 0.2, 0.1];
    let bayes = [0, 0, 0, 0];
    let predicted = [0, 0, 1, 0];
    assert_eq!(
        min_pure_level_from(&predicted, &bayes, &margins).unwrap(),
        PureLevel::Level(0.4)
    );
}

#[test]
fn pure_level_of_models() {
    let (train, _, oracle) =
        make_gaussian_mixture(MixtureSpec::default_blobs(), 2000, 10, 4).unwrap();
    let model = OracleClassifier {
        oracle: oracle.clone(),
    };
    assert_eq!(
        min_pure_level(&model, &oracle, &train).unwrap(),
        PureLevel::Level(0.0)
    );
    let swapped = MixtureSpec::two_blobs(vec![1.0, 0.0], vec![-1.0, 0.0], 1.0, 0.5);
    let inverse = OracleClassifier {
        oracle: PosteriorOracle::new(swapped).unwrap(),
    };
    assert_eq!(
        min_pure_level(&inverse, &oracle, &train).unwrap(),
        PureLevel::NoPureLevel
    );
}

#[test]
fn uniform_margins_have_unit_imbalance() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let margins: Vec<f64> = (0..200_000).map(|_| rng.random_range(0.0..0.5)).collect();
    let profile = margin_density(&margins, 10).unwrap();
    let ell = profile.imbalance.unwrap();
    assert!((1.0..=1.15).contains(&ell), "{ell}");
    assert!(profile.zero_mass_bins.is_empty());
}

#[test]
fn narrow_support_flags_empty_bins() {
    let margins: Vec<f64> = (0..1000).map(|i| i as f64 * 0.0999 / 1000.0).collect();
    let profile = margin_density(&margins, 10).unwrap();
    assert_eq!(profile.zero_mass_bins, vec![2, 3, 4, 5, 6, 7, 8, 9]);
    assert_eq!(profile.imbalance, None);
    assert_eq!(profile.c_low, 0.0);
}

#[test]
fn margin_density_rejects_bad_input() {
    assert!(margin_density(&[0.1, 0.2], 4).is_err());
    assert!(margin_density(&[], 10).is_err());
    assert!(margin_density(&[0.6], 10).is_err());
}

#[test]
fn margin_density_is_binary_only() {
    let spec = MixtureSpec::ring_of_blobs(3, 2.0, 1.0);
    let (train, _, oracle) = make_gaussian_mixture(spec, 20, 5, 1).unwrap();
    assert!(matches!(
        margin_profile(&oracle, &train.features, 10),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn level_set_floor_examples() {
    assert_relative_eq!(level_set_floor(1e-12, 0.0, 0.1), 0.1, epsilon = 1e-9);
    assert_relative_eq!(level_set_floor(1.0, 0.05, 0.1), 0.35, epsilon = 1e-15);
}

#[test]
fn vacuous_warmup_bound_is_flagged() {
    let p = theorem_bounds(1.0, 0.05, 2.0, 0.1, 0.1, 0.03).unwrap();
    assert_relative_eq!(p.e0, 0.35, epsilon = 1e-15);
    assert_relative_eq!(p.m_raw, 40.0 * (0.2f64 / 0.3).ln(), epsilon = 1e-12);
    assert_eq!(p.m_min, 0);
    assert!(p.m_vacuous);
    assert_relative_eq!(p.t_end_bound_theorem, 0.15, epsilon = 1e-15);
    assert_relative_eq!(p.t_end_bound_lemma, 0.35, epsilon = 1e-15);
    assert_relative_eq!(
        p.n_min_theorem_raw,
        (0.1f64 / 0.15).ln() / 0.03,
        epsilon = 1e-12
    );
    assert_eq!(p.n_min_theorem, 0);
    assert_relative_eq!(
        p.n_min_lemma_raw.unwrap(),
        (0.7f64 / 0.2).ln() / 0.03,
        epsilon = 1e-12
    );
    assert_eq!(p.n_min_lemma, Some(42));
    assert_relative_eq!(p.beta_low, 0.025, epsilon = 1e-15);
    assert_relative_eq!(p.beta_high, 0.05, epsilon = 1e-15);
    assert!(p.beta_admissible);
}

#[test]
fn condition_one_violation() {
    let err = theorem_bounds(1.0, 0.05, 2.0, 0.1, 0.2, 0.1).unwrap_err();
    assert!(matches!(
        err,
        Error::InfeasibleConfiguration { condition: 1, .. }
    ));
}

#[test]
fn theorem_bounds_rejects_bad_inputs() {
    assert!(theorem_bounds(0.0, 0.05, 2.0, 0.1, 0.1, 0.1).is_err());
    assert!(theorem_bounds(1.0, 0.5, 2.0, 0.1, 0.1, 0.1).is_err());
    assert!(theorem_bounds(1.0, 0.05, 0.5, 0.1, 0.1, 0.1).is_err());
    assert!(theorem_bounds(1.0, 0.05, 2.0, 0.6, 0.1, 0.1).is_err());
    assert!(theorem_bounds(1.0, 0.2, 2.0, 0.1, 0.01, 0.1)
        .unwrap()
        .n_min_lemma
        .is_none());
}

#[test]
fn oracle_double_trace_is_saturated() {
    let rounds: Vec<_> = (1..=5)
        .map(|t| record(t, Some(1.0), Some(PureLevel::Level(0.0)), Some(0.4)))
        .collect();
    let trace = lemma1_trace(&rounds, 1.0, 0.05, 2.0).unwrap();
    assert!(trace
        .steps
        .iter()
        .all(|s| s.status == GrowthStatus::Saturated));
    assert_eq!(trace.fraction_met_from(0), Some(1.0));
    assert!(!trace.baseline);
}

#[test]
fn stagnant_trace_meets_bound_only_without_slack() {
    let rounds: Vec<_> = (1..=4)
        .map(|t| record(t, Some(0.8), Some(PureLevel::Level(0.2)), Some(0.4)))
        .collect();
    let trace = lemma1_trace(&rounds, 1.0, 0.05, 2.0).unwrap();
    assert!(trace
        .steps
        .iter()
        .all(|s| s.ratio == Some(1.0) && s.status == GrowthStatus::NotMet));
    let trace = lemma1_trace(&rounds, 1.0, 0.0, 2.0).unwrap();
    assert!(trace.steps.iter().all(|s| s.status == GrowthStatus::Met));
}

#[test]
fn trace_growth_and_missing_levels() {
    let rounds = vec![
        record(1, Some(0.7), Some(PureLevel::NoPureLevel), None),
        record(2, Some(0.7), Some(PureLevel::Level(0.3)), None),
        record(3, Some(0.8), Some(PureLevel::Level(0.1)), None),
    ];
    let trace = lemma1_trace(&rounds, 1.0, 0.05, 2.0).unwrap();
    assert_eq!(trace.steps[0].status, GrowthStatus::NotApplicable);
    assert_relative_eq!(trace.steps[1].ratio.unwrap(), 2.0, epsilon = 1e-12);
    assert_eq!(trace.steps[1].status, GrowthStatus::Met);
    assert!(trace.baseline);
    assert_eq!(trace.fraction_met_from(3), Some(1.0));
    assert_eq!(trace.fraction_met_from(10), None);
}

#[test]
fn trace_without_oracle_fields() {
    let rounds = vec![record(1, None, None, Some(0.4))];
    assert!(matches!(
        lemma1_trace(&rounds, 1.0, 0.05, 2.0),
        Err(Error::MissingOracle(_))
    ));
}

#[test]
fn conditional_impurity_hand_example() {
    let margins = [0.4, 0.3, 0.3, 0.1];
    let labels = [0, 1, 0, 1];
    let bayes = [0, 0, 0, 0];
    let imp = conditional_impurity(&margins, &labels, &bayes);
    assert_eq!(imp, vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 0.5]);
}

#[test]
fn fit_recovers_linear_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5000;
    let eta1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let bayes: Vec<usize> = eta1.iter().map(|&e| usize::from(e >= 0.5)).collect();
    let labels: Vec<usize> = bayes
        .iter()
        .map(|&b| if rng.random_bool(0.2) { 1 - b } else { b })
        .collect();
    let margins: Vec<f64> = eta1.iter().map(|e| (e - 0.5).abs()).collect();
    let imp = conditional_impurity(&margins, &labels, &bayes);
    let f1: Vec<f64> = eta1
        .iter()
        .zip(&imp)
        .map(|(e, i)| e + 0.5 * i + 0.02)
        .collect();
    let fit = fit_consistency(&f1, &eta1, &labels, &bayes, 1.0).unwrap();
    assert_relative_eq!(fit.alpha, 0.5, epsilon = 1e-9);
    assert_relative_eq!(fit.epsilon, 0.02, epsilon = 1e-9);
}

#[test]
fn fit_of_exact_model_has_zero_epsilon() {
    let eta1 = [0.1, 0.4, 0.7, 0.95];
    let bayes = [0, 0, 1, 1];
    let fit = fit_consistency(&eta1, &eta1, &[1, 0, 1, 1], &bayes, 1.0).unwrap();
    assert_eq!(fit.epsilon, 0.0);
    assert_eq!(fit.alpha, MIN_FITTED_ALPHA);
}

proptest! {
    #[test]
    fn purity_is_permutation_invariant(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..50),
        shift in 0usize..50,
    ) {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let mut ra = a.clone();
        let mut rb = b.clone();
        ra.rotate_left(shift % a.len());
        rb.rotate_left(shift % b.len());
        ra.reverse();
        rb.reverse();
        prop_assert_eq!(purity(&a, &b).unwrap(), purity(&ra, &rb).unwrap());
    }

    #[test]
    fn fixing_a_wrong_prediction_never_raises_the_level(
        rows in prop::collection::vec((0.0f64..=0.5, 0usize..2, 0usize..2), 1..40),
        pick in 0usize..40,
    ) {
        let margins: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let bayes: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let mut predicted: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let wrong: Vec<usize> = (0..rows.len()).filter(|&i| predicted[i] != bayes[i]).collect();
        prop_assume!(!wrong.is_empty());
        let before = min_pure_level_from(&predicted, &bayes, &margins).unwrap();
        predicted[wrong[pick % wrong.len()]] = bayes[wrong[pick % wrong.len()]];
        let after = min_pure_level_from(&predicted, &bayes, &margins).unwrap();
        match (before, after) {
            (PureLevel::Level(b), PureLevel::Level(a)) => prop_assert!(a <= b),
            (PureLevel::Level(_), PureLevel::NoPureLevel) => prop_assert!(false, "level lost"),
            _ => {}
        }
    }

    #[test]
    fn histogram_mass_is_one(
        margins in prop::collection::vec(0.0f64..=0.5, 1..300),
        bins in 5usize..40,
    ) {
        let p = margin_density(&margins, bins).unwrap();
        let width = p.bin_edges[1] - p.bin_edges[0];
        let mass: f64 = p.density.iter().map(|d| d * width).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert!(p.c_low <= p.c_high);
        if let Some(ell) = p.imbalance {
            prop_assert!(ell >= 1.0);
        }
    }

    #[test]
    fn non_increasing_levels_never_shrink(levels in prop::collection::vec(0.0f64..0.5, 2..30)) {
        let mut sorted = levels.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let rounds: Vec<_> = sorted
            .iter()
            .enumerate()
            .map(|(i, &e)| record(i + 1, Some(0.5), Some(PureLevel::Level(e)), None))
            .collect();
        let trace = lemma1_trace(&rounds, 1.0, 0.1, 1.5).unwrap();
        for s in &trace.steps {
            if let Some(r) = s.ratio {
                prop_assert!(r >= 1.0);
            }
        }
    }
}
