//! Progressive label correction.
//!
//! Every round trains the model once on the current working labels, then
//! flips the labels the model is confident about, then advances the
//! threshold schedule. Binary mode flips to `I{f(x) >= 1/2}` whenever
//! `|f(x) - 1/2| >= theta` with `theta = 1/2 - T`. Multi-class mode flips to
//! the predicted class `h` whenever `log f_h - log f_label >= -log r`, i.e.
//! `f_label <= r * f_h`. Rounds without a single flip after warm-up relax the
//! schedule: `T <- min(T (1 + beta), T_end)` (resp. `r`).

mod schedule;

pub use schedule::{schedule_step, CorrectionMode, CorrectionSchedule, PlcState};

use serde::{Deserialize, Serialize};

use crate::datagen::{argmax, PosteriorOracle, WorkingDataset};
use crate::error::{Error, Result};
use crate::model::{SoftmaxClassifier, TrainTrace};
use crate::rng;
use crate::theory::{self, PureLevel};

/// Probability floor applied before taking logs in the multi-class rule.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Anything that can be trained for one round on labels and then score points.
pub trait LabelModel {
    fn num_classes(&self) -> usize;

    /// One round of (continued) training on `labels`.
    fn fit_round(&mut self, features: &[f64], labels: &[usize], seed: u64) -> Result<TrainTrace>;

    /// Row-major `n x C` class probabilities.
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>>;
}

impl LabelModel for SoftmaxClassifier {
    fn num_classes(&self) -> usize {
        SoftmaxClassifier::num_classes(self)
    }

    fn fit_round(&mut self, features: &[f64], labels: &[usize], seed: u64) -> Result<TrainTrace> {
        let epochs = self.config.epochs_per_round;
        self.train(features, labels, epochs, seed)
    }

    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        SoftmaxClassifier::predict_proba(self, features)
    }
}

/// A frozen classifier that returns the exact posterior. Training is a no-op.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    pub oracle: PosteriorOracle,
}

impl LabelModel for OracleClassifier {
    fn num_classes(&self) -> usize {
        self.oracle.num_classes()
    }

    fn fit_round(&mut self, _: &[f64], _: &[usize], _: u64) -> Result<TrainTrace> {
        Ok(TrainTrace::default())
    }

    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.oracle.posteriors(features)
    }
}

/// Binary correction pass. `probas[i]` is `f(x_i)`, the probability of class 1.
/// Returns the number of labels whose value changed.
pub fn correct_once_binary(probas: &[f64], labels: &mut [usize], theta: f64) -> usize {
    let mut flipped = 0;
    for (f, label) in probas.iter().zip(labels.iter_mut()) {
        if (f - 0.5).abs() >= theta {
            let predicted = usize::from(*f >= 0.5);
            if *label != predicted {
                *label = predicted;
                flipped += 1;
            }
        }
    }
    flipped
}

/// Multi-class correction pass over a row-major `n x C` probability matrix.
pub fn correct_once_multiclass(
    probas: &[f64],
    num_classes: usize,
    labels: &mut [usize],
    ratio: f64,
) -> usize {
    let cutoff = -ratio.ln();
    let mut flipped = 0;
    for (row, label) in probas.chunks(num_classes).zip(labels.iter_mut()) {
        let h = argmax(row);
        if h == *label {
            continue;
        }
        let top = row[h].max(PROBABILITY_FLOOR);
        let current = row[*label].max(PROBABILITY_FLOOR);
        let gap = top.ln() - current.ln();
        if gap > 0.0 && gap >= cutoff {
            *label = h;
            flipped += 1;
        }
    }
    flipped
}

/// Instrumentation for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Binary: `theta = 1/2 - T`. Multi-class: the log-gap threshold `-ln r`.
    /// `None` for the uncorrected baseline.
    pub theta: Option<f64>,
    /// Binary: `T`. Multi-class: `r`.
    pub level: Option<f64>,
    pub num_flipped: usize,
    pub cumulative_flips: usize,
    pub train_loss: Option<f64>,
    /// Model predictions against the labels it was trained on this round.
    pub train_accuracy: f64,
    /// Working labels against Bayes labels, after this round's correction.
    pub purity: Option<f64>,
    pub test_accuracy_bayes: Option<f64>,
    /// Mean margin of working labels that still disagree with the Bayes labels.
    pub residual_margin: Option<f64>,
    /// Smallest empirical level set that is pure for this round's model.
    pub pure_level: Option<PureLevel>,
    /// Flips that do not satisfy the threshold rule (always 0 unless broken).
    pub threshold_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlcHistory {
    pub rounds: Vec<RoundRecord>,
    pub final_state: Option<PlcState>,
}

/// Oracle- and test-set-derived quantities computed once per run.
struct Instruments<'a> {
    test: Option<&'a WorkingDataset>,
    margins: Option<Vec<f64>>,
    margin_order: Option<Vec<usize>>,
}

impl<'a> Instruments<'a> {
    fn new(
        train: &WorkingDataset,
        test: Option<&'a WorkingDataset>,
        oracle: Option<&PosteriorOracle>,
    ) -> Result<Self> {
        let margins = oracle.map(|o| o.margins(&train.features)).transpose()?;
        let margin_order = margins.as_ref().map(|m| theory::margin_order(m));
        Ok(Self {
            test,
            margins,
            margin_order,
        })
    }

    fn record<M: LabelModel>(
        &self,
        model: &M,
        round: usize,
        train: &WorkingDataset,
        predictions: &[usize],
        trained_on: &[usize],
        trace: &TrainTrace,
    ) -> Result<RoundRecord> {
        let n = train.len().max(1) as f64;
        let train_accuracy = predictions
            .iter()
            .zip(trained_on)
            .filter(|(a, b)| a == b)
            .count() as f64
            / n;
        let test_accuracy_bayes = match self.test {
            Some(test) => {
                let c = model.num_classes();
                let p = model.predict_proba(&test.features)?;
                let hits = p
                    .chunks(c)
                    .zip(&test.bayes_labels)
                    .filter(|(row, b)| argmax(row) == **b)
                    .count();
                Some(hits as f64 / test.len().max(1) as f64)
            }
            None => None,
        };
        let (purity, residual_margin, pure_level) = match (&self.margins, &self.margin_order) {
            (Some(margins), Some(order)) => {
                let purity = theory::purity(&train.working_labels, &train.bayes_labels)?;
                let residual = mean_where(margins, |i| {
                    train.working_labels[i] != train.bayes_labels[i]
                });
                let pure = theory::min_pure_level_ordered(
                    predictions,
                    &train.bayes_labels,
                    margins,
                    order,
                );
                (Some(purity), residual, Some(pure))
            }
            _ => (None, None, None),
        };
        Ok(RoundRecord {
            round,
            theta: None,
            level: None,
            num_flipped: 0,
            cumulative_flips: 0,
            train_loss: trace.epoch_loss.last().copied(),
            train_accuracy,
            purity,
            test_accuracy_bayes,
            residual_margin,
            pure_level,
            threshold_violations: 0,
        })
    }
}

pub(crate) fn mean_where(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, v) in values.iter().enumerate() {
        if keep(i) {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn predicted_classes(probas: &[f64], c: usize) -> Vec<usize> {
    probas
        .chunks(c)
        .map(|row| {
            if c == 2 {
                usize::from(row[1] >= 0.5)
            } else {
                argmax(row)
            }
        })
        .collect()
}

/// Counts changed labels that the active rule would not have produced.
fn audit_flips(
    mode: CorrectionMode,
    probas: &[f64],
    c: usize,
    before: &[usize],
    after: &[usize],
    threshold: f64,
) -> usize {
    let mut violations = 0;
    for i in 0..before.len() {
        if before[i] == after[i] {
            continue;
        }
        let row = &probas[i * c..(i + 1) * c];
        let ok = match mode {
            CorrectionMode::Binary => {
                let f = row[1];
                (f - 0.5).abs() >= threshold && after[i] == usize::from(f >= 0.5)
            }
            CorrectionMode::Multiclass => {
                let h = argmax(row);
                let old = row[before[i]].max(PROBABILITY_FLOOR);
                after[i] == h
                    && row[h] > row[before[i]]
                    && old <= threshold * row[h].max(PROBABILITY_FLOOR) * (1.0 + 1e-12)
            }
        };
        if !ok {
            violations += 1;
        }
    }
    violations
}

fn check_model(model_classes: usize, train: &WorkingDataset) -> Result<()> {
    if model_classes != train.num_classes {
        return Err(Error::Config(format!(
            "model has {model_classes} outputs, dataset has {} classes",
            train.num_classes
        )));
    }
    train.validate()
}

/// Runs the progressive correction loop for `schedule.total_rounds` rounds,
/// updating `train.working_labels` in place.
pub fn run_plc<M: LabelModel>(
    model: &mut M,
    train: &mut WorkingDataset,
    test: Option<&WorkingDataset>,
    oracle: Option<&PosteriorOracle>,
    schedule: &CorrectionSchedule,
    seed: u64,
) -> Result<PlcHistory> {
    schedule.validate()?;
    check_model(model.num_classes(), train)?;
    if schedule.mode == CorrectionMode::Binary && train.num_classes != 2 {
        return Err(Error::Config(format!(
            "binary correction needs two classes, dataset has {}",
            train.num_classes
        )));
    }
    let c = train.num_classes;
    let instruments = Instruments::new(train, test, oracle)?;
    let mut state = PlcState::initial(schedule);
    let mut rounds = Vec::with_capacity(schedule.total_rounds);
    for t in 1..=schedule.total_rounds {
        let trained_on = train.working_labels.clone();
        let trace = model.fit_round(
            &train.features,
            &trained_on,
            rng::derive_seed(seed, t as u64),
        )?;
        let probas = model.predict_proba(&train.features)?;
        let predictions = predicted_classes(&probas, c);

        let threshold = state.threshold;
        let correct = schedule.correct_during_warmup || t > schedule.warmup;
        let flipped = if !correct {
            0
        } else {
            match schedule.mode {
                CorrectionMode::Binary => {
                    let f1: Vec<f64> = probas.chunks(2).map(|r| r[1]).collect();
                    correct_once_binary(&f1, &mut train.working_labels, threshold)
                }
                CorrectionMode::Multiclass => {
                    correct_once_multiclass(&probas, c, &mut train.working_labels, threshold)
                }
            }
        };
        let violations = audit_flips(
            schedule.mode,
            &probas,
            c,
            &trained_on,
            &train.working_labels,
            threshold,
        );
        let theta_used = state.theta(schedule.mode);
        let level_used = state.level;
        state = schedule_step(&state, flipped, schedule);

        let mut record = instruments.record(model, t, train, &predictions, &trained_on, &trace)?;
        record.theta = Some(theta_used);
        record.level = Some(level_used);
        record.num_flipped = flipped;
        record.cumulative_flips = state.cumulative_flips;
        record.threshold_violations = violations;
        rounds.push(record);
    }
    Ok(PlcHistory {
        rounds,
        final_state: Some(state),
    })
}

/// The no-correction baseline: the same number of training rounds on the
/// noisy labels, with identical instrumentation.
pub fn run_standard<M: LabelModel>(
    model: &mut M,
    train: &mut WorkingDataset,
    test: Option<&WorkingDataset>,
    oracle: Option<&PosteriorOracle>,
    total_rounds: usize,
    seed: u64,
) -> Result<PlcHistory> {
    check_model(model.num_classes(), train)?;
    let c = train.num_classes;
    let instruments = Instruments::new(train, test, oracle)?;
    let mut rounds = Vec::with_capacity(total_rounds);
    for t in 1..=total_rounds {
        let trace = model.fit_round(
            &train.features,
            &train.working_labels,
            rng::derive_seed(seed, t as u64),
        )?;
        let probas = model.predict_proba(&train.features)?;
        let predictions = predicted_classes(&probas, c);
        let labels = train.working_labels.clone();
        rounds.push(instruments.record(model, t, train, &predictions, &labels, &trace)?);
    }
    Ok(PlcHistory {
        rounds,
        final_state: None,
    })
}

#[cfg(test)]
mod tests;
