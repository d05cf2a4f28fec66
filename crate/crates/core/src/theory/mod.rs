//! Empirical counterparts of the purity theory: label purity, pure level
//! sets, margin-density bounds, the parameter calculator for the final-purity
//! theorem and the per-round growth check of the one-round improvement lemma.
//!
//! Level sets are evaluated on sample margins, never on population level
//! sets. Every check that involves `alpha` or `epsilon` is conditional on
//! those user-supplied (or fitted) inputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::datagen::{PosteriorOracle, WorkingDataset};
use crate::error::{validation, Error, Result};
use crate::plc::{LabelModel, RoundRecord};

/// Fraction of positions where the two label vectors agree.
pub fn purity(working: &[usize], bayes: &[usize]) -> Result<f64> {
    if working.len() != bayes.len() {
        return Err(Error::DimensionMismatch {
            expected: bayes.len(),
            got: working.len(),
        });
    }
    if working.is_empty() {
        return Err(validation("purity of an empty label vector"));
    }
    let agree = working.iter().zip(bayes).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / working.len() as f64)
}

/// Smallest sample margin `e` such that `{x : t(x) >= e}` is pure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PureLevel {
    Level(f64),
    NoPureLevel,
}

impl PureLevel {
    pub fn level(self) -> Option<f64> {
        match self {
            PureLevel::Level(e) => Some(e),
            PureLevel::NoPureLevel => None,
        }
    }
}

/// Indices sorted by margin, largest first; ties keep index order.
pub fn margin_order(margins: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..margins.len()).collect();
    order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));
    order
}

/// Pure level from predictions, given a precomputed [`margin_order`].
pub fn min_pure_level_ordered(
    predicted: &[usize],
    bayes: &[usize],
    margins: &[f64],
    order: &[usize],
) -> PureLevel {
    let Some(k) = order.iter().position(|&i| predicted[i] != bayes[i]) else {
        return PureLevel::Level(0.0);
    };
    let worst = margins[order[k]];
    order[..k]
        .iter()
        .rev()
        .map(|&i| margins[i])
        .find(|&m| m > worst)
        .map_or(PureLevel::NoPureLevel, PureLevel::Level)
}

pub fn min_pure_level_from(
    predicted: &[usize],
    bayes: &[usize],
    margins: &[f64],
) -> Result<PureLevel> {
    if predicted.len() != margins.len() || bayes.len() != margins.len() {
        return Err(Error::DimensionMismatch {
            expected: margins.len(),
            got: predicted.len().min(bayes.len()),
        });
    }
    if margins.is_empty() {
        return Err(validation("pure level of an empty sample"));
    }
    Ok(min_pure_level_ordered(
        predicted,
        bayes,
        margins,
        &margin_order(margins),
    ))
}

/// Pure level of a binary model's predictions `I{f(x) >= 1/2}` on `dataset`.
pub fn min_pure_level<M: LabelModel>(
    model: &M,
    oracle: &PosteriorOracle,
    dataset: &WorkingDataset,
) -> Result<PureLevel> {
    require_binary(oracle)?;
    if dataset.is_empty() {
        return Err(validation("pure level of an empty sample"));
    }
    let probas = model.predict_proba(&dataset.features)?;
    let predicted: Vec<usize> = probas.chunks(2).map(|r| usize::from(r[1] >= 0.5)).collect();
    let margins = oracle.margins(&dataset.features)?;
    min_pure_level_from(&predicted, &dataset.bayes_labels, &margins)
}

fn require_binary(oracle: &PosteriorOracle) -> Result<()> {
    if oracle.num_classes() != 2 {
        return Err(Error::Unsupported(format!(
            "level-set quantities are binary only, oracle has {} classes",
            oracle.num_classes()
        )));
    }
    Ok(())
}

/// Histogram estimate of the margin density on `[0, 1/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginProfile {
    #[serde(skip)]
    pub margins: Vec<f64>,
    pub n: usize,
    pub mean_margin: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
    pub c_low: f64,
    pub c_high: f64,
    /// `c_high / c_low`; `None` when some bin is empty.
    pub imbalance: Option<f64>,
    pub zero_mass_bins: Vec<usize>,
}

pub fn margin_density(margins: &[f64], bins: usize) -> Result<MarginProfile> {
    if bins < 5 {
        return Err(validation(format!("need at least 5 bins, got {bins}")));
    }
    if margins.is_empty() {
        return Err(validation("margin density of an empty sample"));
    }
    if let Some(m) = margins.iter().find(|m| !(0.0..=0.5).contains(*m)) {
        return Err(validation(format!("margin {m} outside [0, 1/2]")));
    }
    let width = 0.5 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &m in margins {
        counts[((m / width) as usize).min(bins - 1)] += 1;
    }
    let n = margins.len();
    let density: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (n as f64 * width))
        .collect();
    let c_low = density.iter().copied().fold(f64::INFINITY, f64::min);
    let c_high = density.iter().copied().fold(0.0, f64::max);
    let zero_mass_bins: Vec<usize> = (0..bins).filter(|&b| counts[b] == 0).collect();
    Ok(MarginProfile {
        margins: margins.to_vec(),
        n,
        mean_margin: margins.iter().sum::<f64>() / n as f64,
        bin_edges: (0..=bins).map(|b| b as f64 * width).collect(),
        counts,
        density,
        c_low,
        c_high,
        imbalance: (c_low > 0.0).then(|| c_high / c_low),
        zero_mass_bins,
    })
}

pub fn margin_profile(
    oracle: &PosteriorOracle,
    features: &[f64],
    bins: usize,
) -> Result<MarginProfile> {
    require_binary(oracle)?;
    margin_density(&oracle.margins(features)?, bins)
}

/// `e0 = max(t0, (alpha + epsilon) / (1 + 2 alpha))`.
pub fn level_set_floor(alpha: f64, epsilon: f64, t0: f64) -> f64 {
    t0.max((alpha + epsilon) / (1.0 + 2.0 * alpha))
}

/// Derived quantities of the theorem's five parameter conditions.
///
/// The theorem statement and its supporting lemma disagree on the bound
/// for `N` and on the cap for `T_end`; both readings are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub alpha: f64,
    pub epsilon: f64,
    pub ell: f64,
    pub t0: f64,
    pub t_initial: f64,
    pub beta: f64,
    pub e0: f64,
    /// Unclamped warm-up bound.
    pub m_raw: f64,
    pub m_min: u64,
    /// The warm-up bound is non-positive whenever condition (1) holds.
    pub m_vacuous: bool,
    pub n_min_theorem_raw: f64,
    pub n_min_theorem: u64,
    /// `None` when `1 - 6 epsilon <= 0`.
    pub n_min_lemma_raw: Option<f64>,
    pub n_min_lemma: Option<u64>,
    pub t_end_bound_theorem: f64,
    pub t_end_bound_lemma: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    pub beta_admissible: bool,
}

fn rounds_at_least(m_min: u64, raw: f64) -> u64 {
    raw.ceil().max(m_min as f64) as u64
}

pub fn theorem_bounds(
    alpha: f64,
    epsilon: f64,
    ell: f64,
    t0: f64,
    t_initial: f64,
    beta: f64,
) -> Result<TheoremParams> {
    let finite = [alpha, epsilon, ell, t0, t_initial, beta]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(validation("theorem inputs must be finite"));
    }
    if alpha <= 0.0 {
        return Err(validation(format!("alpha must be positive, got {alpha}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(validation(format!(
            "epsilon must lie in (0, 1/2), got {epsilon}"
        )));
    }
    if ell < 1.0 {
        return Err(validation(format!("ell must be at least 1, got {ell}")));
    }
    if !(t0 > 0.0 && t0 < 0.5) {
        return Err(validation(format!("t0 must lie in (0, 1/2), got {t0}")));
    }
    if !(t_initial > 0.0 && beta > 0.0) {
        return Err(validation("T0 and beta must be positive"));
    }
    let e0 = level_set_floor(alpha, epsilon, t0);
    if t_initial >= 0.5 - e0 {
        return Err(Error::InfeasibleConfiguration {
            condition: 1,
            detail: format!("T0 = {t_initial} is not below 1/2 - e0 = {}", 0.5 - e0),
        });
    }
    let rate = ell * alpha / epsilon;
    let m_raw = rate * (2.0 * t_initial / (1.0 - 2.0 * e0)).ln();
    let m_min = m_raw.ceil().max(0.0) as u64;
    let n_min_theorem_raw = m_min as f64 + (t_initial / (3.0 * epsilon)).ln() / beta;
    let n_min_lemma_raw = (1.0 - 6.0 * epsilon > 0.0)
        .then(|| m_min as f64 + ((1.0 - 6.0 * epsilon) / (2.0 * t_initial)).ln() / beta);
    let beta_low = epsilon / (alpha * ell);
    let beta_high = 2.0 * epsilon / (alpha * ell);
    Ok(TheoremParams {
        alpha,
        epsilon,
        ell,
        t0,
        t_initial,
        beta,
        e0,
        m_raw,
        m_min,
        m_vacuous: m_raw <= 0.0,
        n_min_theorem_raw,
        n_min_theorem: rounds_at_least(m_min, n_min_theorem_raw),
        n_min_lemma_raw,
        n_min_lemma: n_min_lemma_raw.map(|raw| rounds_at_least(m_min, raw)),
        t_end_bound_theorem: 3.0 * epsilon,
        t_end_bound_lemma: 0.5 - 3.0 * epsilon,
        beta_low,
        beta_high,
        beta_admissible: (beta_low..=beta_high).contains(&beta),
    })
}

/// Verdict for one consecutive pair of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthStatus {
    Met,
    NotMet,
    /// The whole sample is already pure; nothing left to grow.
    Saturated,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub round: usize,
    pub ratio: Option<f64>,
    pub status: GrowthStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityTrace {
    pub alpha: f64,
    pub epsilon: f64,
    pub ell: f64,
    /// Required growth factor `1 + epsilon / (alpha ell)`.
    pub bound: f64,
    /// True for a history without a correction threshold.
    pub baseline: bool,
    pub purity: Vec<f64>,
    pub e_new: Vec<PureLevel>,
    pub residual_margin: Vec<Option<f64>>,
    pub steps: Vec<GrowthStep>,
}

impl PurityTrace {
    /// Share of applicable steps (met or saturated) from round `first` on.
    pub fn fraction_met_from(&self, first: usize) -> Option<f64> {
        let mut applicable = 0usize;
        let mut met = 0usize;
        for step in self.steps.iter().filter(|s| s.round >= first) {
            match step.status {
                GrowthStatus::Met | GrowthStatus::Saturated => {
                    applicable += 1;
                    met += 1;
                }
                GrowthStatus::NotMet => applicable += 1,
                GrowthStatus::NotApplicable => {}
            }
        }
        (applicable > 0).then(|| met as f64 / applicable as f64)
    }
}

/// Realized growth `(1/2 - e_new) / (1/2 - e_prev)` of the pure region
/// between consecutive rounds, checked against `1 + epsilon / (alpha ell)`.
pub fn lemma1_trace(
    rounds: &[RoundRecord],
    alpha: f64,
    epsilon: f64,
    ell: f64,
) -> Result<PurityTrace> {
    if !(alpha > 0.0 && epsilon >= 0.0 && ell >= 1.0) {
        return Err(validation("need alpha > 0, epsilon >= 0 and ell >= 1"));
    }
    let mut purity = Vec::with_capacity(rounds.len());
    let mut e_new = Vec::with_capacity(rounds.len());
    for r in rounds {
        match (r.purity, r.pure_level) {
            (Some(p), Some(e)) => {
                purity.push(p);
                e_new.push(e);
            }
            _ => {
                return Err(Error::MissingOracle(format!(
                    "round {} has no oracle-backed purity fields",
                    r.round
                )))
            }
        }
    }
    let bound = 1.0 + epsilon / (alpha * ell);
    let steps = rounds
        .windows(2)
        .zip(e_new.windows(2))
        .map(|(pair, e)| {
            let (ratio, status) = match (e[0], e[1]) {
                (_, PureLevel::Level(next)) if next == 0.0 => (None, GrowthStatus::Saturated),
                (PureLevel::Level(prev), PureLevel::Level(next)) if prev < 0.5 => {
                    let ratio = (0.5 - next) / (0.5 - prev);
                    let status = if ratio >= bound {
                        GrowthStatus::Met
                    } else {
                        GrowthStatus::NotMet
                    };
                    (Some(ratio), status)
                }
                _ => (None, GrowthStatus::NotApplicable),
            };
            GrowthStep {
                round: pair[1].round,
                ratio,
                status,
            }
        })
        .collect();
    Ok(PurityTrace {
        alpha,
        epsilon,
        ell,
        bound,
        baseline: rounds.iter().all(|r| r.theta.is_none()),
        purity,
        e_new,
        residual_margin: rounds.iter().map(|r| r.residual_margin).collect(),
        steps,
    })
}

/// Fitted level-set consistency constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFit {
    pub alpha: f64,
    pub epsilon: f64,
    /// Quantile of the residuals used as `epsilon`.
    pub quantile: f64,
    pub n: usize,
}

/// Smallest `alpha` reported by [`fit_consistency`].
pub const MIN_FITTED_ALPHA: f64 = 1e-3;

/// For each point, the share of labels disagreeing with the Bayes label
/// among points whose margin is at least as large.
pub fn conditional_impurity(margins: &[f64], labels: &[usize], bayes: &[usize]) -> Vec<f64> {
    let order = margin_order(margins);
    let mut out = vec![0.0; margins.len()];
    let mut wrong = 0usize;
    let mut start = 0;
    while start < order.len() {
        let m = margins[order[start]];
        let mut end = start;
        while end < order.len() && margins[order[end]].total_cmp(&m) == Ordering::Equal {
            wrong += usize::from(labels[order[end]] != bayes[order[end]]);
            end += 1;
        }
        let share = wrong as f64 / end as f64;
        for &i in &order[start..end] {
            out[i] = share;
        }
        start = end;
    }
    out
}

/// Regresses `|f(x) - eta(x)|` on the conditional impurity. The slope
/// (floored at [`MIN_FITTED_ALPHA`], or 1 when the impurity is constant) is
/// `alpha`; `epsilon` is the `quantile` of the residuals, clamped to
/// `[0, 1/2)`.
pub fn fit_consistency(
    f1: &[f64],
    eta1: &[f64],
    labels: &[usize],
    bayes: &[usize],
    quantile: f64,
) -> Result<ConsistencyFit> {
    let n = f1.len();
    if eta1.len() != n || labels.len() != n || bayes.len() != n {
        return Err(validation("fit inputs must have equal lengths"));
    }
    if n < 2 {
        return Err(validation("fit needs at least two points"));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(validation(format!("quantile {quantile} outside [0, 1]")));
    }
    let margins: Vec<f64> = eta1.iter().map(|e| (e - 0.5).abs()).collect();
    let impurity = conditional_impurity(&margins, labels, bayes);
    let error: Vec<f64> = f1.iter().zip(eta1).map(|(f, e)| (f - e).abs()).collect();
    let mean_x = impurity.iter().sum::<f64>() / n as f64;
    let mean_y = error.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in impurity.iter().zip(&error) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    let alpha = if sxx > 0.0 {
        (sxy / sxx).max(MIN_FITTED_ALPHA)
    } else {
        1.0
    };
    let mut residuals: Vec<f64> = impurity
        .iter()
        .zip(&error)
        .map(|(x, y)| y - alpha * x)
        .collect();
    residuals.sort_by(f64::total_cmp);
    let idx = ((n - 1) as f64 * quantile).round() as usize;
    let epsilon = residuals[idx].clamp(0.0, 0.5 - 1e-9);
    Ok(ConsistencyFit {
        alpha,
        epsilon,
        quantile,
        n,
    })
}

#[cfg(test)]
mod tests;
