//! Label-noise models.
//!
//! Feature-dependent noise moves a label from the most confident class `u_x`
//! to the runner-up `s_x` with probability `clip(multiplier * tau(gap))`,
//! where `gap = eta_u(x) - eta_s(x)` and `tau` is one of the three PMD noise
//! functions. Transition-matrix noise resamples each label from a row of a
//! row-stochastic matrix and can be overlaid on top of feature-dependent noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{categorical_inverse, top_two, PosteriorOracle, WorkingDataset};
use crate::error::{validation, Error, Result};
use crate::{par, rng};

const DOMAIN_PMD: u64 = 101;
const DOMAIN_TRANSITION: u64 = 102;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PmdNoiseType {
    #[serde(rename = "type1")]
    TypeI,
    #[serde(rename = "type2")]
    TypeII,
    #[serde(rename = "type3")]
    TypeIII,
}

impl PmdNoiseType {
    pub fn name(self) -> &'static str {
        match self {
            PmdNoiseType::TypeI => "type1",
            PmdNoiseType::TypeII => "type2",
            PmdNoiseType::TypeIII => "type3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "type1" => Some(PmdNoiseType::TypeI),
            "type2" => Some(PmdNoiseType::TypeII),
            "type3" => Some(PmdNoiseType::TypeIII),
            _ => None,
        }
    }

    fn tau(self, gap: f64) -> f64 {
        match self {
            PmdNoiseType::TypeI => -0.5 * gap * gap + 0.5,
            PmdNoiseType::TypeII => 1.0 - gap * gap * gap,
            PmdNoiseType::TypeIII => 1.0 - (gap * gap * gap + gap * gap + gap) / 3.0,
        }
    }
}

/// Uncalibrated flip probability for a posterior gap in `[0, 1]`.
pub fn pmd_gap_tau(noise_type: PmdNoiseType, gap: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gap) {
        return Err(validation(format!("gap {gap} outside [0, 1]")));
    }
    Ok(noise_type.tau(gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmdNoiseSpec {
    pub noise_type: PmdNoiseType,
    pub multiplier: f64,
    pub clip: bool,
}

impl PmdNoiseSpec {
    pub fn new(noise_type: PmdNoiseType, multiplier: f64) -> Result<Self> {
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(validation(format!(
                "multiplier {multiplier} must be finite and >= 0"
            )));
        }
        Ok(Self {
            noise_type,
            multiplier,
            clip: true,
        })
    }

    /// Calibrated flip probability. Unclipped specs may return values above 1;
    /// corruption rejects those.
    pub fn flip_probability(&self, gap: f64) -> f64 {
        let gap = gap.clamp(0.0, 1.0);
        let p = self.multiplier * self.noise_type.tau(gap);
        if self.clip {
            p.clamp(0.0, 1.0)
        } else {
            p.max(0.0)
        }
    }
}

fn posterior_gaps(oracle: &PosteriorOracle, dataset: &WorkingDataset) -> Result<Vec<f64>> {
    if dataset.dimension != oracle.dimension() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dimension(),
            got: dataset.dimension,
        });
    }
    let c = oracle.num_classes();
    let post = oracle.posteriors(&dataset.features)?;
    Ok(post
        .chunks(c)
        .map(|eta| match top_two(eta) {
            (u, Some(s)) => (eta[u] - eta[s]).clamp(0.0, 1.0),
            (_, None) => 1.0,
        })
        .collect())
}

/// Finds the multiplier whose expected corruption fraction
/// `(1/n) sum_i clip(s * tau_i, 0, 1)` matches `target_level`.
pub fn calibrate_noise_level(
    oracle: &PosteriorOracle,
    dataset: &WorkingDataset,
    noise_type: PmdNoiseType,
    target_level: f64,
) -> Result<PmdNoiseSpec> {
    if !(0.0..=0.95).contains(&target_level) {
        return Err(validation(format!(
            "target level {target_level} outside [0, 0.95]"
        )));
    }
    if dataset.is_empty() {
        return Err(validation("cannot calibrate on an empty dataset"));
    }
    if oracle.num_classes() < 2 {
        return Err(validation("noise needs at least two classes"));
    }
    let gaps = posterior_gaps(oracle, dataset)?;
    let taus: Vec<f64> = gaps.iter().map(|g| noise_type.tau(*g)).collect();
    let n = taus.len() as f64;
    let expected = |s: f64| par::chunked_sum(taus.len(), |i| (s * taus[i]).clamp(0.0, 1.0)) / n;

    if target_level == 0.0 {
        return PmdNoiseSpec::new(noise_type, 0.0);
    }
    let attainable = taus.iter().filter(|t| **t > 0.0).count() as f64 / n;
    if target_level > attainable {
        return Err(Error::InfeasibleTarget {
            target: target_level,
            attainable,
        });
    }
    let mut hi = 1.0;
    while expected(hi) < target_level {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InfeasibleTarget {
                target: target_level,
                attainable,
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if expected(mid) < target_level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    PmdNoiseSpec::new(noise_type, hi)
}

/// Result of checking a noise model against the PMD bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmdCheckReport {
    pub t0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Points in the confident region `|eta - 1/2| >= t0`.
    pub checked: usize,
    pub violation_count: usize,
    /// Largest `tau - bound` over checked points; positive means violated.
    pub worst_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub kind: String,
    pub target_level: Option<f64>,
    pub multiplier: Option<f64>,
    /// Mean flip probability over the dataset (feature-dependent noise only).
    pub expected_level: Option<f64>,
    /// Fraction of rows with `noisy != clean`.
    pub realized_level: f64,
    /// Fraction of rows the noise process moved away from its reference label
    /// (`u_x` for feature-dependent noise, the incoming label for transitions).
    pub corrupted_fraction: f64,
    /// Corruptions counted by reference class.
    pub flips_per_class: Vec<usize>,
    /// Rows whose sampled clean label is not the most confident class.
    pub clean_not_top: usize,
    pub pmd_check: Option<PmdCheckReport>,
}

fn realized(dataset: &WorkingDataset, labels: &[usize]) -> f64 {
    let wrong = labels
        .iter()
        .zip(&dataset.clean_labels)
        .filter(|(a, b)| a != b)
        .count();
    wrong as f64 / labels.len().max(1) as f64
}

/// Feature-dependent corruption `u_x -> s_x`, applied regardless of the
/// sampled clean label.
pub fn corrupt_feature_dependent(
    oracle: &PosteriorOracle,
    dataset: &WorkingDataset,
    spec: &PmdNoiseSpec,
    seed: u64,
) -> Result<(WorkingDataset, NoiseReport)> {
    let c = oracle.num_classes();
    if c < 2 {
        return Err(validation(
            "feature-dependent noise needs at least two classes",
        ));
    }
    if dataset.dimension != oracle.dimension() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dimension(),
            got: dataset.dimension,
        });
    }
    let d = dataset.dimension;
    let draws = par::map_indexed(dataset.len(), |i| {
        let mut eta = vec![0.0; c];
        oracle.posterior_into(&dataset.features[i * d..(i + 1) * d], &mut eta);
        let (u, s) = top_two(&eta);
        let s = s.expect("at least two classes");
        let p = spec.flip_probability(eta[u] - eta[s]);
        let draw: f64 = rng::row_rng(seed, DOMAIN_PMD, i).random();
        (u, if draw < p { s } else { u }, p)
    });
    if !spec.clip {
        if let Some((_, _, p)) = draws.iter().find(|(_, _, p)| *p > 1.0) {
            return Err(validation(format!(
                "unclipped flip probability {p} exceeds 1"
            )));
        }
    }
    let mut flips_per_class = vec![0; c];
    let mut clean_not_top = 0;
    let mut labels = Vec::with_capacity(draws.len());
    for (i, (u, label, _)) in draws.iter().enumerate() {
        if label != u {
            flips_per_class[*u] += 1;
        }
        if dataset.clean_labels[i] != *u {
            clean_not_top += 1;
        }
        labels.push(*label);
    }
    let n = labels.len().max(1) as f64;
    let expected_level = par::chunked_sum(draws.len(), |i| draws[i].2) / n;
    let report = NoiseReport {
        kind: spec.noise_type.name().to_string(),
        target_level: None,
        multiplier: Some(spec.multiplier),
        expected_level: Some(expected_level),
        realized_level: realized(dataset, &labels),
        corrupted_fraction: flips_per_class.iter().sum::<usize>() as f64 / n,
        flips_per_class,
        clean_not_top,
        pmd_check: None,
    };
    let mut out = dataset.clone();
    out.noisy_labels = labels.clone();
    out.working_labels = labels;
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransitionKind {
    Uniform,
    Asymmetric { mapping: Vec<usize> },
}

/// Row-stochastic `T_ij = P(noisy = j | label = i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub entries: Vec<Vec<f64>>,
    pub noise_level: f64,
    pub kind: TransitionKind,
}

impl TransitionMatrix {
    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    /// Arbitrary row-stochastic matrix, e.g. a deterministic permutation.
    pub fn from_rows(entries: Vec<Vec<f64>>) -> Result<Self> {
        let c = entries.len();
        for (i, row) in entries.iter().enumerate() {
            if row.len() != c {
                return Err(validation(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(validation(format!("row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(validation(format!("row {i} sums to {sum}")));
            }
        }
        let noise_level = if c == 0 {
            0.0
        } else {
            entries
                .iter()
                .enumerate()
                .map(|(i, r)| 1.0 - r[i])
                .sum::<f64>()
                / c as f64
        };
        Ok(Self {
            entries,
            noise_level,
            kind: TransitionKind::Uniform,
        })
    }
}

fn check_level(num_classes: usize, level: f64) -> Result<()> {
    if num_classes < 2 {
        return Err(validation("transition noise needs at least two classes"));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(validation(format!("noise level {level} outside [0, 1)")));
    }
    Ok(())
}

pub fn uniform_transition(num_classes: usize, level: f64) -> Result<TransitionMatrix> {
    check_level(num_classes, level)?;
    let off = level / (num_classes - 1) as f64;
    let entries = (0..num_classes)
        .map(|i| {
            (0..num_classes)
                .map(|j| if i == j { 1.0 - level } else { off })
                .collect()
        })
        .collect();
    Ok(TransitionMatrix {
        entries,
        noise_level: level,
        kind: TransitionKind::Uniform,
    })
}

/// `i -> (i + 1) mod C`.
pub fn cyclic_mapping(num_classes: usize) -> Vec<usize> {
    (0..num_classes).map(|i| (i + 1) % num_classes).collect()
}

pub fn asymmetric_transition(
    num_classes: usize,
    level: f64,
    mapping: &[usize],
) -> Result<TransitionMatrix> {
    check_level(num_classes, level)?;
    if mapping.len() != num_classes {
        return Err(validation(format!(
            "mapping has {} entries, expected {num_classes}",
            mapping.len()
        )));
    }
    for (i, &j) in mapping.iter().enumerate() {
        if j >= num_classes {
            return Err(validation(format!(
                "mapping target {j} outside [0, {num_classes})"
            )));
        }
        if i == j {
            return Err(validation(format!("mapping has fixed point {i}")));
        }
    }
    let entries = (0..num_classes)
        .map(|i| {
            let mut row = vec![0.0; num_classes];
            row[i] = 1.0 - level;
            row[mapping[i]] = level;
            row
        })
        .collect();
    Ok(TransitionMatrix {
        entries,
        noise_level: level,
        kind: TransitionKind::Asymmetric {
            mapping: mapping.to_vec(),
        },
    })
}

/// Resamples every current noisy label from its row of `matrix`.
pub fn apply_transition(
    dataset: &WorkingDataset,
    matrix: &TransitionMatrix,
    seed: u64,
) -> Result<(WorkingDataset, NoiseReport)> {
    let c = matrix.num_classes();
    if c != dataset.num_classes {
        return Err(validation(format!(
            "transition matrix is {c} x {c}, dataset has {} classes",
            dataset.num_classes
        )));
    }
    let incoming = &dataset.noisy_labels;
    let labels = par::map_indexed(dataset.len(), |i| {
        let draw: f64 = rng::row_rng(seed, DOMAIN_TRANSITION, i).random();
        categorical_inverse(&matrix.entries[incoming[i]], draw)
    });
    let mut flips_per_class = vec![0; c];
    for (old, new) in incoming.iter().zip(&labels) {
        if old != new {
            flips_per_class[*old] += 1;
        }
    }
    let n = labels.len().max(1) as f64;
    let kind = match matrix.kind {
        TransitionKind::Uniform => "uniform",
        TransitionKind::Asymmetric { .. } => "asymmetric",
    };
    let report = NoiseReport {
        kind: kind.to_string(),
        target_level: Some(matrix.noise_level),
        multiplier: None,
        expected_level: None,
        realized_level: realized(dataset, &labels),
        corrupted_fraction: flips_per_class.iter().sum::<usize>() as f64 / n,
        flips_per_class,
        clean_not_top: 0,
        pmd_check: None,
    };
    let mut out = dataset.clone();
    out.noisy_labels = labels.clone();
    out.working_labels = labels;
    Ok((out, report))
}

/// Binary noise functions `tau_{1,0}` and `tau_{0,1}` as functions of `eta_1`.
pub trait BinaryNoiseFunction {
    /// `P(noisy = 0 | clean = 1, x)`.
    fn tau_10(&self, eta1: f64) -> f64;
    /// `P(noisy = 1 | clean = 0, x)`.
    fn tau_01(&self, eta1: f64) -> f64;
}

impl BinaryNoiseFunction for PmdNoiseSpec {
    fn tau_10(&self, eta1: f64) -> f64 {
        let p = self.flip_probability((2.0 * eta1 - 1.0).abs());
        if eta1 >= 0.5 {
            p
        } else {
            1.0 - p
        }
    }

    fn tau_01(&self, eta1: f64) -> f64 {
        let p = self.flip_probability((2.0 * eta1 - 1.0).abs());
        if eta1 < 0.5 {
            p
        } else {
            1.0 - p
        }
    }
}

/// Feature-independent flip probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantNoise(pub f64);

impl BinaryNoiseFunction for ConstantNoise {
    fn tau_10(&self, _: f64) -> f64 {
        self.0
    }

    fn tau_01(&self, _: f64) -> f64 {
        self.0
    }
}

fn binary_eta1(oracle: &PosteriorOracle, points: &[f64]) -> Result<Vec<f64>> {
    if oracle.num_classes() != 2 {
        return Err(Error::Unsupported(format!(
            "PMD check is defined for binary posteriors, oracle has {} classes",
            oracle.num_classes()
        )));
    }
    Ok(oracle.posteriors(points)?.chunks(2).map(|e| e[1]).collect())
}

/// Bound value and noise value at one confident point, or `None` inside the
/// exempt band `|eta - 1/2| < t0`.
fn pmd_pair<N: BinaryNoiseFunction>(noise: &N, eta1: f64, t0: f64, c2: f64) -> Option<(f64, f64)> {
    if eta1 >= 0.5 + t0 {
        Some((noise.tau_10(eta1), (1.0 - eta1).powf(1.0 + c2)))
    } else if eta1 <= 0.5 - t0 {
        Some((noise.tau_01(eta1), eta1.powf(1.0 + c2)))
    } else {
        None
    }
}

fn check_pmd_constants(t0: f64, c2: f64) -> Result<()> {
    if !(t0 > 0.0 && t0 < 0.5) {
        return Err(validation(format!("t0 {t0} outside (0, 1/2)")));
    }
    if !(c2 > 0.0) {
        return Err(validation("c2 must be positive"));
    }
    Ok(())
}

/// Checks `tau_{1,0} <= c1 (1 - eta)^{1 + c2}` where `eta >= 1/2 + t0` and
/// `tau_{0,1} <= c1 eta^{1 + c2}` where `eta <= 1/2 - t0` on every point of a
/// row-major sample.
pub fn verify_pmd<N: BinaryNoiseFunction>(
    noise: &N,
    oracle: &PosteriorOracle,
    t0: f64,
    c1: f64,
    c2: f64,
    points: &[f64],
) -> Result<PmdCheckReport> {
    check_pmd_constants(t0, c2)?;
    if !(c1 > 0.0) {
        return Err(validation("c1 must be positive"));
    }
    let eta1 = binary_eta1(oracle, points)?;
    let mut checked = 0;
    let mut violation_count = 0;
    let mut worst: Option<f64> = None;
    for &e in &eta1 {
        if let Some((tau, base)) = pmd_pair(noise, e, t0, c2) {
            checked += 1;
            let margin = tau - c1 * base;
            if margin > 0.0 {
                violation_count += 1;
            }
            worst = Some(worst.map_or(margin, |w: f64| w.max(margin)));
        }
    }
    Ok(PmdCheckReport {
        t0,
        c1,
        c2,
        checked,
        violation_count,
        worst_margin: worst,
    })
}

/// Smallest `c1` for which [`verify_pmd`] reports no violation on `points`,
/// i.e. the largest ratio `tau / bound` over the confident region. `None`
/// when the region is empty; infinite when the noise is positive where the
/// bound vanishes.
pub fn fit_pmd_c1<N: BinaryNoiseFunction>(
    noise: &N,
    oracle: &PosteriorOracle,
    t0: f64,
    c2: f64,
    points: &[f64],
) -> Result<Option<f64>> {
    check_pmd_constants(t0, c2)?;
    let eta1 = binary_eta1(oracle, points)?;
    let mut best: Option<f64> = None;
    for &e in &eta1 {
        if let Some((tau, base)) = pmd_pair(noise, e, t0, c2) {
            let ratio = if tau <= 0.0 {
                0.0
            } else if base <= 0.0 {
                f64::INFINITY
            } else {
                tau / base
            };
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    Ok(best)
}
