//! Synthetic Gaussian-mixture data with a closed-form class posterior.
//!
//! A [`MixtureSpec`] assigns each Gaussian component to a class. The
//! [`PosteriorOracle`] evaluates the exact posterior `eta(x)` by Bayes rule in
//! log space, which gives both the clean-label sampler and the Bayes-optimal
//! labeling used as ground truth by every other module.

mod csv_io;

pub use csv_io::{format_sig9, read_dataset_csv, write_dataset_csv};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::{par, rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

const DOMAIN_TRAIN_FEATURES: u64 = 1;
const DOMAIN_TRAIN_LABELS: u64 = 2;
const DOMAIN_TEST_FEATURES: u64 = 3;
const DOMAIN_TEST_LABELS: u64 = 4;

/// Component covariance. Scalars are variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub prior: f64,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dimension: usize,
    pub num_classes: usize,
    pub components: Vec<Component>,
}

impl MixtureSpec {
    /// Two unit-variance isotropic blobs at `(-1, 0)` (class 0) and `(1, 0)`
    /// (class 1) with equal priors.
    pub fn default_blobs() -> Self {
        Self::two_blobs(vec![-1.0, 0.0], vec![1.0, 0.0], 1.0, 0.5)
    }

    /// Two isotropic blobs, class 0 at `mean0` with prior `prior0` and class 1
    /// at `mean1`.
    pub fn two_blobs(mean0: Vec<f64>, mean1: Vec<f64>, variance: f64, prior0: f64) -> Self {
        let dimension = mean0.len();
        Self {
            dimension,
            num_classes: 2,
            components: vec![
                Component {
                    mean: mean0,
                    covariance: Covariance::Isotropic(variance),
                    prior: prior0,
                    class_id: 0,
                },
                Component {
                    mean: mean1,
                    covariance: Covariance::Isotropic(variance),
                    prior: 1.0 - prior0,
                    class_id: 1,
                },
            ],
        }
    }

    /// `num_classes` unit blobs evenly spaced on a circle of the given radius in 2-D.
    pub fn ring_of_blobs(num_classes: usize, radius: f64, variance: f64) -> Self {
        let components = (0..num_classes)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                Component {
                    mean: vec![radius * angle.cos(), radius * angle.sin()],
                    covariance: Covariance::Isotropic(variance),
                    prior: 1.0 / num_classes as f64,
                    class_id: c,
                }
            })
            .collect();
        Self {
            dimension: 2,
            num_classes,
            components,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(validation("mixture dimension must be positive"));
        }
        if self.num_classes == 0 {
            return Err(validation("mixture must have at least one class"));
        }
        let mut seen = vec![false; self.num_classes];
        let mut prior_sum = 0.0;
        for (k, comp) in self.components.iter().enumerate() {
            if comp.mean.len() != self.dimension {
                return Err(validation(format!(
                    "component {k}: mean has length {}, expected {}",
                    comp.mean.len(),
                    self.dimension
                )));
            }
            if comp.class_id >= self.num_classes {
                return Err(validation(format!(
                    "component {k}: class id {} outside [0, {})",
                    comp.class_id, self.num_classes
                )));
            }
            if !(comp.prior >= 0.0 && comp.prior <= 1.0) {
                return Err(validation(format!(
                    "component {k}: prior {} outside [0, 1]",
                    comp.prior
                )));
            }
            if comp.mean.iter().any(|v| !v.is_finite()) {
                return Err(validation(format!("component {k}: non-finite mean")));
            }
            seen[comp.class_id] = true;
            prior_sum += comp.prior;
            cholesky_factor(&comp.covariance, self.dimension)
                .map_err(|e| validation(format!("component {k}: {e}")))?;
        }
        if (prior_sum - 1.0).abs() > 1e-12 {
            return Err(validation(format!("priors sum to {prior_sum}, expected 1")));
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(validation(format!("class {c} has no mixture component")));
        }
        Ok(())
    }
}

/// Lower Cholesky factor, row-major `d x d`.
fn cholesky_factor(cov: &Covariance, d: usize) -> std::result::Result<Vec<f64>, String> {
    let mut lower = vec![0.0; d * d];
    match cov {
        Covariance::Isotropic(v) => {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(format!("covariance scale {v} must be positive"));
            }
            for i in 0..d {
                lower[i * d + i] = v.sqrt();
            }
        }
        Covariance::Diagonal(vs) => {
            if vs.len() != d {
                return Err(format!(
                    "diagonal covariance has length {}, expected {d}",
                    vs.len()
                ));
            }
            for (i, v) in vs.iter().enumerate() {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(format!("covariance scale {v} must be positive"));
                }
                lower[i * d + i] = v.sqrt();
            }
        }
        Covariance::Full(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(format!("full covariance must be {d} x {d}"));
            }
            for i in 0..d {
                for j in 0..i {
                    if (rows[i][j] - rows[j][i]).abs() > 1e-12 * (1.0 + rows[i][j].abs()) {
                        return Err("full covariance is not symmetric".into());
                    }
                }
            }
            let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
            let chol = m
                .cholesky()
                .ok_or_else(|| "full covariance is not positive definite".to_string())?;
            let l = chol.l();
            for i in 0..d {
                for j in 0..=i {
                    lower[i * d + j] = l[(i, j)];
                }
            }
        }
    }
    Ok(lower)
}

#[derive(Debug, Clone)]
struct PreparedComponent {
    mean: Vec<f64>,
    lower: Vec<f64>,
    /// ln prior - 0.5 ln det(cov) - 0.5 d ln(2 pi)
    log_weight: f64,
    class_id: usize,
}

impl PreparedComponent {
    fn log_joint(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L z = x - mean
        let mut quad = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= self.lower[i * d + j] * scratch[j];
            }
            let z = acc / self.lower[i * d + i];
            scratch[i] = z;
            quad += z * z;
        }
        self.log_weight - 0.5 * quad
    }
}

/// Exact class posterior of a [`MixtureSpec`].
#[derive(Debug, Clone)]
pub struct PosteriorOracle {
    spec: MixtureSpec,
    prepared: Vec<PreparedComponent>,
}

impl PosteriorOracle {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dimension;
        let prepared = spec
            .components
            .iter()
            .map(|c| {
                let lower = cholesky_factor(&c.covariance, d).map_err(validation)?;
                let log_det: f64 = (0..d).map(|i| 2.0 * lower[i * d + i].ln()).sum();
                Ok(PreparedComponent {
                    mean: c.mean.clone(),
                    lower,
                    log_weight: c.prior.ln() - 0.5 * log_det - 0.5 * d as f64 * LN_2PI,
                    class_id: c.class_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, prepared })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// `eta(x)`, the posterior class-probability vector.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.num_classes()];
        self.posterior_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked [`posterior`](Self::posterior) writing into `out`.
    pub fn posterior_into(&self, x: &[f64], out: &mut [f64]) {
        let mut scratch = vec![0.0; self.dimension()];
        // per-class log-sum-exp of component log joints
        let mut class_max = vec![f64::NEG_INFINITY; out.len()];
        let logs: Vec<f64> = self
            .prepared
            .iter()
            .map(|c| {
                let l = c.log_joint(x, &mut scratch);
                if l > class_max[c.class_id] {
                    class_max[c.class_id] = l;
                }
                l
            })
            .collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, l) in self.prepared.iter().zip(&logs) {
            let m = class_max[c.class_id];
            if m.is_finite() {
                out[c.class_id] += (l - m).exp();
            }
        }
        let mut class_log = vec![f64::NEG_INFINITY; out.len()];
        for k in 0..out.len() {
            if class_max[k].is_finite() {
                class_log[k] = class_max[k] + out[k].ln();
            }
        }
        let top = class_log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..out.len() {
            out[k] = (class_log[k] - top).exp();
            total += out[k];
        }
        out.iter_mut().for_each(|o| *o /= total);
    }

    /// Posteriors for every row of a row-major `n x d` feature matrix, as a
    /// row-major `n x C` matrix.
    pub fn posteriors(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.dimension();
        if !features.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: features.len() % d,
            });
        }
        Ok(par::map_rows_into(
            features,
            d,
            self.num_classes(),
            |x, out| self.posterior_into(x, out),
        ))
    }

    /// Binary margin `|eta_1(x) - 1/2|`, generalised to `(eta_u - eta_s) / 2`
    /// for more classes.
    pub fn margins(&self, features: &[f64]) -> Result<Vec<f64>> {
        let c = self.num_classes();
        let post = self.posteriors(features)?;
        Ok(post
            .chunks(c)
            .map(|eta| {
                let (u, s) = top_two(eta);
                match s {
                    Some(s) => 0.5 * (eta[u] - eta[s]),
                    None => 0.5,
                }
            })
            .collect())
    }
}

/// Bayes class of one posterior vector. Binary ties at exactly 1/2 go to
/// class 1; other ties go to the lowest index.
pub fn bayes_class(eta: &[f64]) -> usize {
    if eta.len() == 2 {
        return usize::from(eta[1] >= 0.5);
    }
    argmax(eta)
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Most confident class `u` (the Bayes class) and the runner-up `s`.
pub fn top_two(eta: &[f64]) -> (usize, Option<usize>) {
    let u = bayes_class(eta);
    let mut s: Option<usize> = None;
    for (k, v) in eta.iter().enumerate() {
        if k == u {
            continue;
        }
        match s {
            Some(b) if eta[b] >= *v => {}
            _ => s = Some(k),
        }
    }
    (u, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Features plus the four label channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingDataset {
    pub dimension: usize,
    pub num_classes: usize,
    /// Row-major `n x dimension`.
    pub features: Vec<f64>,
    /// `y`, sampled from the posterior.
    pub clean_labels: Vec<usize>,
    /// `eta*(x)`.
    pub bayes_labels: Vec<usize>,
    /// Labels right after corruption.
    pub noisy_labels: Vec<usize>,
    /// Labels as currently corrected.
    pub working_labels: Vec<usize>,
    pub split: Split,
}

impl WorkingDataset {
    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.len() != n * self.dimension {
            return Err(validation("feature matrix size does not match label count"));
        }
        for (name, labels) in [
            ("bayes", &self.bayes_labels),
            ("noisy", &self.noisy_labels),
            ("working", &self.working_labels),
        ] {
            if labels.len() != n {
                return Err(validation(format!(
                    "{name} labels have length {}, expected {n}",
                    labels.len()
                )));
            }
        }
        for labels in [
            &self.clean_labels,
            &self.bayes_labels,
            &self.noisy_labels,
            &self.working_labels,
        ] {
            if let Some(l) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(validation(format!(
                    "label {l} outside [0, {})",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

fn check_features(oracle: &PosteriorOracle, features: &[f64]) -> Result<usize> {
    let d = oracle.dimension();
    if !features.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: features.len() % d,
        });
    }
    Ok(features.len() / d)
}

/// Draws `y_i ~ Categorical(eta(x_i))` independently per row.
pub fn sample_clean_labels(
    oracle: &PosteriorOracle,
    features: &[f64],
    seed: u64,
) -> Result<Vec<usize>> {
    sample_labels_in_domain(oracle, features, seed, DOMAIN_TRAIN_LABELS)
}

fn sample_labels_in_domain(
    oracle: &PosteriorOracle,
    features: &[f64],
    seed: u64,
    domain: u64,
) -> Result<Vec<usize>> {
    let n = check_features(oracle, features)?;
    let d = oracle.dimension();
    let c = oracle.num_classes();
    Ok(par::map_indexed(n, |i| {
        let mut eta = vec![0.0; c];
        oracle.posterior_into(&features[i * d..(i + 1) * d], &mut eta);
        let u: f64 = rng::row_rng(seed, domain, i).random();
        categorical_inverse(&eta, u)
    }))
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
pub fn categorical_inverse(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    last_positive
}

/// Bayes-optimal labels `eta*(x_i)`.
pub fn bayes_labels(oracle: &PosteriorOracle, features: &[f64]) -> Result<Vec<usize>> {
    let c = oracle.num_classes();
    let post = oracle.posteriors(features)?;
    Ok(post.chunks(c).map(bayes_class).collect())
}

fn sample_features(
    spec: &MixtureSpec,
    lowers: &[Vec<f64>],
    n: usize,
    seed: u64,
    domain: u64,
) -> Vec<f64> {
    let d = spec.dimension;
    let rows = par::map_indexed(n, |i| {
        let mut r = rng::row_rng(seed, domain, i);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut k = spec.components.len() - 1;
        for (j, comp) in spec.components.iter().enumerate() {
            acc += comp.prior;
            if u < acc && comp.prior > 0.0 {
                k = j;
                break;
            }
        }
        let comp = &spec.components[k];
        let z: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let lower = &lowers[k];
        (0..d)
            .map(|a| comp.mean[a] + (0..=a).map(|b| lower[a * d + b] * z[b]).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    rows.into_iter().flatten().collect()
}

fn build_split(
    oracle: &PosteriorOracle,
    lowers: &[Vec<f64>],
    n: usize,
    seed: u64,
    domains: (u64, u64),
    split: Split,
) -> Result<WorkingDataset> {
    let spec = oracle.spec();
    let features = sample_features(spec, lowers, n, seed, domains.0);
    let clean = sample_labels_in_domain(oracle, &features, seed, domains.1)?;
    let bayes = bayes_labels(oracle, &features)?;
    Ok(WorkingDataset {
        dimension: spec.dimension,
        num_classes: spec.num_classes,
        features,
        noisy_labels: clean.clone(),
        working_labels: clean.clone(),
        clean_labels: clean,
        bayes_labels: bayes,
        split,
    })
}

/// Samples train and test sets from the mixture. Noisy and working labels
/// start equal to the clean labels.
pub fn make_gaussian_mixture(
    spec: MixtureSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(WorkingDataset, WorkingDataset, PosteriorOracle)> {
    if n_train == 0 || n_test == 0 {
        return Err(validation("n_train and n_test must be at least 1"));
    }
    let oracle = PosteriorOracle::new(spec)?;
    let lowers: Vec<Vec<f64>> = oracle.prepared.iter().map(|c| c.lower.clone()).collect();
    let train = build_split(
        &oracle,
        &lowers,
        n_train,
        seed,
        (DOMAIN_TRAIN_FEATURES, DOMAIN_TRAIN_LABELS),
        Split::Train,
    )?;
    let test = build_split(
        &oracle,
        &lowers,
        n_test,
        seed,
        (DOMAIN_TEST_FEATURES, DOMAIN_TEST_LABELS),
        Split::Test,
    )?;
    Ok((train, test, oracle))
}
