//! Run configuration.
//!
//! The file format is one `key = value` pair per line. Keys are dotted
//! (`noise.kind`, `schedule.beta`); `#` starts a comment; blank lines are
//! ignored. Lists use commas (`model.hidden = 32,32`). Sweep axes use
//! `sweep.<key> = v1 | v2 | ...`. Unknown or repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::datagen::{Component, Covariance, MixtureSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, TrainConfig};
use crate::noise::PmdNoiseType;
use crate::plc::{CorrectionMode, CorrectionSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Blobs,
    Ring,
    Mixture,
    Csv,
}

impl DataKind {
    fn name(self) -> &'static str {
        match self {
            DataKind::Blobs => "blobs",
            DataKind::Ring => "ring",
            DataKind::Mixture => "mixture",
            DataKind::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentConfig {
    pub mean: Vec<f64>,
    /// One value: isotropic variance. `d` values: diagonal. Rows split by `;`: full.
    pub covariance: Covariance,
    pub prior: f64,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub n_train: usize,
    pub n_test: usize,
    pub mean0: Vec<f64>,
    pub mean1: Vec<f64>,
    pub variance: f64,
    pub prior0: f64,
    pub classes: usize,
    pub radius: f64,
    pub components: Vec<ComponentConfig>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub oracle_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Blobs,
            n_train: 10_000,
            n_test: 4_000,
            mean0: vec![-1.0, 0.0],
            mean1: vec![1.0, 0.0],
            variance: 1.0,
            prior0: 0.5,
            classes: 3,
            radius: 3.0,
            components: Vec::new(),
            train_path: None,
            test_path: None,
            oracle_path: None,
        }
    }
}

impl DataConfig {
    /// The mixture for synthetic kinds; `None` for CSV input.
    pub fn mixture(&self) -> Result<Option<MixtureSpec>> {
        let spec = match self.kind {
            DataKind::Blobs => MixtureSpec::two_blobs(
                self.mean0.clone(),
                self.mean1.clone(),
                self.variance,
                self.prior0,
            ),
            DataKind::Ring => MixtureSpec::ring_of_blobs(self.classes, self.radius, self.variance),
            DataKind::Mixture => {
                let dimension = self.components.first().map_or(0, |c| c.mean.len());
                MixtureSpec {
                    dimension,
                    num_classes: self.classes,
                    components: self
                        .components
                        .iter()
                        .map(|c| Component {
                            mean: c.mean.clone(),
                            covariance: c.covariance.clone(),
                            prior: c.prior,
                            class_id: c.class_id,
                        })
                        .collect(),
                }
            }
            DataKind::Csv => return Ok(None),
        };
        spec.validate()
            .map_err(|e| Error::Config(format!("data: {e}")))?;
        Ok(Some(spec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Pmd(PmdNoiseType),
    Uniform,
    Asymmetric,
    Hybrid,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Pmd(t) => t.name(),
            NoiseKind::Uniform => "uniform",
            NoiseKind::Asymmetric => "asymmetric",
            NoiseKind::Hybrid => "hybrid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(NoiseKind::None),
            "uniform" => Some(NoiseKind::Uniform),
            "asymmetric" => Some(NoiseKind::Asymmetric),
            "hybrid" => Some(NoiseKind::Hybrid),
            other => PmdNoiseType::parse(other).map(NoiseKind::Pmd),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Target corruption level of the primary noise.
    pub level: f64,
    /// Feature-dependent part of `hybrid` noise.
    pub pmd_type: PmdNoiseType,
    /// Transition part of `hybrid` noise: `Uniform` or `Asymmetric`.
    pub overlay: NoiseKind,
    pub overlay_level: f64,
    /// Asymmetric class mapping; cyclic `i -> i + 1` when absent.
    pub mapping: Option<Vec<usize>>,
    /// Overrides the stream derived from the master seed.
    pub seed: Option<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Pmd(PmdNoiseType::TypeI),
            level: 0.35,
            pmd_type: PmdNoiseType::TypeI,
            overlay: NoiseKind::Uniform,
            overlay_level: 0.3,
            mapping: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    /// Frozen exact posterior; needs a synthetic data source.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input: usize, output: usize) -> Architecture {
        Architecture {
            input,
            hidden: self.hidden.clone(),
            output,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub margin_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { margin_bins: 10 }
    }
}

/// Inputs of the theory checks. Missing `alpha`/`epsilon` are fitted and a
/// missing `ell` is estimated from the margin histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub ell: Option<f64>,
    pub t0: f64,
    pub fit_quantile: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            epsilon: None,
            ell: None,
            t0: 0.1,
            fit_quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Axes sorted by key; values are raw strings for the target key.
    pub axes: Vec<(String, Vec<String>)>,
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axes: Vec::new(),
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub schedule: CorrectionSchedule,
    pub eval: EvalConfig,
    pub theory: TheoryConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            model: ModelConfig::default(),
            schedule: CorrectionSchedule::default(),
            eval: EvalConfig::default(),
            theory: TheoryConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(key, value, std::any::type_name::<T>()))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn join<T: Display>(values: &[T], sep: &str) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

fn parse_covariance(key: &str, value: &str) -> Result<Covariance> {
    if value.contains(';') {
        let rows = value
            .split(';')
            .map(|r| list(key, r.trim()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        return Ok(Covariance::Full(rows));
    }
    let values: Vec<f64> = list(key, value)?;
    match values.as_slice() {
        [v] => Ok(Covariance::Isotropic(*v)),
        [] => Err(bad(key, value, "a covariance")),
        _ => Ok(Covariance::Diagonal(values)),
    }
}

fn format_covariance(cov: &Covariance) -> String {
    match cov {
        Covariance::Isotropic(v) => v.to_string(),
        Covariance::Diagonal(v) => join(v, ","),
        Covariance::Full(rows) => rows
            .iter()
            .map(|r| join(r, ","))
            .collect::<Vec<_>>()
            .join(";"),
    }
}

impl RunConfig {
    /// Parses a configuration file, then validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut config = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (key, value) in pairs {
            let (key, value) = (key.as_ref(), value.as_ref());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key = value` assignment without validating the result.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(axis) = key.strip_prefix("sweep.") {
            if axis == "repeats" {
                self.sweep.repeats = num(key, value)?;
            } else {
                let values: Vec<String> = value
                    .split('|')
                    .map(|v| v.trim().to_string())
                    .filter(|v| !v.is_empty())
                    .collect();
                if axis.starts_with("sweep.") || self.sweep.axes.iter().any(|(a, _)| a == axis) {
                    return Err(Error::Config(format!("invalid sweep axis {key}")));
                }
                let mut probe = self.clone();
                for v in &values {
                    probe.set(axis, v)?;
                }
                let at = self.sweep.axes.partition_point(|(a, _)| a.as_str() < axis);
                self.sweep.axes.insert(at, (axis.to_string(), values));
            }
            return Ok(());
        }
        if let Some(rest) = key.strip_prefix("data.component.") {
            return self.set_component(key, rest, value);
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "data.kind" => {
                self.data.kind = match value {
                    "blobs" => DataKind::Blobs,
                    "ring" => DataKind::Ring,
                    "mixture" => DataKind::Mixture,
                    "csv" => DataKind::Csv,
                    _ => return Err(bad(key, value, "blobs, ring, mixture or csv")),
                }
            }
            "data.n_train" => self.data.n_train = num(key, value)?,
            "data.n_test" => self.data.n_test = num(key, value)?,
            "data.mean0" => self.data.mean0 = list(key, value)?,
            "data.mean1" => self.data.mean1 = list(key, value)?,
            "data.variance" => self.data.variance = num(key, value)?,
            "data.prior0" => self.data.prior0 = num(key, value)?,
            "data.classes" => self.data.classes = num(key, value)?,
            "data.radius" => self.data.radius = num(key, value)?,
            "data.train_path" => self.data.train_path = Some(PathBuf::from(value)),
            "data.test_path" => self.data.test_path = Some(PathBuf::from(value)),
            "data.oracle_path" => self.data.oracle_path = Some(PathBuf::from(value)),
            "noise.kind" => {
                self.noise.kind = NoiseKind::parse(value).ok_or_else(|| {
                    bad(
                        key,
                        value,
                        "none, type1, type2, type3, uniform, asymmetric or hybrid",
                    )
                })?
            }
            "noise.level" => self.noise.level = num(key, value)?,
            "noise.pmd_type" => {
                self.noise.pmd_type = PmdNoiseType::parse(value)
                    .ok_or_else(|| bad(key, value, "type1, type2 or type3"))?
            }
            "noise.overlay" => {
                self.noise.overlay = match value {
                    "uniform" => NoiseKind::Uniform,
                    "asymmetric" => NoiseKind::Asymmetric,
                    _ => return Err(bad(key, value, "uniform or asymmetric")),
                }
            }
            "noise.overlay_level" => self.noise.overlay_level = num(key, value)?,
            "noise.mapping" => self.noise.mapping = Some(list(key, value)?),
            "noise.seed" => self.noise.seed = Some(num(key, value)?),
            "model.kind" => {
                self.model.kind = match value {
                    "mlp" => ModelKind::Mlp,
                    "oracle" => ModelKind::Oracle,
                    _ => return Err(bad(key, value, "mlp or oracle")),
                }
            }
            "model.hidden" => self.model.hidden = list(key, value)?,
            "model.activation" => {
                self.model.activation =
                    Activation::parse(value).ok_or_else(|| bad(key, value, "relu or tanh"))?
            }
            "model.lr" => self.model.train.learning_rate = num(key, value)?,
            "model.batch" => self.model.train.batch_size = num(key, value)?,
            "model.epochs_per_round" => self.model.train.epochs_per_round = num(key, value)?,
            "schedule.mode" => {
                self.schedule.mode = CorrectionMode::parse(value)
                    .ok_or_else(|| bad(key, value, "binary or multiclass"))?
            }
            "schedule.t0" => self.schedule.t0 = num(key, value)?,
            "schedule.t_end" => self.schedule.t_end = num(key, value)?,
            "schedule.r0" => self.schedule.r0 = num(key, value)?,
            "schedule.r_end" => self.schedule.r_end = num(key, value)?,
            "schedule.beta" => self.schedule.beta = num(key, value)?,
            "schedule.warmup" => self.schedule.warmup = num(key, value)?,
            "schedule.rounds" => self.schedule.total_rounds = num(key, value)?,
            "schedule.correct_during_warmup" => {
                self.schedule.correct_during_warmup = flag(key, value)?
            }
            "eval.margin_bins" => self.eval.margin_bins = num(key, value)?,
            "theory.alpha" => self.theory.alpha = Some(num(key, value)?),
            "theory.epsilon" => self.theory.epsilon = Some(num(key, value)?),
            "theory.ell" => self.theory.ell = Some(num(key, value)?),
            "theory.t0" => self.theory.t0 = num(key, value)?,
            "theory.fit_quantile" => self.theory.fit_quantile = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    fn set_component(&mut self, key: &str, rest: &str, value: &str) -> Result<()> {
        let (index, field) = rest
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
        let index: usize = num(key, index)?;
        if index > self.data.components.len() {
            return Err(Error::Config(format!(
                "{key}: components must be numbered from 0 without gaps"
            )));
        }
        if index == self.data.components.len() {
            self.data.components.push(ComponentConfig {
                mean: Vec::new(),
                covariance: Covariance::Isotropic(1.0),
                prior: 0.0,
                class_id: 0,
            });
        }
        let component = &mut self.data.components[index];
        match field {
            "mean" => component.mean = list(key, value)?,
            "covariance" => component.covariance = parse_covariance(key, value)?,
            "prior" => component.prior = num(key, value)?,
            "class" => component.class_id = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        match self.data.kind {
            DataKind::Csv => {
                if self.data.train_path.is_none() || self.data.test_path.is_none() {
                    return err("data.kind = csv needs data.train_path and data.test_path".into());
                }
            }
            _ => {
                if self.data.n_train == 0 || self.data.n_test == 0 {
                    return err("data.n_train and data.n_test must be at least 1".into());
                }
                self.data.mixture()?;
            }
        }
        if !(0.0..=1.0).contains(&self.noise.level)
            || !(0.0..=1.0).contains(&self.noise.overlay_level)
        {
            return err("noise levels must lie in [0, 1]".into());
        }
        if self.model.kind == ModelKind::Oracle
            && self.data.kind == DataKind::Csv
            && self.data.oracle_path.is_none()
        {
            return err("model.kind = oracle needs a synthetic source or data.oracle_path".into());
        }
        self.model
            .train
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        self.schedule.validate()?;
        if self.eval.margin_bins < 5 {
            return err("eval.margin_bins must be at least 5".into());
        }
        if !(0.0..=1.0).contains(&self.theory.fit_quantile) {
            return err("theory.fit_quantile must lie in [0, 1]".into());
        }
        if self.sweep.repeats == 0 {
            return err("sweep.repeats must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical key/value pairs; [`RunConfig::from_pairs`] inverts this.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("output.dir", self.output_dir.display().to_string());
        let d = &self.data;
        put("data.kind", d.kind.name().into());
        put("data.n_train", d.n_train.to_string());
        put("data.n_test", d.n_test.to_string());
        put("data.mean0", join(&d.mean0, ","));
        put("data.mean1", join(&d.mean1, ","));
        put("data.variance", d.variance.to_string());
        put("data.prior0", d.prior0.to_string());
        put("data.classes", d.classes.to_string());
        put("data.radius", d.radius.to_string());
        for (i, c) in d.components.iter().enumerate() {
            put(&format!("data.component.{i}.mean"), join(&c.mean, ","));
            put(
                &format!("data.component.{i}.covariance"),
                format_covariance(&c.covariance),
            );
            put(&format!("data.component.{i}.prior"), c.prior.to_string());
            put(&format!("data.component.{i}.class"), c.class_id.to_string());
        }
        for (k, p) in [
            ("data.train_path", &d.train_path),
            ("data.test_path", &d.test_path),
            ("data.oracle_path", &d.oracle_path),
        ] {
            if let Some(p) = p {
                put(k, p.display().to_string());
            }
        }
        let n = &self.noise;
        put("noise.kind", n.kind.name().into());
        put("noise.level", n.level.to_string());
        put("noise.pmd_type", n.pmd_type.name().into());
        put("noise.overlay", n.overlay.name().into());
        put("noise.overlay_level", n.overlay_level.to_string());
        if let Some(m) = &n.mapping {
            put("noise.mapping", join(m, ","));
        }
        if let Some(s) = n.seed {
            put("noise.seed", s.to_string());
        }
        let m = &self.model;
        put(
            "model.kind",
            match m.kind {
                ModelKind::Mlp => "mlp",
                ModelKind::Oracle => "oracle",
            }
            .into(),
        );
        put("model.hidden", join(&m.hidden, ","));
        put("model.activation", m.activation.name().into());
        put("model.lr", m.train.learning_rate.to_string());
        put("model.batch", m.train.batch_size.to_string());
        put(
            "model.epochs_per_round",
            m.train.epochs_per_round.to_string(),
        );
        let s = &self.schedule;
        put("schedule.mode", s.mode.name().into());
        put("schedule.t0", s.t0.to_string());
        put("schedule.t_end", s.t_end.to_string());
        put("schedule.r0", s.r0.to_string());
        put("schedule.r_end", s.r_end.to_string());
        put("schedule.beta", s.beta.to_string());
        put("schedule.warmup", s.warmup.to_string());
        put("schedule.rounds", s.total_rounds.to_string());
        put(
            "schedule.correct_during_warmup",
            s.correct_during_warmup.to_string(),
        );
        put("eval.margin_bins", self.eval.margin_bins.to_string());
        let t = &self.theory;
        for (k, v) in [
            ("theory.alpha", t.alpha),
            ("theory.epsilon", t.epsilon),
            ("theory.ell", t.ell),
        ] {
            if let Some(v) = v {
                put(k, v.to_string());
            }
        }
        put("theory.t0", t.t0.to_string());
        put("theory.fit_quantile", t.fit_quantile.to_string());
        for (axis, values) in &self.sweep.axes {
            put(&format!("sweep.{axis}"), values.join(" | "));
        }
        put("sweep.repeats", self.sweep.repeats.to_string());
        out
    }

    /// Canonical text form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
