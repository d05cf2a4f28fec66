use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::noise::NoiseReport;
use crate::plc::{CorrectionSchedule, RoundRecord};
use crate::theory::{ConsistencyFit, MarginProfile, PurityTrace, TheoremParams};

/// Bumped whenever the JSON layout of [`RunReport`] changes.
pub const REPORT_VERSION: u32 = 1;

pub const ROUNDS_HEADER: [&str; 8] = [
    "round",
    "theta",
    "T",
    "flips",
    "purity",
    "train_acc",
    "test_acc_bayes",
    "residual_margin",
];

/// Per-stream seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub data: u64,
    pub noise: u64,
    pub model: u64,
    pub training: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub rounds: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub test_accuracy_bayes: Option<f64>,
    /// Noisy labels against Bayes labels, before any correction.
    pub initial_purity: f64,
    pub final_purity: f64,
    pub total_flips: usize,
    /// Labels that started wrong (against Bayes) and ended right.
    pub corrected_count: usize,
    /// Labels still wrong at the end.
    pub residual_count: usize,
    /// Mean margin of the residual wrong labels (needs an oracle).
    pub residual_margin: Option<f64>,
    /// Mean margin of the corrected labels (needs an oracle).
    pub corrected_margin: Option<f64>,
}

/// Where each theory input came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub ell: Option<f64>,
    pub t0: f64,
    pub alpha_source: String,
    pub epsilon_source: String,
    pub ell_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySection {
    pub notes: Vec<String>,
    pub margin_profile: Option<MarginProfile>,
    pub consistency_fit: Option<ConsistencyFit>,
    pub inputs: TheoryInputs,
    pub theorem_params: Option<TheoremParams>,
    pub theorem_error: Option<String>,
    pub lemma1_trace: Option<PurityTrace>,
    pub lemma1_error: Option<String>,
    /// Share of post-warm-up steps meeting the growth bound.
    pub lemma1_fraction_after_warmup: Option<f64>,
    /// Final working-label purity among points with margin at least the final theta.
    pub confident_region_purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub package_version: String,
    /// `run` or `standard`.
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: SeedPlan,
    pub noise: Vec<NoiseReport>,
    pub schedule: Option<CorrectionSchedule>,
    pub training: TrainingSummary,
    pub rounds: Vec<RoundRecord>,
    pub summary: FinalMetrics,
    pub theory: Option<TheorySection>,
    pub wall_clock_seconds: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per round. Missing values are empty fields.
pub fn write_rounds_csv<W: Write>(rounds: &[RoundRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROUNDS_HEADER)?;
    for r in rounds {
        w.write_record([
            r.round.to_string(),
            cell(r.theta),
            cell(r.level),
            r.num_flipped.to_string(),
            cell(r.purity),
            r.train_accuracy.to_string(),
            cell(r.test_accuracy_bayes),
            cell(r.residual_margin),
        ])?;
    }
    w.flush()?;
    Ok(())
}
