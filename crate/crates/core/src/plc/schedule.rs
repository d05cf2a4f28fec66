use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    Binary,
    Multiclass,
}

impl CorrectionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "binary" => Some(CorrectionMode::Binary),
            "multiclass" => Some(CorrectionMode::Multiclass),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorrectionMode::Binary => "binary",
            CorrectionMode::Multiclass => "multiclass",
        }
    }
}

/// Threshold schedule. Binary mode uses `t0`/`t_end`, multi-class mode
/// `r0`/`r_end`; both share `beta`, `warmup` and `total_rounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSchedule {
    pub mode: CorrectionMode,
    pub t0: f64,
    pub t_end: f64,
    pub r0: f64,
    pub r_end: f64,
    pub beta: f64,
    pub warmup: usize,
    pub total_rounds: usize,
    pub correct_during_warmup: bool,
}

impl Default for CorrectionSchedule {
    fn default() -> Self {
        Self {
            mode: CorrectionMode::Binary,
            t0: 0.1,
            t_end: 0.45,
            r0: 0.3,
            r_end: 1.0,
            beta: 0.1,
            warmup: 20,
            total_rounds: 180,
            correct_during_warmup: true,
        }
    }
}

impl CorrectionSchedule {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return err(format!("beta {} must be positive", self.beta));
        }
        if self.warmup > self.total_rounds {
            return err(format!(
                "warm-up {} exceeds total rounds {}",
                self.warmup, self.total_rounds
            ));
        }
        match self.mode {
            CorrectionMode::Binary => {
                if !(self.t0 > 0.0 && self.t0 < self.t_end && self.t_end < 0.5) {
                    return err(format!(
                        "need 0 < T0 < T_end < 1/2, got T0 {} T_end {}",
                        self.t0, self.t_end
                    ));
                }
            }
            CorrectionMode::Multiclass => {
                if !(self.r0 > 0.0 && self.r0 < self.r_end && self.r_end <= 1.0) {
                    return err(format!(
                        "need 0 < r0 < r_end <= 1, got r0 {} r_end {}",
                        self.r0, self.r_end
                    ));
                }
            }
        }
        Ok(())
    }

    fn start(&self) -> f64 {
        match self.mode {
            CorrectionMode::Binary => self.t0,
            CorrectionMode::Multiclass => self.r0,
        }
    }

    fn cap(&self) -> f64 {
        match self.mode {
            CorrectionMode::Binary => self.t_end,
            CorrectionMode::Multiclass => self.r_end,
        }
    }
}

/// Loop state. `level` is `T` (binary) or `r` (multi-class); `threshold` is
/// what the correction rule compares against: `theta = 1/2 - T`, or `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlcState {
    pub level: f64,
    pub threshold: f64,
    /// Rounds completed.
    pub round: usize,
    pub flips_this_round: usize,
    pub cumulative_flips: usize,
}

fn threshold_for(mode: CorrectionMode, level: f64) -> f64 {
    match mode {
        CorrectionMode::Binary => 0.5 - level,
        CorrectionMode::Multiclass => level,
    }
}

impl PlcState {
    pub fn initial(schedule: &CorrectionSchedule) -> Self {
        let level = schedule.start();
        Self {
            level,
            threshold: threshold_for(schedule.mode, level),
            round: 0,
            flips_this_round: 0,
            cumulative_flips: 0,
        }
    }

    /// `theta` on a common scale: `1/2 - T` in binary mode, the log-gap
    /// cutoff `-ln r` in multi-class mode. Non-increasing over a run.
    pub fn theta(&self, mode: CorrectionMode) -> f64 {
        match mode {
            CorrectionMode::Binary => self.threshold,
            CorrectionMode::Multiclass => -self.threshold.ln(),
        }
    }
}

/// Advances the schedule after round `state.round + 1` produced `flipped`
/// label changes. From round `m` on, a round without flips grows the level
/// geometrically up to its cap and the threshold follows the level.
pub fn schedule_step(state: &PlcState, flipped: usize, schedule: &CorrectionSchedule) -> PlcState {
    let t = state.round + 1;
    let mut next = PlcState {
        round: t,
        flips_this_round: flipped,
        cumulative_flips: state.cumulative_flips + flipped,
        ..*state
    };
    if t >= schedule.warmup {
        if flipped == 0 {
            next.level = (next.level * (1.0 + schedule.beta)).min(schedule.cap());
        }
        next.threshold = threshold_for(schedule.mode, next.level);
    }
    next
}
