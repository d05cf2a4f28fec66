use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::pipeline::{run_pipeline, write_run_outputs};
use crate::error::Result;
use crate::par;
use crate::rng::derive_seed;

/// One point of the Cartesian grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub assignments: Vec<(String, String)>,
}

/// Cartesian product of the sweep axes, last axis varying fastest. No axes
/// (or an axis without values) gives no cells.
pub fn sweep_cells(config: &RunConfig) -> Vec<SweepCell> {
    let axes = &config.sweep.axes;
    if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
        return Vec::new();
    }
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    (0..total)
        .map(|index| {
            let mut rest = index;
            let mut assignments = vec![(String::new(), String::new()); axes.len()];
            for (slot, (key, values)) in assignments.iter_mut().zip(axes).rev() {
                *slot = (key.clone(), values[rest % values.len()].clone());
                rest /= values.len();
            }
            SweepCell { index, assignments }
        })
        .collect()
}

/// Seed of repeat `r`. Every cell shares it, so cells are compared on the
/// same data, noise and initialization.
pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    derive_seed(master, repeat as u64)
}

/// The run configuration of one (cell, repeat) pair.
pub fn cell_config(
    base: &RunConfig,
    cell: &SweepCell,
    repeat: usize,
    out: &Path,
) -> Result<RunConfig> {
    let mut config = base.clone();
    config.sweep = Default::default();
    for (key, value) in &cell.assignments {
        config.set(key, value)?;
    }
    config.seed = repeat_seed(base.seed, repeat);
    config.output_dir = cell_dir(out, cell.index, repeat);
    config.validate()?;
    Ok(config)
}

pub fn cell_dir(out: &Path, cell: usize, repeat: usize) -> PathBuf {
    out.join("cells")
        .join(format!("cell{cell:03}_rep{repeat:02}"))
}

/// Outcome of one run inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub cell: usize,
    pub repeat: usize,
    pub seed: u64,
    pub final_purity: Option<f64>,
    pub test_accuracy_bayes: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub runs: usize,
    pub failures: usize,
    pub purity_mean: Option<f64>,
    pub purity_std: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

/// Aggregates runs into one row per cell.
pub fn summarize(cells: &[SweepCell], runs: &[SweepRun]) -> Vec<SweepRow> {
    cells
        .iter()
        .map(|cell| {
            let mine: Vec<&SweepRun> = runs.iter().filter(|r| r.cell == cell.index).collect();
            let purity: Vec<f64> = mine.iter().filter_map(|r| r.final_purity).collect();
            let accuracy: Vec<f64> = mine.iter().filter_map(|r| r.test_accuracy_bayes).collect();
            let p = mean_std(&purity);
            let a = mean_std(&accuracy);
            SweepRow {
                cell: cell.clone(),
                runs: mine.len(),
                failures: mine.iter().filter(|r| r.error.is_some()).count(),
                purity_mean: p.map(|x| x.0),
                purity_std: p.map(|x| x.1),
                accuracy_mean: a.map(|x| x.0),
                accuracy_std: a.map(|x| x.1),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub axes: Vec<String>,
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

/// Runs every (cell, repeat) pair with correction, writing each run's
/// outputs under `out/cells/`. Failed runs are recorded and do not stop
/// the sweep.
pub fn run_sweep(config: &RunConfig, out: &Path) -> Result<SweepOutcome> {
    config.validate()?;
    let cells = sweep_cells(config);
    let mut jobs = Vec::new();
    for cell in &cells {
        for repeat in 0..config.sweep.repeats {
            jobs.push((cell.clone(), repeat));
        }
    }
    let runs = par::run_jobs(jobs, |(cell, repeat)| {
        let seed = repeat_seed(config.seed, repeat);
        let result = cell_config(config, &cell, repeat, out).and_then(|c| {
            let outcome = run_pipeline(&c, true)?;
            write_run_outputs(&c.output_dir, &outcome)?;
            Ok(outcome.report.summary)
        });
        let (final_purity, test_accuracy_bayes, error) = match result {
            Ok(s) => (Some(s.final_purity), s.test_accuracy_bayes, None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        SweepRun {
            cell: cell.index,
            repeat,
            seed,
            final_purity,
            test_accuracy_bayes,
            error,
        }
    });
    let rows = summarize(&cells, &runs);
    Ok(SweepOutcome {
        axes: config.sweep.axes.iter().map(|(k, _)| k.clone()).collect(),
        runs,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `cell,<axes...>,runs,failures,final_purity_mean,final_purity_std,test_acc_bayes_mean,test_acc_bayes_std`
pub fn write_sweep_summary<W: Write>(axes: &[String], rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(
        [
            "runs",
            "failures",
            "final_purity_mean",
            "final_purity_std",
            "test_acc_bayes_mean",
            "test_acc_bayes_std",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.cell.index.to_string()];
        record.extend(row.cell.assignments.iter().map(|(_, v)| v.clone()));
        record.extend([
            row.runs.to_string(),
            row.failures.to_string(),
            opt(row.purity_mean),
            opt(row.purity_std),
            opt(row.accuracy_mean),
            opt(row.accuracy_std),
        ]);
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
