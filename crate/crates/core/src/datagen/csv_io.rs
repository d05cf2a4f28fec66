use std::io::{Read, Write};

use super::{Split, WorkingDataset};
use crate::error::{validation, Result};

const LABEL_COLUMNS: [&str; 4] = ["y_clean", "y_bayes", "y_noisy", "y_working"];

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `x0,..,x{d-1},y_clean,y_bayes,y_noisy,y_working`, one row per sample.
pub fn write_dataset_csv<W: Write>(dataset: &WorkingDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..dataset.dimension).map(|j| format!("x{j}")).collect();
    header.extend(LABEL_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.len() {
        record.clear();
        record.extend(dataset.row(i).iter().map(|v| format_sig9(*v)));
        record.push(dataset.clean_labels[i].to_string());
        record.push(dataset.bayes_labels[i].to_string());
        record.push(dataset.noisy_labels[i].to_string());
        record.push(dataset.working_labels[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. `num_classes` defaults to one more than the largest
/// label seen.
pub fn read_dataset_csv<R: Read>(
    reader: R,
    num_classes: Option<usize>,
    split: Split,
) -> Result<WorkingDataset> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let ncols = header.len();
    if ncols < LABEL_COLUMNS.len() + 1 {
        return Err(validation(
            "dataset CSV needs at least one feature column and four label columns",
        ));
    }
    let d = ncols - LABEL_COLUMNS.len();
    for (j, name) in header.iter().enumerate() {
        let expected = if j < d {
            format!("x{j}")
        } else {
            LABEL_COLUMNS[j - d].to_string()
        };
        if name != expected {
            return Err(validation(format!(
                "column {j} is '{name}', expected '{expected}'"
            )));
        }
    }
    let mut features = Vec::new();
    let mut channels: [Vec<usize>; 4] = Default::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for j in 0..d {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| validation(format!("row {}: bad feature '{}'", line + 1, &rec[j])))?;
            features.push(v);
        }
        for (k, ch) in channels.iter_mut().enumerate() {
            let v: usize = rec[d + k].trim().parse().map_err(|_| {
                validation(format!("row {}: bad label '{}'", line + 1, &rec[d + k]))
            })?;
            ch.push(v);
        }
    }
    let max_label = channels.iter().flatten().copied().max().unwrap_or(0);
    let num_classes = num_classes.unwrap_or(max_label + 1);
    let [clean, bayes, noisy, working] = channels;
    let ds = WorkingDataset {
        dimension: d,
        num_classes,
        features,
        clean_labels: clean,
        bayes_labels: bayes,
        noisy_labels: noisy,
        working_labels: working,
        split,
    };
    ds.validate()?;
    Ok(ds)
}
