//! Fits ranked logits with a linear head and logarithmic tail. Input is
//! either a JSON Lines record file (one fit per conditional) or a plain
//! text file of one logit per line (a single fit).

use std::path::Path;

use valdiv::model_client::DistributionRecord;
use valdiv::ranked_dist::{fit_piecewise, LogitVector, PiecewiseLogitFit};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, write_csv, RunMetadata};

fn read_inputs(path: &Path) -> Result<Vec<LogitVector>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty());
    let is_jsonl = matches!(first, Some(l) if l.starts_with('{'));
    if is_jsonl {
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let record: DistributionRecord = serde_json::from_str(line)
                .map_err(|e| CliError::config(format!("{} line {}: {e}", path.display(), i + 1)))?;
            let scores: Vec<f64> = record.candidates.iter().map(|c| c.logprob).collect();
            vectors.push(LogitVector::from_scores(scores)?);
        }
        Ok(vectors)
    } else {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                CliError::config(format!(
                    "{} line {}: {line:?} is not a number",
                    path.display(),
                    i + 1
                ))
            })?;
            values.push(v);
        }
        // plain lines are already in rank order
        Ok(vec![LogitVector::from_ranked(values)?])
    }
}

fn fit_row(record: usize, fit: &PiecewiseLogitFit) -> Vec<String> {
    vec![
        record.to_string(),
        fmt_f64(fit.slope),
        fmt_f64(fit.intercept),
        fit.breakpoint.to_string(),
        fmt_f64(fit.tail_offset),
        fmt_f64(fit.tail_scale),
        fmt_f64(fit.tail_shift),
        fmt_f64(fit.mse),
        fmt_f64(fit.r_squared),
        fit.degenerate.to_string(),
    ]
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::config("fit-logits needs an input file"))?;
    let vectors = read_inputs(input)?;
    let mut fit_rows = Vec::with_capacity(vectors.len());
    let mut residual_rows = Vec::new();
    for (record, logits) in vectors.iter().enumerate() {
        let fit = fit_piecewise(logits)?;
        fit_rows.push(fit_row(record, &fit));
        for (rank, &observed) in logits.values().iter().enumerate() {
            let fitted = fit.value_at(rank);
            residual_rows.push(vec![
                record.to_string(),
                rank.to_string(),
                fmt_f64(observed),
                fmt_f64(fitted),
                fmt_f64(observed - fitted),
            ]);
        }
    }
    write_csv(
        &config.out.join("fit.csv"),
        &[
            "record",
            "m",
            "b",
            "c",
            "A",
            "B",
            "C",
            "mse",
            "r2",
            "degenerate",
        ],
        &fit_rows,
    )?;
    write_csv(
        &config.out.join("residuals.csv"),
        &["record", "rank", "observed", "fitted", "residual"],
        &residual_rows,
    )?;
    RunMetadata::new("fit-logits", config).write(&config.out)?;
    println!(
        "fit-logits: {} record(s) -> {}",
        vectors.len(),
        config.out.display()
    );
    Ok(())
}
