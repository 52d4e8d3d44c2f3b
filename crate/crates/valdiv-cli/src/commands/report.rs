//! Consolidates a frontier run directory into plot-ready artifacts: the
//! Pareto frontier recomputed over the recorded point cloud, and the
//! model's valid-sequence probabilities sorted for a log-scale dump.

use std::path::Path;

use valdiv::cutoff::{CutoffRule, InducedMode};
use valdiv::enumerate::{exact_sequence_distribution, pareto_frontier};

use crate::error::CliError;
use crate::output::{fmt_f64, write_csv, RunMetadata};

/// Minimal view of a points.csv row; extra columns pass through untouched.
struct PointRow {
    x: f64,
    y: Option<f64>,
    rest: Vec<String>,
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                field.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(std::mem::take(&mut field)),
            c => field.push(c),
        }
    }
    fields.push(field);
    fields
}

fn read_points(path: &Path) -> Result<Vec<PointRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::config(format!("{}: empty points file", path.display())))?;
    if !header.starts_with("x,y,") {
        return Err(CliError::config(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() < 2 {
            return Err(CliError::config(format!(
                "{} row {}: too few columns",
                path.display(),
                i + 2
            )));
        }
        let bad =
            |what: &str| CliError::config(format!("{} row {}: bad {what}", path.display(), i + 2));
        let x: f64 = fields[0].parse().map_err(|_| bad("x"))?;
        let y: Option<f64> = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse().map_err(|_| bad("y"))?)
        };
        rows.push(PointRow {
            x,
            y,
            rest: fields[2..].to_vec(),
        });
    }
    Ok(rows)
}

pub fn run(run_dir: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let meta = RunMetadata::read(run_dir)?;
    if meta.command != "frontier" {
        return Err(CliError::config(format!(
            "report consolidates frontier runs; {} holds a {:?} run",
            run_dir.display(),
            meta.command
        )));
    }
    let out = out.unwrap_or(run_dir);
    let points = read_points(&run_dir.join("points.csv"))?;

    let defined: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.y.map(|y| (p.x, y)))
        .collect();
    let frontier = pareto_frontier(&defined);
    let mut rows = Vec::with_capacity(frontier.len());
    for (x, y) in &frontier {
        let source = points
            .iter()
            .find(|p| p.x == *x && p.y == Some(*y))
            .expect("frontier points come from the cloud");
        let mut row = vec![fmt_f64(*x), fmt_f64(*y)];
        row.extend(source.rest.iter().cloned());
        rows.push(row);
    }
    write_csv(
        &out.join("frontier_consolidated.csv"),
        &super::frontier::POINT_HEADER,
        &rows,
    )?;

    // the dump reflects the model itself, so no cutoff and unit temperature
    let config = &meta.config;
    let valid = config.require_task()?.build()?;
    let model = config.require_model()?.build(Some(&valid))?;
    let model = super::snapshot_remote(model, &valid)?;
    let rule = CutoffRule::no_filter(1.0).map_err(|e| CliError::config(e.to_string()))?;
    let dist = exact_sequence_distribution(
        model.as_conditional(),
        &rule,
        &valid,
        InducedMode::Renormalized,
    )?;
    let mut sequences: Vec<(&Vec<u32>, f64)> = dist.probs().iter().map(|(s, &p)| (s, p)).collect();
    sequences.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let valid_mass: f64 = sequences.iter().map(|(_, p)| p).sum();
    let mut dump = Vec::with_capacity(sequences.len() + 1);
    for (rank, (seq, prob)) in sequences.iter().enumerate() {
        let text = seq
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        dump.push(vec![
            rank.to_string(),
            "valid_seq".to_string(),
            text,
            fmt_f64(*prob),
        ]);
    }
    dump.push(vec![
        sequences.len().to_string(),
        "invalid_tail".to_string(),
        String::new(),
        fmt_f64((1.0 - valid_mass).max(0.0)),
    ]);
    write_csv(
        &out.join("sequences.csv"),
        &["rank", "kind", "sequence", "prob"],
        &dump,
    )?;

    println!(
        "report: {} frontier point(s), {} valid sequence(s) -> {}",
        frontier.len(),
        sequences.len(),
        out.display()
    );
    Ok(())
}
