//! Sweeps the rule and temperature grids, writing the full point cloud,
//! per-family and combined Pareto frontiers, and a summary with the exact
//! sequence precision and recall of every grid point.

use std::collections::BTreeMap;

use valdiv::enumerate::{
    frontier_from_points, temperature_frontier, FrontierPoint, RulePolicy, SweepPoint,
};
use valdiv::metrics::{sequence_precision, sequence_recall};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, write_csv, RunMetadata};

pub const POINT_HEADER: [&str; 6] = ["x", "y", "rule", "param", "temperature", "depth"];

fn point_row(p: &SweepPoint, depth: usize) -> Vec<String> {
    vec![
        fmt_f64(p.validity),
        fmt_opt(p.diversity),
        p.rule.clone(),
        fmt_opt(p.param),
        fmt_f64(p.temperature),
        depth.to_string(),
    ]
}

fn frontier_row(p: &FrontierPoint, depth: usize) -> Vec<String> {
    vec![
        fmt_f64(p.x),
        fmt_f64(p.y),
        p.provenance.rule.clone(),
        fmt_opt(p.provenance.param),
        fmt_opt(p.provenance.temperature),
        depth.to_string(),
    ]
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let valid = config.require_task()?.build()?;
    let model = config.require_model()?.build(Some(&valid))?;
    let model = super::snapshot_remote(model, &valid)?;
    let rules = config.expand_rules()?;
    let points = temperature_frontier(model.as_conditional(), &valid, &rules, config.mode.into())?;

    let depth = valid.depth();
    let point_rows: Vec<Vec<String>> = points.iter().map(|p| point_row(p, depth)).collect();
    write_csv(&config.out.join("points.csv"), &POINT_HEADER, &point_rows)?;

    // family order follows the rule grid, not alphabetical order
    let mut families: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<SweepPoint>> = BTreeMap::new();
    for p in &points {
        if !grouped.contains_key(p.rule.as_str()) {
            families.push(&p.rule);
        }
        grouped.entry(p.rule.as_str()).or_default().push(p.clone());
    }
    for family in &families {
        let frontier = frontier_from_points(&grouped[family]);
        let rows: Vec<Vec<String>> = frontier.iter().map(|p| frontier_row(p, depth)).collect();
        write_csv(
            &config.out.join(format!("frontier_{family}.csv")),
            &POINT_HEADER,
            &rows,
        )?;
    }
    let combined = frontier_from_points(&points);
    let rows: Vec<Vec<String>> = combined.iter().map(|p| frontier_row(p, depth)).collect();
    write_csv(&config.out.join("frontier.csv"), &POINT_HEADER, &rows)?;

    let task_label = config.require_task()?.label();
    let mut summary_rows = Vec::with_capacity(rules.len());
    for (rule, point) in rules.iter().zip(&points) {
        let policy = RulePolicy {
            model: model.as_conditional(),
            rule,
            valid: &valid,
        };
        let precision =
            sequence_precision(&policy, &valid).map_err(|e| CliError::config(e.to_string()))?;
        let recall =
            sequence_recall(&policy, &valid).map_err(|e| CliError::config(e.to_string()))?;
        summary_rows.push(vec![
            task_label.clone(),
            point.rule.clone(),
            fmt_opt(point.param),
            fmt_f64(point.temperature),
            fmt_f64(point.validity),
            fmt_opt(point.diversity),
            fmt_f64(precision),
            fmt_f64(recall),
        ]);
    }
    write_csv(
        &config.out.join("summary.csv"),
        &[
            "task",
            "rule",
            "param",
            "temperature",
            "validity",
            "diversity",
            "prec_seq",
            "rec_seq",
        ],
        &summary_rows,
    )?;

    RunMetadata::new("frontier", config).write(&config.out)?;
    println!(
        "frontier: {} points, {} on the combined frontier -> {}",
        points.len(),
        combined.len(),
        config.out.display()
    );
    Ok(())
}
