//! Acceptance gate for the runner: the constructed ideal-point testbed and
//! the byte-level reproducibility guarantee. Each test prints one PASS line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use valdiv::cutoff::{CutoffRule, InducedMode};
use valdiv::enumerate::{temperature_frontier, TableModel};
use valdiv::ranked_dist::RankedDistribution;
use valdiv::valid_set::ValidSet;
use valdiv_cli::config::{DEFAULT_MIN_P, DEFAULT_TEMPERATURES, DEFAULT_TOP_K, DEFAULT_TOP_P};

fn pass(label: &str, start: Instant) {
    println!("PASS {label} ({:.2}s)", start.elapsed().as_secs_f64());
}

/// Seven valid sequences [i,0,0], i in 1..=7, inside a 12-token vocabulary.
/// The model ranks tokens so the valid ones always lead, and uses one
/// strictly decreasing probability shape at every prefix; any mass- or
/// count-based cut therefore keeps the same number of tokens at the root
/// (7 valid continuations) as at the leaves (1 valid continuation).
fn ideal_point_testbed() -> (TableModel, ValidSet) {
    let sequences: Vec<Vec<u32>> = (1..=7).map(|i| vec![i, 0, 0]).collect();
    let valid = ValidSet::from_sequences(&sequences).unwrap();

    let shape: Vec<f64> = {
        let raw: Vec<f64> = (0..12).map(|k| 0.7f64.powi(k)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    };
    let row =
        |tokens: Vec<u32>| RankedDistribution::from_probs(shape.clone(), Some(tokens)).unwrap();

    let mut model = TableModel::new(12);
    model.insert(vec![], row(vec![1, 2, 3, 4, 5, 6, 7, 0, 8, 9, 10, 11]));
    let inner = vec![0, 8, 9, 10, 11, 1, 2, 3, 4, 5, 6, 7];
    for i in 1..=7 {
        model.insert(vec![i], row(inner.clone()));
        model.insert(vec![i, 0], row(inner.clone()));
    }
    (model, valid)
}

#[test]
fn oracle_size_attains_the_ideal_point_where_baselines_cannot() {
    let start = Instant::now();
    let (model, valid) = ideal_point_testbed();

    let mut rules = Vec::new();
    for &t in &DEFAULT_TEMPERATURES {
        for &k in &DEFAULT_TOP_K {
            rules.push(CutoffRule::top_k(k as usize, t).unwrap());
        }
        for &p in &DEFAULT_TOP_P {
            rules.push(CutoffRule::top_p(p, t).unwrap());
        }
        for &p in &DEFAULT_MIN_P {
            rules.push(CutoffRule::min_p(p, t).unwrap());
        }
        rules.push(CutoffRule::no_filter(t).unwrap());
        rules.push(CutoffRule::oracle_size(t).unwrap());
    }
    assert_eq!(rules.len(), 204);

    let points = temperature_frontier(&model, &valid, &rules, InducedMode::Uniform).unwrap();
    let mut oracle_points = 0;
    for point in &points {
        if point.rule == "oracle_size" {
            let diversity = point.diversity.expect("oracle keeps valid mass");
            assert!(
                (point.validity - 1.0).abs() <= 1e-12 && (diversity - 1.0).abs() <= 1e-12,
                "oracle point drifted: validity {} diversity {diversity} at T={}",
                point.validity,
                point.temperature
            );
            oracle_points += 1;
        } else {
            let diversity = point.diversity.unwrap_or(0.0);
            assert!(
                point.validity < 1.0 - 1e-9 || diversity < 1.0 - 1e-9,
                "{}({:?}) at T={} reached validity {} diversity {diversity}",
                point.rule,
                point.param,
                point.temperature,
                point.validity
            );
        }
    }
    assert_eq!(oracle_points, 12);
    assert!(start.elapsed().as_secs() < 60, "over the 1 minute budget");
    pass(
        "oracle-size cut hits (1,1) on all 12 temperatures; 192 baseline points cannot",
        start,
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_valdiv"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(next) = stack.pop() {
        for entry in std::fs::read_dir(&next).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn assert_identical(first: &BTreeMap<String, Vec<u8>>, second: &BTreeMap<String, Vec<u8>>) {
    let names: Vec<&String> = first.keys().collect();
    let renames: Vec<&String> = second.keys().collect();
    assert_eq!(names, renames, "file sets differ between runs");
    for (name, bytes) in first {
        assert_eq!(bytes, &second[name], "{name} differs between runs");
    }
}

#[test]
fn identical_config_and_seed_reproduce_outputs_byte_for_byte() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("task.json"),
        r#"{"generator": "digits_unconstrained", "params": {"d": 2, "base": 4}}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("logits.txt"),
        (0..30)
            .map(|k| format!("{}\n", 3.0 - 0.25 * k as f64))
            .collect::<String>(),
    )
    .unwrap();

    let runs: Vec<Vec<&str>> = vec![
        vec![
            "frontier",
            "--task",
            "task.json",
            "--model",
            "geometric:lambda=0.9,vocab=8",
            "--rule",
            "top_k",
            "--rule",
            "min_p",
            "--temps",
            "0.5,1.0,2.0",
            "--seed",
            "17",
            "--out",
            "frontier_run",
        ],
        vec![
            "verify",
            "decomposition",
            "--instances",
            "25",
            "--seed",
            "17",
            "--out",
            "verify_run",
        ],
        vec!["fit-logits", "logits.txt", "--out", "fit_run"],
        vec!["report", "frontier_run", "--out", "report_run"],
    ];

    for args in &runs {
        let out_dir = dir.path().join(args.last().unwrap());
        let first_status = bin().current_dir(dir.path()).args(args).output().unwrap();
        assert!(
            first_status.status.success(),
            "{:?}: {}",
            args[0],
            String::from_utf8_lossy(&first_status.stderr)
        );
        let first = snapshot(&out_dir);
        assert!(!first.is_empty());
        let again = bin().current_dir(dir.path()).args(args).output().unwrap();
        assert!(again.status.success());
        assert_identical(&first, &snapshot(&out_dir));
        assert_eq!(
            first_status.stdout, again.stdout,
            "{:?} stdout differs",
            args[0]
        );
    }
    pass(
        "frontier, verify, fit-logits and report rerun byte-identically",
        start,
    );
}
