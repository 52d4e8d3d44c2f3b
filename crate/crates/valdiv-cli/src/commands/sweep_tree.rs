//! Expands a rank-candidate tree, labels its completions, and writes the
//! labeled tree plus per-depth precision-recall frontiers. Judge failures
//! downgrade to unlabeled completions so one bad endpoint cannot sink a
//! long sweep; the warning count is reported on stderr.

use std::sync::atomic::{AtomicUsize, Ordering};

use valdiv::enumerate::{
    depth_frontier_summary, tree_sweep, Completer, EnumerateError, LeafLabel, LeafLabeler,
    OracleLabeler, SweepConfig,
};
use valdiv::model_client::{EndpointConfig, JudgeClient, JudgeLabeler};
use valdiv::valid_set::ValidSet;
use valdiv::TokenId;

use crate::config::{CompleterSpec, LabelerSpec, RunConfig, TaskSpec};
use crate::error::{from_client, CliError};
use crate::output::{fmt_f64, write_csv, write_file, RunMetadata};

/// Turns remote labeling failures into unlabeled leaves instead of errors.
struct Lenient<'a> {
    inner: &'a dyn LeafLabeler,
    warnings: AtomicUsize,
}

impl LeafLabeler for Lenient<'_> {
    fn label(&self, sequence: &[TokenId]) -> Result<LeafLabel, EnumerateError> {
        match self.inner.label(sequence) {
            Err(EnumerateError::Model { remote: true, .. }) => {
                self.warnings.fetch_add(1, Ordering::Relaxed);
                Ok(LeafLabel::Unlabeled)
            }
            other => other,
        }
    }
}

fn completion_length(config: &RunConfig, valid: Option<&ValidSet>) -> usize {
    if let Some(len) = config.completion_length {
        return len;
    }
    let minimum = config.start_prefix.len() + config.depth;
    match valid {
        Some(v) => v.depth().max(minimum),
        None => minimum,
    }
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let valid = config.task.as_ref().map(TaskSpec::build).transpose()?;
    let model = config.require_model()?.build(valid.as_ref())?;

    // the flag gives a rank budget; candidates sit at multiples of the
    // stride below it
    let candidates = config.rank_limit.div_ceil(config.stride.max(1));
    let completer = match config.completer {
        CompleterSpec::Greedy => Completer::Greedy,
        CompleterSpec::Sampled { n } => Completer::Sampled {
            n,
            seed: config.seed,
        },
    };
    let sweep = SweepConfig {
        depth: config.depth,
        rank_limit: candidates,
        stride: config.stride,
        completer,
        completion_length: completion_length(config, valid.as_ref()),
        start_prefix: config.start_prefix.clone(),
    };

    let judge_client;
    let labeler: Box<dyn LeafLabeler + '_> = match &config.labeler {
        LabelerSpec::Oracle => {
            let v = valid
                .as_ref()
                .ok_or_else(|| CliError::config("oracle labeling needs a task"))?;
            Box::new(OracleLabeler::new(v))
        }
        LabelerSpec::Judge {
            env_prefix,
            question,
            separator,
            threshold,
        } => {
            let interner = model.interner().ok_or_else(|| {
                CliError::config("judge labeling needs a tokenized model (file or remote)")
            })?;
            let endpoint = EndpointConfig::from_env(env_prefix).map_err(from_client)?;
            judge_client = JudgeClient::new(endpoint, *threshold).map_err(from_client)?;
            Box::new(JudgeLabeler::new(
                &judge_client,
                interner,
                question.clone(),
                separator.clone(),
            ))
        }
    };
    let lenient = Lenient {
        inner: labeler.as_ref(),
        warnings: AtomicUsize::new(0),
    };

    let tree = tree_sweep(model.as_conditional(), &sweep, &lenient)?;

    let mut text = serde_json::to_string_pretty(&tree).expect("tree serializes");
    text.push('\n');
    write_file(&config.out.join("tree.json"), &text)?;

    let frontiers = depth_frontier_summary(&tree);
    let mut rows = Vec::new();
    for frontier in &frontiers {
        for point in &frontier.grid {
            rows.push(vec![
                frontier.depth.to_string(),
                fmt_f64(point.precision),
                fmt_f64(point.max_recall),
                fmt_f64(point.min_recall),
                fmt_f64(point.mean_recall),
            ]);
        }
    }
    write_csv(
        &config.out.join("depth_frontiers.csv"),
        &[
            "depth",
            "precision",
            "max_recall",
            "min_recall",
            "mean_recall",
        ],
        &rows,
    )?;
    RunMetadata::new("sweep-tree", config).write(&config.out)?;

    let warnings = lenient.warnings.load(Ordering::Relaxed);
    if warnings > 0 {
        eprintln!("warning: {warnings} labeling call(s) failed; their completions stay unlabeled");
    }
    println!(
        "sweep-tree: {} nodes, {} unlabeled completion(s) -> {}",
        tree.nodes.len(),
        tree.unlabeled_completions,
        config.out.display()
    );
    Ok(())
}
