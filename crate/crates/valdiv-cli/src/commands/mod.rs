pub mod fit_logits;
pub mod frontier;
pub mod report;
pub mod sweep_tree;
pub mod verify;

use valdiv::enumerate::{ConditionalModel, TableModel};
use valdiv::valid_set::ValidSet;

use crate::config::BuiltModel;
use crate::error::CliError;

/// Model actually driven by a sweep: the built one, or a local table
/// snapshotted from a remote endpoint.
pub enum RunModel {
    Live(Box<BuiltModel>),
    Table(TableModel),
}

impl RunModel {
    pub fn as_conditional(&self) -> &(dyn ConditionalModel + Sync) {
        match self {
            Self::Live(m) => m.as_conditional(),
            Self::Table(t) => t,
        }
    }
}

/// Remote models get queried once per valid prefix and the answers cached;
/// exact sweeps revisit each prefix once per grid point, which would
/// otherwise multiply traffic by the grid size.
pub fn snapshot_remote(model: BuiltModel, valid: &ValidSet) -> Result<RunModel, CliError> {
    if !matches!(model, BuiltModel::Remote(_)) {
        return Ok(RunModel::Live(Box::new(model)));
    }
    let live = model.as_conditional();
    let mut table = TableModel::new(live.vocab_size());
    let mut stack = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() + 1 < valid.depth() {
            for token in valid.valid_tokens(&prefix) {
                let mut next = prefix.clone();
                next.push(token);
                stack.push(next);
            }
        }
        let dist = live.distribution(&prefix)?;
        table.insert(prefix, dist);
    }
    Ok(RunModel::Table(table))
}
