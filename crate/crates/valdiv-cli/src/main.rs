use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use valdiv_cli::commands;
use valdiv_cli::config::{parse_mode_flag, parse_model_flag, RawConfig, RuleSpec, TaskSpec};
use valdiv_cli::error::CliError;

/// Validity and diversity diagnostics for truncation-based decoding.
#[derive(Parser)]
#[command(name = "valdiv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep cutoff rules over a temperature grid; write the point cloud,
    /// per-family and combined Pareto frontiers, and a summary table.
    Frontier(RunArgs),
    /// Expand a rank-candidate tree, label completions, and write the
    /// labeled tree plus per-depth precision-recall frontiers.
    SweepTree(RunArgs),
    /// Run a verification suite; nonzero exit when any instance violates
    /// its bound.
    Verify {
        /// Suite name: decomposition, thm1, thm2, or delta_regimes.
        check: String,
        /// Seeded instances to draw; each suite has its own default.
        #[arg(long)]
        instances: Option<usize>,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Fit ranked logits with a linear head and logarithmic tail.
    FitLogits {
        /// JSON Lines record file, or plain text with one logit per line.
        input: PathBuf,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Consolidate a frontier run directory into plot-ready CSVs.
    Report {
        /// Directory written by a frontier run.
        run_dir: PathBuf,
        /// Output directory; defaults to the run directory itself.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Valid-set spec file (JSON).
    #[arg(long)]
    task: Option<PathBuf>,
    /// Model spec: geometric:lambda=1.0,vocab=50 | file:records.jsonl |
    /// remote:ENV_PREFIX,top=50
    #[arg(long)]
    model: Option<String>,
    /// Rule family to sweep; repeat for several families.
    #[arg(long)]
    rule: Vec<String>,
    /// Temperature grid.
    #[arg(long, value_delimiter = ',')]
    temps: Option<Vec<f64>>,
    /// Parameter grid; needs exactly one --rule.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    /// Candidate-tree depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Rank budget per node for sweep-tree.
    #[arg(long)]
    rank_limit: Option<usize>,
    /// Spacing between candidate ranks.
    #[arg(long)]
    stride: Option<usize>,
    /// Induced step distribution: uniform or renormalized.
    #[arg(long)]
    mode: Option<String>,
    /// Seed for every randomized choice in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Result<RawConfig, CliError> {
        let mut raw = RawConfig::default();
        if let Some(task) = &self.task {
            raw.task = Some(TaskSpec::File { file: task.clone() });
        }
        if let Some(model) = &self.model {
            raw.model = Some(parse_model_flag(model)?);
        }
        if !self.rule.is_empty() {
            let mut rules: Vec<RuleSpec> = self
                .rule
                .iter()
                .map(|name| RuleSpec::family(name))
                .collect();
            if let Some(params) = &self.params {
                if rules.len() != 1 {
                    return Err(CliError::config(
                        "--params needs exactly one --rule to apply to",
                    ));
                }
                rules[0].params = Some(params.clone());
            }
            raw.rules = Some(rules);
        } else if self.params.is_some() {
            return Err(CliError::config("--params without --rule has no target"));
        }
        if let Some(temps) = &self.temps {
            raw.temperatures = Some(temps.clone());
        }
        if let Some(mode) = &self.mode {
            raw.mode = Some(parse_mode_flag(mode)?);
        }
        raw.depth = self.depth;
        raw.rank_limit = self.rank_limit;
        raw.stride = self.stride;
        raw.seed = self.seed;
        raw.out = self.out.clone();
        Ok(raw)
    }

    fn resolve(&self) -> Result<valdiv_cli::config::RunConfig, CliError> {
        let base = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        Ok(base.merge(self.overrides()?).resolve())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Frontier(args) => commands::frontier::run(&args.resolve()?),
        Command::SweepTree(args) => commands::sweep_tree::run(&args.resolve()?),
        Command::Verify {
            check,
            instances,
            common,
        } => commands::verify::run(&check, instances, &common.resolve()?),
        Command::FitLogits { input, common } => {
            let mut config = common.resolve()?;
            config.input = Some(input);
            commands::fit_logits::run(&config)
        }
        Command::Report { run_dir, out } => commands::report::run(&run_dir, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
