//! Run configuration: a TOML-or-JSON file merged with flag overrides,
//! resolved against the default grids, and hashed for the metadata sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use valdiv::cutoff::{CutoffRule, InducedMode};
use valdiv::enumerate::{ConditionalModel, GeometricConditional, RankArrangement};
use valdiv::model_client::{
    load_distributions, remote_model, FileModel, RemoteModel, TokenInterner,
};
use valdiv::ranked_dist::GeometricRankedModel;
use valdiv::valid_set::{ValidSet, ValidSetSpec};
use valdiv::TokenId;

use crate::error::{from_client, CliError};

/// Decoding temperature grid swept by default.
pub const DEFAULT_TEMPERATURES: [f64; 12] =
    [0.01, 0.3, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.5, 3.0];
/// Default k grid for top-k truncation.
pub const DEFAULT_TOP_K: [f64; 6] = [10.0, 20.0, 50.0, 80.0, 100.0, 500.0];
/// Default p grid for top-p (nucleus) truncation.
pub const DEFAULT_TOP_P: [f64; 5] = [0.1, 0.5, 0.7, 0.9, 0.95];
/// Default floor-ratio grid for min-p truncation.
pub const DEFAULT_MIN_P: [f64; 4] = [0.01, 0.1, 0.5, 0.9];

/// Rule families swept when the config names none.
pub const DEFAULT_FAMILIES: [&str; 5] = ["top_k", "top_p", "min_p", "none", "oracle_size"];

const KNOWN_FAMILIES: [&str; 7] = [
    "top_k",
    "top_p",
    "min_p",
    "fixed_index",
    "none",
    "oracle_size",
    "oracle_validity",
];

fn default_tree_depth() -> usize {
    3
}

fn default_rank_budget() -> usize {
    1000
}

fn default_stride() -> usize {
    10
}

/// Where the valid set comes from: a spec file on disk or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    File { file: PathBuf },
    Inline(ValidSetSpec),
}

impl TaskSpec {
    pub fn build(&self) -> Result<ValidSet, CliError> {
        let spec = match self {
            Self::File { file } => {
                let text =
                    std::fs::read_to_string(file).map_err(|e| CliError::io(file.clone(), e))?;
                serde_json::from_str::<ValidSetSpec>(&text)
                    .map_err(|e| CliError::config(format!("task file {}: {e}", file.display())))?
            }
            Self::Inline(spec) => spec.clone(),
        };
        ValidSet::from_spec(&spec).map_err(CliError::from)
    }

    /// Short identifier used in the summary CSV.
    pub fn label(&self) -> String {
        match self {
            Self::File { file } => file.display().to_string(),
            Self::Inline(spec) => match serde_json::to_value(spec) {
                Ok(serde_json::Value::Object(map)) => {
                    if let Some(name) = map.get("generator").and_then(|v| v.as_str()) {
                        name.to_string()
                    } else {
                        "explicit".to_string()
                    }
                }
                _ => "explicit".to_string(),
            },
        }
    }
}

/// How valid-set tokens map onto the rank order of a geometric model.
/// Unit variants read as plain strings; the interleaved form reads as
/// `{ interleaved_valid = { stride = n } }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum ArrangementSpec {
    #[default]
    Identity,
    TopRankedValid,
    InterleavedValid {
        stride: usize,
    },
}

impl From<ArrangementSpec> for RankArrangement {
    fn from(a: ArrangementSpec) -> Self {
        match a {
            ArrangementSpec::Identity => Self::Identity,
            ArrangementSpec::TopRankedValid => Self::TopRankedValid,
            ArrangementSpec::InterleavedValid { stride } => Self::InterleavedValid { stride },
        }
    }
}

fn default_base_temperature() -> f64 {
    1.0
}

fn is_base_temperature(t: &f64) -> bool {
    *t == 1.0
}

/// The conditional model under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Synthetic geometric rank decay, tied to the task through an
    /// arrangement of valid tokens over ranks.
    Geometric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambdas: Option<Vec<f64>>,
        vocab: usize,
        #[serde(
            default = "default_base_temperature",
            skip_serializing_if = "is_base_temperature"
        )]
        temperature: f64,
        #[serde(default)]
        arrangement: ArrangementSpec,
    },
    /// Conditionals read from a JSON Lines record file.
    File { path: PathBuf },
    /// Conditionals queried from an HTTP endpoint; credentials come from
    /// `{env_prefix}_URL` and friends.
    Remote { env_prefix: String, top: usize },
}

/// A built model plus the interner when the model carries token strings.
pub enum BuiltModel {
    Geometric(GeometricConditional),
    File(FileModel),
    Remote(RemoteModel),
}

impl BuiltModel {
    pub fn as_conditional(&self) -> &(dyn ConditionalModel + Sync) {
        match self {
            Self::Geometric(m) => m,
            Self::File(m) => m,
            Self::Remote(m) => m,
        }
    }

    pub fn interner(&self) -> Option<&TokenInterner> {
        match self {
            Self::Geometric(_) => None,
            Self::File(m) => Some(m.interner()),
            Self::Remote(m) => Some(m.interner()),
        }
    }
}

impl ModelSpec {
    /// Geometric models are defined relative to a task; file and remote
    /// models ignore it.
    pub fn build(&self, valid: Option<&ValidSet>) -> Result<BuiltModel, CliError> {
        match self {
            Self::Geometric {
                lambda,
                lambdas,
                vocab,
                temperature,
                arrangement,
            } => {
                let valid =
                    valid.ok_or_else(|| CliError::config("a geometric model needs a task"))?;
                let model = match (lambda, lambdas) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::config(
                            "geometric model takes lambda or lambdas, not both",
                        ))
                    }
                    (Some(l), None) => {
                        GeometricRankedModel::constant(*l, valid.depth(), *temperature, *vocab)?
                    }
                    (None, Some(ls)) => {
                        if ls.len() != valid.depth() {
                            return Err(CliError::config(format!(
                                "geometric model lists {} lambdas for a depth-{} task",
                                ls.len(),
                                valid.depth()
                            )));
                        }
                        GeometricRankedModel::new(ls.clone(), *temperature, *vocab)?
                    }
                    (None, None) => {
                        return Err(CliError::config("geometric model needs lambda or lambdas"))
                    }
                };
                let conditional =
                    GeometricConditional::new(model, valid.clone(), (*arrangement).into())?;
                Ok(BuiltModel::Geometric(conditional))
            }
            Self::File { path } => {
                let model = load_distributions(path).map_err(from_client)?;
                Ok(BuiltModel::File(model))
            }
            Self::Remote { env_prefix, top } => {
                let model = remote_model(env_prefix, *top).map_err(from_client)?;
                Ok(BuiltModel::Remote(model))
            }
        }
    }
}

/// One rule family and the parameter grid swept for it. An empty grid
/// means the family's default grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    /// Half-open [start, end) window outside which oracle rules pass
    /// everything through.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_steps: Option<(usize, usize)>,
}

impl RuleSpec {
    pub fn family(name: &str) -> Self {
        Self {
            rule: name.to_string(),
            params: None,
            oracle_steps: None,
        }
    }

    fn default_params(&self) -> Result<Vec<Option<f64>>, CliError> {
        let grid: Vec<Option<f64>> = match self.rule.as_str() {
            "top_k" => DEFAULT_TOP_K.iter().copied().map(Some).collect(),
            "top_p" => DEFAULT_TOP_P.iter().copied().map(Some).collect(),
            "min_p" => DEFAULT_MIN_P.iter().copied().map(Some).collect(),
            "none" | "oracle_size" | "oracle_validity" => vec![None],
            "fixed_index" => {
                return Err(CliError::config(
                    "fixed_index has no default grid; give params explicitly",
                ))
            }
            other => {
                return Err(CliError::config(format!(
                    "unknown rule family {other:?}; known: {}",
                    KNOWN_FAMILIES.join(", ")
                )))
            }
        };
        Ok(grid)
    }

    fn params(&self) -> Result<Vec<Option<f64>>, CliError> {
        match &self.params {
            None => self.default_params(),
            Some(ps) if ps.is_empty() => self.default_params(),
            Some(ps) => {
                if matches!(
                    self.rule.as_str(),
                    "none" | "oracle_size" | "oracle_validity"
                ) {
                    return Err(CliError::config(format!(
                        "rule {} takes no parameters",
                        self.rule
                    )));
                }
                Ok(ps.iter().copied().map(Some).collect())
            }
        }
    }

    fn build_rule(&self, param: Option<f64>, temperature: f64) -> Result<CutoffRule, CliError> {
        let integer = |p: f64, what: &str| -> Result<usize, CliError> {
            if p.fract() == 0.0 && p >= 0.0 && p <= usize::MAX as f64 {
                Ok(p as usize)
            } else {
                Err(CliError::config(format!(
                    "{what} needs an integer, got {p}"
                )))
            }
        };
        let rule = match (self.rule.as_str(), param) {
            ("top_k", Some(p)) => CutoffRule::top_k(integer(p, "top_k")?, temperature),
            ("top_p", Some(p)) => CutoffRule::top_p(p, temperature),
            ("min_p", Some(p)) => CutoffRule::min_p(p, temperature),
            ("fixed_index", Some(p)) => {
                CutoffRule::fixed_index(integer(p, "fixed_index")?, temperature)
            }
            ("none", None) => CutoffRule::no_filter(temperature),
            ("oracle_size", None) => CutoffRule::oracle_size(temperature),
            ("oracle_validity", None) => CutoffRule::oracle_validity(temperature),
            (name, _) => {
                return Err(CliError::config(format!(
                    "rule family {name:?} given an unexpected parameter shape"
                )))
            }
        };
        let mut rule = rule.map_err(|e| CliError::config(e.to_string()))?;
        if let Some((start, end)) = self.oracle_steps {
            rule = rule.with_oracle_steps(start, end);
        }
        Ok(rule)
    }
}

/// Induced step distribution over the retained set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum ModeSpec {
    Uniform,
    #[default]
    Renormalized,
}

impl From<ModeSpec> for InducedMode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::Uniform => Self::Uniform,
            ModeSpec::Renormalized => Self::Renormalized,
        }
    }
}

/// How tree-sweep candidates are extended to full completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "completer", rename_all = "snake_case")]
#[derive(Default)]
pub enum CompleterSpec {
    #[default]
    Greedy,
    Sampled {
        n: usize,
    },
}

fn default_threshold() -> u8 {
    9
}

/// Who labels tree-sweep completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "labeler", rename_all = "snake_case")]
#[derive(Default)]
pub enum LabelerSpec {
    /// Membership in the task's valid set.
    #[default]
    Oracle,
    /// Remote judge endpoint; needs a tokenized (file or remote) model.
    Judge {
        env_prefix: String,
        question: String,
        #[serde(default)]
        separator: String,
        #[serde(default = "default_threshold")]
        threshold: u8,
    },
}

/// Everything a run needs, after merging file, flags, and defaults. The
/// resolved value is embedded in the metadata sidecar, so a run directory
/// fully describes how to redo the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    pub rules: Vec<RuleSpec>,
    pub temperatures: Vec<f64>,
    pub mode: ModeSpec,
    /// Candidate-tree depth for sweep-tree.
    pub depth: usize,
    /// Rank budget per node; candidates sit at ranks 0, stride, ... below it.
    pub rank_limit: usize,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_length: Option<usize>,
    pub completer: CompleterSpec,
    pub labeler: LabelerSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub start_prefix: Vec<TokenId>,
    /// Input file for fit-logits; recorded here so the sidecar names it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn require_task(&self) -> Result<&TaskSpec, CliError> {
        self.task
            .as_ref()
            .ok_or_else(|| CliError::config("no task given; set one in the config file or --task"))
    }

    pub fn require_model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| {
            CliError::config("no model given; set one in the config file or --model")
        })
    }

    /// Expands the rule grid against the temperature grid, family-major.
    pub fn expand_rules(&self) -> Result<Vec<CutoffRule>, CliError> {
        if self.rules.is_empty() {
            return Err(CliError::config("rule grid is empty"));
        }
        if self.temperatures.is_empty() {
            return Err(CliError::config("temperature grid is empty"));
        }
        let mut out = Vec::new();
        for family in &self.rules {
            for param in family.params()? {
                for &t in &self.temperatures {
                    out.push(family.build_rule(param, t)?);
                }
            }
        }
        Ok(out)
    }

    /// Hash of the canonical JSON form, stamped into the sidecar.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Partial config as read from a file or assembled from flags; `None`
/// fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub task: Option<TaskSpec>,
    pub model: Option<ModelSpec>,
    pub rules: Option<Vec<RuleSpec>>,
    pub temperatures: Option<Vec<f64>>,
    pub mode: Option<ModeSpec>,
    pub depth: Option<usize>,
    pub rank_limit: Option<usize>,
    pub stride: Option<usize>,
    pub completion_length: Option<usize>,
    pub completer: Option<CompleterSpec>,
    pub labeler: Option<LabelerSpec>,
    pub start_prefix: Option<Vec<TokenId>>,
    pub input: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RawConfig {
    /// TOML first, then JSON; the file extension is not trusted.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
        let toml_err = match toml::from_str::<Self>(&text) {
            Ok(cfg) => return Ok(cfg),
            Err(e) => e,
        };
        match serde_json::from_str::<Self>(&text) {
            Ok(cfg) => Ok(cfg),
            Err(json_err) => Err(CliError::config(format!(
                "{} parses as neither TOML ({toml_err}) nor JSON ({json_err})",
                path.display()
            ))),
        }
    }

    /// Fields set in `over` replace fields here.
    pub fn merge(self, over: Self) -> Self {
        Self {
            task: over.task.or(self.task),
            model: over.model.or(self.model),
            rules: over.rules.or(self.rules),
            temperatures: over.temperatures.or(self.temperatures),
            mode: over.mode.or(self.mode),
            depth: over.depth.or(self.depth),
            rank_limit: over.rank_limit.or(self.rank_limit),
            stride: over.stride.or(self.stride),
            completion_length: over.completion_length.or(self.completion_length),
            completer: over.completer.or(self.completer),
            labeler: over.labeler.or(self.labeler),
            start_prefix: over.start_prefix.or(self.start_prefix),
            input: over.input.or(self.input),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
        }
    }

    pub fn resolve(self) -> RunConfig {
        RunConfig {
            task: self.task,
            model: self.model,
            rules: self.rules.unwrap_or_else(|| {
                DEFAULT_FAMILIES
                    .iter()
                    .map(|f| RuleSpec::family(f))
                    .collect()
            }),
            temperatures: self
                .temperatures
                .unwrap_or_else(|| DEFAULT_TEMPERATURES.to_vec()),
            mode: self.mode.unwrap_or_default(),
            depth: self.depth.unwrap_or_else(default_tree_depth),
            rank_limit: self.rank_limit.unwrap_or_else(default_rank_budget),
            stride: self.stride.unwrap_or_else(default_stride),
            completion_length: self.completion_length,
            completer: self.completer.unwrap_or_default(),
            labeler: self.labeler.unwrap_or_default(),
            start_prefix: self.start_prefix.unwrap_or_default(),
            input: self.input,
            seed: self.seed.unwrap_or(0),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
        }
    }
}

/// Parses the `--model` flag: `geometric:lambda=1.0,vocab=50`,
/// `file:records.jsonl`, or `remote:VALDIV_MODEL,top=50`.
pub fn parse_model_flag(text: &str) -> Result<ModelSpec, CliError> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| CliError::config(format!("model {text:?} lacks a kind prefix")))?;
    match kind {
        "file" => Ok(ModelSpec::File {
            path: PathBuf::from(rest),
        }),
        "remote" => {
            let mut prefix = None;
            let mut top = 50usize;
            for part in rest.split(',') {
                match part.split_once('=') {
                    None => prefix = Some(part.to_string()),
                    Some(("top", v)) => {
                        top = v.parse().map_err(|_| {
                            CliError::config(format!("remote top {v:?} is not an integer"))
                        })?
                    }
                    Some((k, _)) => {
                        return Err(CliError::config(format!("unknown remote field {k:?}")))
                    }
                }
            }
            let env_prefix =
                prefix.ok_or_else(|| CliError::config("remote model needs an env prefix"))?;
            Ok(ModelSpec::Remote { env_prefix, top })
        }
        "geometric" => {
            let mut lambda = None;
            let mut lambdas = None;
            let mut vocab = None;
            let mut temperature = 1.0;
            let mut arrangement = ArrangementSpec::Identity;
            let float = |k: &str, v: &str| -> Result<f64, CliError> {
                v.parse::<f64>()
                    .map_err(|_| CliError::config(format!("geometric {k} {v:?} is not a number")))
            };
            for part in rest.split(',') {
                let (k, v) = part.split_once('=').ok_or_else(|| {
                    CliError::config(format!("geometric field {part:?} lacks '='"))
                })?;
                match k {
                    "lambda" => lambda = Some(float(k, v)?),
                    "lambdas" => {
                        let parsed: Result<Vec<f64>, _> =
                            v.split('|').map(|x| float("lambdas", x)).collect();
                        lambdas = Some(parsed?);
                    }
                    "vocab" => {
                        vocab = Some(v.parse::<usize>().map_err(|_| {
                            CliError::config(format!("geometric vocab {v:?} is not an integer"))
                        })?)
                    }
                    "temperature" => temperature = float(k, v)?,
                    "arrangement" => {
                        arrangement = match v.split_once(':') {
                            None if v == "identity" => ArrangementSpec::Identity,
                            None if v == "top_ranked_valid" => ArrangementSpec::TopRankedValid,
                            Some(("interleaved_valid", s)) => ArrangementSpec::InterleavedValid {
                                stride: s.parse().map_err(|_| {
                                    CliError::config(format!(
                                        "interleaved stride {s:?} is not an integer"
                                    ))
                                })?,
                            },
                            _ => {
                                return Err(CliError::config(format!("unknown arrangement {v:?}")))
                            }
                        }
                    }
                    other => {
                        return Err(CliError::config(format!(
                            "unknown geometric field {other:?}"
                        )))
                    }
                }
            }
            Ok(ModelSpec::Geometric {
                lambda,
                lambdas,
                vocab: vocab.ok_or_else(|| CliError::config("geometric model needs vocab=<n>"))?,
                temperature,
                arrangement,
            })
        }
        other => Err(CliError::config(format!(
            "unknown model kind {other:?}; known: geometric, file, remote"
        ))),
    }
}

/// Parses the `--mode` flag.
pub fn parse_mode_flag(text: &str) -> Result<ModeSpec, CliError> {
    match text {
        "uniform" => Ok(ModeSpec::Uniform),
        "renormalized" => Ok(ModeSpec::Renormalized),
        other => Err(CliError::config(format!(
            "unknown mode {other:?}; known: uniform, renormalized"
        ))),
    }
}
