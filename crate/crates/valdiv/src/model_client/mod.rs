//! Conditional distributions from outside the process: JSONL captures, a
//! next-token HTTP endpoint, and an LLM judge for labeling generations.
//!
//! Everything external is validated at the boundary. A file or endpoint can
//! only ever produce a well-formed [`RankedDistribution`] or a structured
//! error; nothing downstream re-checks provenance.
//!
//! Wire formats are fixed so adapters can be written against them:
//!
//! - distribution query: POST `{"prefix": [string, ...], "top": int}`,
//!   response `{"candidates": [{"token": string, "logprob": number}, ...]}`
//! - judge query: POST `{"prompt": string}`, response `{"text": string}`
//!
//! Vendor-specific logprob formats are converted by thin external shims,
//! not here.

mod judge;
#[cfg(test)]
mod tests;

pub use judge::{
    judge_prompt, JudgeClient, JudgeLabeler, JudgeOutcome, JudgeVerdict, JUDGE_PROMPT_TEMPLATE,
};

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enumerate::{ConditionalModel, EnumerateError};
use crate::ranked_dist::{DistributionError, RankedDistribution};
use crate::TokenId;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: not a distribution record: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("line {line}: prefix already defined earlier in the file")]
    DuplicatePrefix { line: usize },
    #[error("line {line}: {detail}")]
    BadRecord { line: usize, detail: String },
    #[error("token id {id} has no interned surface string")]
    UnknownTokenId { id: TokenId },
    #[error("environment variable {name} is not set")]
    MissingEnv { name: String },
    #[error("environment variable {name}: {detail}")]
    BadEnv { name: String, detail: String },
    #[error("judge threshold must lie in 1..=10, got {value}")]
    BadThreshold { value: u8 },
    #[error("response violates the wire schema: {detail}")]
    Schema { detail: String },
    #[error("{url} answered with status {code}")]
    Status { url: String, code: u16 },
    #[error("{url} timed out on all {attempts} attempts")]
    Timeout { url: String, attempts: u32 },
    #[error("cannot reach {url} after {attempts} attempts: {detail}")]
    Transport {
        url: String,
        attempts: u32,
        detail: String,
    },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

impl ClientError {
    /// Whether the failure happened on the far side of a network call.
    pub fn is_remote(&self) -> bool {
        matches!(
            self,
            ClientError::Schema { .. }
                | ClientError::Status { .. }
                | ClientError::Timeout { .. }
                | ClientError::Transport { .. }
        )
    }

    fn into_model_error(self) -> EnumerateError {
        EnumerateError::Model {
            remote: self.is_remote(),
            detail: self.to_string(),
        }
    }
}

/// One candidate continuation as captured from a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

/// One captured conditional: the prefix it was queried at and the scored
/// candidates that came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub prefix: Vec<String>,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<RecordMetadata>,
}

/// The shared candidate checks: non-empty, finite log-probabilities, no
/// repeated token. Returns the first problem found.
fn candidate_issue(candidates: &[Candidate]) -> Option<String> {
    if candidates.is_empty() {
        return Some("candidate list is empty".into());
    }
    let mut seen = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if !c.logprob.is_finite() {
            return Some(format!(
                "candidate {i} ({:?}) has log-probability {}",
                c.token, c.logprob
            ));
        }
        if let Some(first) = seen.insert(c.token.as_str(), i) {
            return Some(format!(
                "candidate {i} repeats token {:?} from candidate {first}",
                c.token
            ));
        }
    }
    None
}

/// Token string interning, first seen first numbered. Interior mutability
/// so a remote model can extend it from shared references.
#[derive(Debug, Default)]
pub struct TokenInterner {
    inner: Mutex<Interned>,
}

#[derive(Debug, Default)]
struct Interned {
    names: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl TokenInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&self, token: &str) -> TokenId {
        let mut inner = self.inner.lock().unwrap();
        if let Some(&id) = inner.ids.get(token) {
            return id;
        }
        let id = inner.names.len() as TokenId;
        inner.names.push(token.to_string());
        inner.ids.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.inner.lock().unwrap().ids.get(token).copied()
    }

    pub fn name(&self, id: TokenId) -> Option<String> {
        self.inner.lock().unwrap().names.get(id as usize).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Surface strings for a token id sequence.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>, ClientError> {
        let inner = self.inner.lock().unwrap();
        ids.iter()
            .map(|&id| {
                inner
                    .names
                    .get(id as usize)
                    .cloned()
                    .ok_or(ClientError::UnknownTokenId { id })
            })
            .collect()
    }
}

/// In-memory conditional model backed by captured records.
#[derive(Debug)]
pub struct FileModel {
    table: BTreeMap<Vec<TokenId>, RankedDistribution>,
    interner: TokenInterner,
}

impl FileModel {
    /// Builds the model from records, interning every token string in
    /// encounter order. Line numbers in errors are 1-based record indices.
    pub fn from_records(records: &[DistributionRecord]) -> Result<Self, ClientError> {
        let interner = TokenInterner::new();
        let mut table = BTreeMap::new();
        for (i, record) in records.iter().enumerate() {
            let line = i + 1;
            if let Some(detail) = candidate_issue(&record.candidates) {
                return Err(ClientError::BadRecord { line, detail });
            }
            let prefix: Vec<TokenId> = record.prefix.iter().map(|t| interner.intern(t)).collect();
            let scored: Vec<(TokenId, f64)> = record
                .candidates
                .iter()
                .map(|c| (interner.intern(&c.token), c.logprob))
                .collect();
            let dist = RankedDistribution::from_scored_tokens(&scored)?;
            if table.insert(prefix, dist).is_some() {
                return Err(ClientError::DuplicatePrefix { line });
            }
        }
        Ok(Self { table, interner })
    }

    pub fn interner(&self) -> &TokenInterner {
        &self.interner
    }

    pub fn records(&self) -> usize {
        self.table.len()
    }
}

impl ConditionalModel for FileModel {
    fn distribution(&self, prefix: &[TokenId]) -> Result<RankedDistribution, EnumerateError> {
        self.table
            .get(prefix)
            .cloned()
            .ok_or_else(|| EnumerateError::MissingPrefix {
                prefix: prefix.to_vec(),
            })
    }

    fn vocab_size(&self) -> usize {
        self.interner.len()
    }
}

/// Loads a JSONL capture file into a [`FileModel`].
pub fn load_distributions(path: impl AsRef<Path>) -> Result<FileModel, ClientError> {
    let path = path.as_ref();
    let io = |source| ClientError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(io)?;
        if text.trim().is_empty() {
            continue;
        }
        let record: DistributionRecord =
            serde_json::from_str(&text).map_err(|e| ClientError::MalformedLine {
                line: line_no,
                detail: e.to_string(),
            })?;
        records.push((line_no, record));
    }
    // from_records reports positions as record indices; remap to the real
    // line numbers so blank lines don't shift diagnostics
    let bare: Vec<DistributionRecord> = records.iter().map(|(_, r)| r.clone()).collect();
    FileModel::from_records(&bare).map_err(|e| match e {
        ClientError::BadRecord { line, detail } => ClientError::BadRecord {
            line: records[line - 1].0,
            detail,
        },
        ClientError::DuplicatePrefix { line } => ClientError::DuplicatePrefix {
            line: records[line - 1].0,
        },
        other => other,
    })
}

/// Writes records as one JSON object per line.
pub fn save_distributions(
    path: impl AsRef<Path>,
    records: &[DistributionRecord],
) -> Result<(), ClientError> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("records always serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| ClientError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Connection settings for a distribution or judge endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            auth_token: None,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }

    /// Reads `{prefix}_URL` (required) and the optional `{prefix}_AUTH_TOKEN`,
    /// `{prefix}_TIMEOUT_MS`, `{prefix}_MAX_RETRIES`, `{prefix}_BACKOFF_MS`
    /// and `{prefix}_MAX_IN_FLIGHT`. Model and judge endpoints use different
    /// prefixes, typically `VALDIV_MODEL` and `VALDIV_JUDGE`.
    pub fn from_env(prefix: &str) -> Result<Self, ClientError> {
        let var = |suffix: &str| std::env::var(format!("{prefix}_{suffix}")).ok();
        let mut config = Self::new(var("URL").ok_or_else(|| ClientError::MissingEnv {
            name: format!("{prefix}_URL"),
        })?);
        config.auth_token = var("AUTH_TOKEN");
        fn parsed<T: std::str::FromStr>(
            prefix: &str,
            suffix: &str,
            raw: Option<String>,
        ) -> Result<Option<T>, ClientError>
        where
            T::Err: std::fmt::Display,
        {
            raw.map(|s| {
                s.parse().map_err(|e| ClientError::BadEnv {
                    name: format!("{prefix}_{suffix}"),
                    detail: format!("{e}"),
                })
            })
            .transpose()
        }
        if let Some(ms) = parsed::<u64>(prefix, "TIMEOUT_MS", var("TIMEOUT_MS"))? {
            config.timeout = Duration::from_millis(ms);
        }
        if let Some(n) = parsed::<u32>(prefix, "MAX_RETRIES", var("MAX_RETRIES"))? {
            config.max_retries = n;
        }
        if let Some(ms) = parsed::<u64>(prefix, "BACKOFF_MS", var("BACKOFF_MS"))? {
            config.backoff = Duration::from_millis(ms);
        }
        if let Some(n) = parsed::<usize>(prefix, "MAX_IN_FLIGHT", var("MAX_IN_FLIGHT"))? {
            if n == 0 {
                return Err(ClientError::BadEnv {
                    name: format!("{prefix}_MAX_IN_FLIGHT"),
                    detail: "must be at least 1".into(),
                });
            }
            config.max_in_flight = n;
        }
        Ok(config)
    }
}

/// Counting gate bounding concurrent requests to one endpoint.
#[derive(Debug)]
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(slots: usize) -> Self {
        Self {
            slots: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().unwrap() += 1;
        self.gate.freed.notify_one();
    }
}

enum Failure {
    /// Worth another attempt: timeouts, connection trouble, 5xx.
    Transient(ClientError),
    /// Retrying cannot help: schema violations, 4xx.
    Fatal(ClientError),
}

/// One endpoint plus its retry policy and in-flight gate. Shared by the
/// distribution client and the judge.
pub(crate) struct Endpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("config", &self.config)
            .finish()
    }
}

impl Endpoint {
    pub(crate) fn new(config: EndpointConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(config.max_in_flight);
        Self {
            config,
            agent,
            gate,
        }
    }

    pub(crate) fn url(&self) -> &str {
        &self.config.url
    }

    /// POSTs `body` as JSON and decodes a JSON reply, retrying transient
    /// failures with linear backoff until the attempt budget runs out.
    pub(crate) fn post_json<Req, Resp>(&self, body: &Req) -> Result<Resp, ClientError>
    where
        Req: Serialize,
        Resp: serde::de::DeserializeOwned,
    {
        let _slot = self.gate.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * attempt);
            }
            match self.post_once(body) {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(e)) => last = Some(e),
            }
        }
        // stamp the real attempt count on the final transient failure
        Err(match last.expect("at least one attempt ran") {
            ClientError::Timeout { url, .. } => ClientError::Timeout { url, attempts },
            ClientError::Transport { url, detail, .. } => ClientError::Transport {
                url,
                detail,
                attempts,
            },
            other => other,
        })
    }

    fn post_once<Req, Resp>(&self, body: &Req) -> Result<Resp, Failure>
    where
        Req: Serialize,
        Resp: serde::de::DeserializeOwned,
    {
        let url = self.config.url.clone();
        let mut request = self
            .agent
            .post(&url)
            .header("content-type", "application/json");
        if let Some(token) = &self.config.auth_token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        // compact serialization keeps the request bytes canonical
        let payload = serde_json::to_string(body).map_err(|e| {
            Failure::Fatal(ClientError::Schema {
                detail: format!("request serialization: {e}"),
            })
        })?;
        let mut response = request.send(&payload).map_err(|e| self.classify(e))?;
        let code = response.status().as_u16();
        if !response.status().is_success() {
            let err = ClientError::Status { url, code };
            return Err(if (500..600).contains(&code) {
                Failure::Transient(err)
            } else {
                Failure::Fatal(err)
            });
        }
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| match e {
                // a truncated or malformed body is a schema violation, not
                // data to salvage
                ureq::Error::Json(err) => Failure::Fatal(ClientError::Schema {
                    detail: err.to_string(),
                }),
                other => self.classify(other),
            })
    }

    fn classify(&self, error: ureq::Error) -> Failure {
        let url = self.config.url.clone();
        match error {
            ureq::Error::Timeout(_) => {
                Failure::Transient(ClientError::Timeout { url, attempts: 1 })
            }
            ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                Failure::Transient(ClientError::Transport {
                    url,
                    attempts: 1,
                    detail: error.to_string(),
                })
            }
            other => Failure::Fatal(ClientError::Transport {
                url,
                attempts: 1,
                detail: other.to_string(),
            }),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prefix: &'a [String],
    top: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    candidates: Vec<Candidate>,
}

/// Conditional model served over HTTP. Each query asks for the `top`
/// highest-probability candidates at the prefix; token strings are
/// interned on arrival so downstream code works in token ids.
#[derive(Debug)]
pub struct RemoteModel {
    endpoint: Endpoint,
    top: usize,
    interner: TokenInterner,
}

impl RemoteModel {
    pub fn new(config: EndpointConfig, top: usize) -> Self {
        Self {
            endpoint: Endpoint::new(config),
            top: top.max(1),
            interner: TokenInterner::new(),
        }
    }

    pub fn interner(&self) -> &TokenInterner {
        &self.interner
    }

    /// Seeds the interner so caller-chosen ids exist before any query.
    pub fn intern(&self, token: &str) -> TokenId {
        self.interner.intern(token)
    }

    fn query(&self, prefix: &[TokenId]) -> Result<RankedDistribution, ClientError> {
        let words = self.interner.decode(prefix)?;
        let response: WireResponse = self.endpoint.post_json(&WireRequest {
            prefix: &words,
            top: self.top,
        })?;
        if let Some(detail) = candidate_issue(&response.candidates) {
            return Err(ClientError::Schema { detail });
        }
        let scored: Vec<(TokenId, f64)> = response
            .candidates
            .iter()
            .map(|c| (self.interner.intern(&c.token), c.logprob))
            .collect();
        Ok(RankedDistribution::from_scored_tokens(&scored)?)
    }
}

impl ConditionalModel for RemoteModel {
    fn distribution(&self, prefix: &[TokenId]) -> Result<RankedDistribution, EnumerateError> {
        self.query(prefix).map_err(ClientError::into_model_error)
    }

    /// The per-query candidate budget; the union of interned tokens can
    /// grow past it, but no single conditional ever will.
    fn vocab_size(&self) -> usize {
        self.top
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Builds a remote model from `{prefix}_*` environment variables.
pub fn remote_model(env_prefix: &str, top: usize) -> Result<RemoteModel, ClientError> {
    Ok(RemoteModel::new(EndpointConfig::from_env(env_prefix)?, top))
}
