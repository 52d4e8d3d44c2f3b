//! Scoring generations with a judge model over HTTP.
//!
//! The judge receives a fixed rubric prompt with the question and the
//! generation spliced in, and must answer with a JSON object scoring
//! grammar, semantics and overall quality from 1 to 10. A generation
//! counts as valid only when all three scores clear the threshold.

use serde::{Deserialize, Serialize};

use super::{ClientError, Endpoint, EndpointConfig, TokenInterner};
use crate::enumerate::{EnumerateError, LeafLabel, LeafLabeler};
use crate::TokenId;

/// The packaged rubric. `{question}` and `{shot}` are the splice points.
pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("judge_prompt.txt");

/// Fills the rubric template. The generation text is spliced in as-is;
/// the rubric already instructs the judge how to treat cut-off text.
pub fn judge_prompt(question: &str, generation: &str) -> String {
    JUDGE_PROMPT_TEMPLATE
        .replace("{question}", question)
        .replace("{shot}", generation)
}

/// A parsed judge reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub reason: String,
    pub grammar: u8,
    pub semantic: u8,
    pub overall: u8,
}

impl JudgeVerdict {
    /// The label rule: valid needs every score at or above the threshold.
    pub fn passes(&self, threshold: u8) -> bool {
        self.grammar >= threshold && self.semantic >= threshold && self.overall >= threshold
    }
}

/// What a judge call produced. Replies with no JSON object anywhere count
/// as unscored rather than as errors, so sweeps survive a rambling judge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeOutcome {
    Scored(JudgeVerdict),
    Unscored { reply: String },
}

#[derive(Serialize)]
struct WireJudgeRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireJudgeReply {
    text: String,
}

#[derive(Deserialize)]
struct RawVerdict {
    reason: Option<String>,
    grammar: i64,
    semantic: i64,
    overall: i64,
}

/// Byte range of the first balanced `{...}` region in `reply` that also
/// parses as a JSON object, brace-counting outside string literals.
fn balanced_objects(reply: &str) -> impl Iterator<Item = &str> {
    let bytes = reply.as_bytes();
    let mut spans = Vec::new();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start.take().unwrap(), i + 1));
                }
            }
            _ => {}
        }
    }
    spans.into_iter().map(move |(a, b)| &reply[a..b])
}

/// Parses the judge's free-text reply. `Ok(None)` means no candidate
/// object parsed as JSON at all; a JSON object with missing fields or
/// scores outside 1..=10 is a schema error.
pub(crate) fn parse_verdict(reply: &str) -> Result<Option<JudgeVerdict>, ClientError> {
    for span in balanced_objects(reply) {
        let Ok(raw) = serde_json::from_str::<serde_json::Value>(span) else {
            continue;
        };
        let raw: RawVerdict = serde_json::from_value(raw).map_err(|e| ClientError::Schema {
            detail: format!("judge verdict: {e}"),
        })?;
        let score = |name: &str, value: i64| -> Result<u8, ClientError> {
            if (1..=10).contains(&value) {
                Ok(value as u8)
            } else {
                Err(ClientError::Schema {
                    detail: format!("judge verdict: {name} score {value} is outside 1..=10"),
                })
            }
        };
        return Ok(Some(JudgeVerdict {
            reason: raw.reason.unwrap_or_default(),
            grammar: score("grammar", raw.grammar)?,
            semantic: score("semantic", raw.semantic)?,
            overall: score("overall", raw.overall)?,
        }));
    }
    Ok(None)
}

/// HTTP client for the judge endpoint.
#[derive(Debug)]
pub struct JudgeClient {
    endpoint: Endpoint,
    threshold: u8,
}

impl JudgeClient {
    pub fn new(config: EndpointConfig, threshold: u8) -> Result<Self, ClientError> {
        if !(1..=10).contains(&threshold) {
            return Err(ClientError::BadThreshold { value: threshold });
        }
        Ok(Self {
            endpoint: Endpoint::new(config),
            threshold,
        })
    }

    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    /// One round trip: build the rubric prompt, send it, parse the reply.
    pub fn judge(&self, question: &str, generation: &str) -> Result<JudgeOutcome, ClientError> {
        let prompt = judge_prompt(question, generation);
        let reply: WireJudgeReply = self
            .endpoint
            .post_json(&WireJudgeRequest { prompt: &prompt })?;
        Ok(match parse_verdict(&reply.text)? {
            Some(verdict) => JudgeOutcome::Scored(verdict),
            None => JudgeOutcome::Unscored { reply: reply.text },
        })
    }

    /// The judge outcome folded through the threshold rule.
    pub fn label(&self, question: &str, generation: &str) -> Result<LeafLabel, ClientError> {
        Ok(match self.judge(question, generation)? {
            JudgeOutcome::Scored(v) if v.passes(self.threshold) => LeafLabel::Valid,
            JudgeOutcome::Scored(_) => LeafLabel::Invalid,
            JudgeOutcome::Unscored { .. } => LeafLabel::Unlabeled,
        })
    }

    pub fn url(&self) -> &str {
        self.endpoint.url()
    }
}

/// Labels tree leaves by decoding them to text and asking the judge.
pub struct JudgeLabeler<'a> {
    client: &'a JudgeClient,
    interner: &'a TokenInterner,
    question: String,
    separator: String,
}

impl<'a> JudgeLabeler<'a> {
    /// `separator` joins decoded token strings into the generation text;
    /// an empty string suits subword tokens, " " suits word tokens.
    pub fn new(
        client: &'a JudgeClient,
        interner: &'a TokenInterner,
        question: impl Into<String>,
        separator: impl Into<String>,
    ) -> Self {
        Self {
            client,
            interner,
            question: question.into(),
            separator: separator.into(),
        }
    }
}

impl LeafLabeler for JudgeLabeler<'_> {
    fn label(&self, sequence: &[TokenId]) -> Result<LeafLabel, EnumerateError> {
        let words = self
            .interner
            .decode(sequence)
            .map_err(ClientError::into_model_error)?;
        self.client
            .label(&self.question, &words.join(&self.separator))
            .map_err(ClientError::into_model_error)
    }
}
