//! Chat-completion gateway with schema-checked JSON outputs.
//!
//! Every template has a fixed output schema. The schema is appended to the
//! rendered prompt and enforced locally: a response that does not parse as a
//! single JSON object with exactly the expected keys, value types, enum values
//! and offered memory ids is sent back to the provider with the validator's
//! message, up to `max_retries` times.

mod mock;
#[cfg(feature = "remote")]
mod remote;
mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backtest::Action;
use crate::memory::Layer;
use crate::net::InFlightLimit;

pub use mock::{MockProvider, Rulebook, ScriptedProvider};
#[cfg(feature = "remote")]
pub use remote::{RemoteLlmConfig, RemoteProvider};
pub use templates::{render, TemplateId, RISK_AVERSE_TEXT, RISK_SEEKING_TEXT};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const RETRY_INSTRUCTION: &str = "Respond with only the corrected JSON object.";
const SYSTEM_PROMPT: &str =
    "You are the reasoning core of a single-stock trading agent. Always answer with one JSON object.";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid prompt request: {0}")]
    InvalidRequest(String),
    #[error("{template}: no valid response after {attempts} attempts: {last_error}")]
    ValidationExhausted {
        template: TemplateId,
        attempts: u32,
        last_error: String,
    },
    #[error("llm provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed rulebook: {0}")]
    MalformedRulebook(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// Memory ids offered to the model, per layer.
pub type LayerIds = [Vec<u64>; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub template: TemplateId,
    pub slots: BTreeMap<String, String>,
    pub temperature: f64,
    /// Ids a reflection may cite, per layer. Cited ids outside these sets fail
    /// validation.
    pub offered_ids: Option<LayerIds>,
}

impl PromptRequest {
    pub fn new(template: TemplateId) -> Self {
        Self {
            template,
            slots: BTreeMap::new(),
            temperature: DEFAULT_TEMPERATURE,
            offered_ids: None,
        }
    }

    pub fn slot(mut self, name: &str, value: impl Into<String>) -> Self {
        self.slots.insert(name.to_string(), value.into());
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn offered(mut self, ids: LayerIds) -> Self {
        self.offered_ids = Some(ids);
        self
    }
}

/// What a provider sees for one attempt.
#[derive(Debug, Clone, Copy)]
pub struct ProviderRequest<'a> {
    pub template: TemplateId,
    pub slots: &'a BTreeMap<String, String>,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionPayload {
    /// Absent for training-phase reflections.
    pub direction: Option<Action>,
    pub rationale: String,
    pub cited: LayerIds,
}

impl ReflectionPayload {
    pub fn all_cited(&self) -> Vec<u64> {
        self.cited.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Summary { summary: String },
    Reflection(ReflectionPayload),
    Extended { trend_summary: String },
    Profile { profile: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredResponse {
    pub payload: Payload,
    pub raw_text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FieldKind {
    Text,
    Direction,
    IdList(Layer),
}

const SUMMARY_FIELDS: &[(&str, FieldKind)] = &[("summary", FieldKind::Text)];
const REFLECT_TRAIN_FIELDS: &[(&str, FieldKind)] = &[
    ("rationale", FieldKind::Text),
    ("shallow_ids", FieldKind::IdList(Layer::Shallow)),
    ("intermediate_ids", FieldKind::IdList(Layer::Intermediate)),
    ("deep_ids", FieldKind::IdList(Layer::Deep)),
];
const REFLECT_TEST_FIELDS: &[(&str, FieldKind)] = &[
    ("direction", FieldKind::Direction),
    ("rationale", FieldKind::Text),
    ("shallow_ids", FieldKind::IdList(Layer::Shallow)),
    ("intermediate_ids", FieldKind::IdList(Layer::Intermediate)),
    ("deep_ids", FieldKind::IdList(Layer::Deep)),
];
const EXTENDED_FIELDS: &[(&str, FieldKind)] = &[("trend_summary", FieldKind::Text)];
const PROFILE_FIELDS: &[(&str, FieldKind)] = &[("profile", FieldKind::Text)];

fn schema(template: TemplateId) -> &'static [(&'static str, FieldKind)] {
    match template {
        TemplateId::Summarize => SUMMARY_FIELDS,
        TemplateId::ImmediateReflectTrain => REFLECT_TRAIN_FIELDS,
        TemplateId::ImmediateReflectTest => REFLECT_TEST_FIELDS,
        TemplateId::ExtendedReflect => EXTENDED_FIELDS,
        TemplateId::ProfileCompose => PROFILE_FIELDS,
    }
}

/// Output contract appended to every rendered prompt.
pub fn schema_instructions(template: TemplateId) -> String {
    let fields: Vec<String> = schema(template)
        .iter()
        .map(|(name, kind)| {
            let ty = match kind {
                FieldKind::Text => "non-empty string".to_string(),
                FieldKind::Direction => "one of \"Buy\", \"Sell\", \"Hold\"".to_string(),
                FieldKind::IdList(layer) => {
                    format!("array of integer ids taken from the {layer} memories above")
                }
            };
            format!("  \"{name}\": {ty}")
        })
        .collect();
    format!(
        "Respond with a single JSON object and nothing else, with exactly these keys:\n{}",
        fields.join("\n")
    )
}

/// Checks `raw` against the template's schema.
pub fn validate(
    template: TemplateId,
    raw: &str,
    offered: Option<&LayerIds>,
) -> Result<Payload, String> {
    let value: Value =
        serde_json::from_str(raw.trim()).map_err(|e| format!("response is not valid JSON: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "response must be a JSON object".to_string())?;
    let fields = schema(template);
    let expected: BTreeSet<&str> = fields.iter().map(|(n, _)| *n).collect();
    if let Some(extra) = obj.keys().find(|k| !expected.contains(k.as_str())) {
        return Err(format!("unexpected key \"{extra}\""));
    }

    let mut texts: BTreeMap<&str, String> = BTreeMap::new();
    let mut direction = None;
    let mut cited: LayerIds = Default::default();
    for &(name, kind) in fields {
        let v = obj
            .get(name)
            .ok_or_else(|| format!("missing required key \"{name}\""))?;
        match kind {
            FieldKind::Text => {
                let s = v
                    .as_str()
                    .filter(|s| !s.trim().is_empty())
                    .ok_or_else(|| format!("\"{name}\" must be a non-empty string"))?;
                texts.insert(name, s.to_string());
            }
            FieldKind::Direction => {
                let s = v.as_str().unwrap_or_default();
                direction = Some(match s {
                    "Buy" => Action::Buy,
                    "Sell" => Action::Sell,
                    "Hold" => Action::Hold,
                    _ => {
                        return Err(format!(
                            "\"direction\" must be one of \"Buy\", \"Sell\", \"Hold\", got {v}"
                        ))
                    }
                });
            }
            FieldKind::IdList(layer) => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| format!("\"{name}\" must be an array of integer ids"))?;
                let mut ids = Vec::with_capacity(arr.len());
                for item in arr {
                    let id = item
                        .as_u64()
                        .ok_or_else(|| format!("\"{name}\" contains a non-integer id {item}"))?;
                    if let Some(offered) = offered {
                        if !offered[layer.index()].contains(&id) {
                            return Err(format!(
                                "\"{name}\" cites id {id}, which was not among the {layer} memories offered"
                            ));
                        }
                    }
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
                cited[layer.index()] = ids;
            }
        }
    }

    let mut take = |k: &str| texts.remove(k).unwrap_or_default();
    Ok(match template {
        TemplateId::Summarize => Payload::Summary {
            summary: take("summary"),
        },
        TemplateId::ImmediateReflectTrain | TemplateId::ImmediateReflectTest => {
            Payload::Reflection(ReflectionPayload {
                direction,
                rationale: take("rationale"),
                cited,
            })
        }
        TemplateId::ExtendedReflect => Payload::Extended {
            trend_summary: take("trend_summary"),
        },
        TemplateId::ProfileCompose => Payload::Profile {
            profile: take("profile"),
        },
    })
}

/// Renders prompts, calls the provider and enforces the output schema.
pub struct Gateway {
    provider: Arc<dyn LlmProvider>,
    max_retries: u32,
    limit: InFlightLimit,
}

impl Gateway {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self {
            provider,
            max_retries: DEFAULT_MAX_RETRIES,
            limit: InFlightLimit::new(4),
        }
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limit = InFlightLimit::new(n);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<StructuredResponse, LlmError> {
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must lie in [0, 2], got {}",
                request.temperature
            )));
        }
        let prompt = render(request.template, &request.slots).map_err(|missing| {
            LlmError::InvalidRequest(format!(
                "{} is missing slots: {}",
                request.template,
                missing.into_iter().collect::<Vec<_>>().join(", ")
            ))
        })?;
        let mut messages = vec![
            ChatMessage::new(Role::System, SYSTEM_PROMPT),
            ChatMessage::new(
                Role::User,
                format!("{prompt}\n{}", schema_instructions(request.template)),
            ),
        ];

        let _permit = self.limit.acquire();
        let mut last_error = String::new();
        for attempt in 1..=self.max_retries + 1 {
            let raw = self.provider.complete(&ProviderRequest {
                template: request.template,
                slots: &request.slots,
                messages: &messages,
                temperature: request.temperature,
            })?;
            match validate(request.template, &raw, request.offered_ids.as_ref()) {
                Ok(payload) => {
                    return Ok(StructuredResponse {
                        payload,
                        raw_text: raw,
                        attempts: attempt,
                    })
                }
                Err(err) => {
                    log::debug!("{} attempt {attempt} rejected: {err}", request.template);
                    messages.push(ChatMessage::new(Role::Assistant, raw));
                    messages.push(ChatMessage::new(
                        Role::User,
                        format!("{err}\n{RETRY_INSTRUCTION}"),
                    ));
                    last_error = err;
                }
            }
        }
        Err(LlmError::ValidationExhausted {
            template: request.template,
            attempts: self.max_retries + 1,
            last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offered() -> LayerIds {
        [vec![1, 2], vec![5], vec![]]
    }

    #[test]
    fn valid_test_reflection() {
        let raw = r#"{"direction":"Sell","rationale":"weak demand","shallow_ids":[2],"intermediate_ids":[],"deep_ids":[]}"#;
        let p = validate(TemplateId::ImmediateReflectTest, raw, Some(&offered())).unwrap();
        match p {
            Payload::Reflection(r) => {
                assert_eq!(r.direction, Some(Action::Sell));
                assert_eq!(r.cited, [vec![2], vec![], vec![]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        let t = TemplateId::ImmediateReflectTest;
        let cases = [
            ("not json", "not valid JSON"),
            ("[1,2]", "must be a JSON object"),
            (
                r#"{"direction":"Short","rationale":"x","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}"#,
                "\"direction\" must be one of",
            ),
            (
                r#"{"direction":"Buy","rationale":"x","shallow_ids":[9],"intermediate_ids":[],"deep_ids":[]}"#,
                "not among the shallow memories offered",
            ),
            (
                r#"{"direction":"Buy","rationale":"x","shallow_ids":[5],"intermediate_ids":[],"deep_ids":[]}"#,
                "not among the shallow",
            ),
            (
                r#"{"direction":"Buy","rationale":"","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}"#,
                "non-empty string",
            ),
            (
                r#"{"direction":"Buy","rationale":"x","shallow_ids":[]}"#,
                "missing required key \"intermediate_ids\"",
            ),
            (
                r#"{"direction":"Buy","rationale":"x","shallow_ids":[],"intermediate_ids":[],"deep_ids":[],"size":3}"#,
                "unexpected key \"size\"",
            ),
            (
                r#"{"direction":"Buy","rationale":"x","shallow_ids":[-1],"intermediate_ids":[],"deep_ids":[]}"#,
                "non-integer id",
            ),
        ];
        for (raw, needle) in cases {
            let err = validate(t, raw, Some(&offered())).unwrap_err();
            assert!(err.contains(needle), "{raw} -> {err}");
        }
    }

    #[test]
    fn train_reflection_has_no_direction() {
        let raw = r#"{"rationale":"x","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}"#;
        let p = validate(TemplateId::ImmediateReflectTrain, raw, None).unwrap();
        assert!(matches!(p, Payload::Reflection(ReflectionPayload { direction: None, .. })));
        let with_dir = r#"{"direction":"Buy","rationale":"x","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}"#;
        assert!(validate(TemplateId::ImmediateReflectTrain, with_dir, None).is_err());
    }

    #[test]
    fn retry_then_exhaust() {
        let bad = r#"{"direction":"Short","rationale":"x","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}"#;
        let good = r#"{"direction":"Hold","rationale":"x","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}"#;
        let req = || {
            let mut r = PromptRequest::new(TemplateId::ImmediateReflectTest);
            for s in TemplateId::ImmediateReflectTest.required_slots() {
                r = r.slot(s, "x");
            }
            r.offered(Default::default())
        };

        let provider = Arc::new(ScriptedProvider::new(vec![bad.into(), good.into()]));
        let gw = Gateway::new(provider.clone());
        let resp = gw.complete(&req()).unwrap();
        assert_eq!(resp.attempts, 2);
        let second = &provider.seen_messages()[1];
        let last = second.last().unwrap();
        assert!(last.content.contains("\"direction\" must be one of"));
        assert!(last.content.ends_with(RETRY_INSTRUCTION));

        let gw = Gateway::new(Arc::new(ScriptedProvider::new(vec![bad.into()])));
        match gw.complete(&req()) {
            Err(LlmError::ValidationExhausted { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn request_validation() {
        let gw = Gateway::new(Arc::new(ScriptedProvider::new(vec!["{}".into()])));
        let err = gw
            .complete(&PromptRequest::new(TemplateId::Summarize))
            .unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(ref m) if m.contains("ticker")));
        let mut r = PromptRequest::new(TemplateId::Summarize).temperature(2.5);
        for s in TemplateId::Summarize.required_slots() {
            r = r.slot(s, "x");
        }
        assert!(matches!(gw.complete(&r), Err(LlmError::InvalidRequest(_))));
    }
}
