//! Deterministic providers.
//!
//! [`MockProvider`] answers every template with a pure function of the
//! template id and slot contents, driven by a sentiment lexicon. It never
//! produces an invalid payload, so mock runs need no retries.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatMessage, LlmError, LlmProvider, ProviderRequest, TemplateId};
use crate::backtest::Action;
use crate::embedding::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rulebook {
    pub positive_terms: Vec<String>,
    pub negative_terms: Vec<String>,
    /// Number of leading sentence fragments kept by a summary.
    pub summary_sentences: usize,
    /// Minimum |summed sentiment| needed to trade under the risk-seeking paragraph.
    #[serde(default = "one")]
    pub seeking_min_score: i64,
    /// Minimum |summed sentiment| needed to trade under the risk-averse paragraph.
    #[serde(default = "two")]
    pub averse_min_score: i64,
    /// When memories carry zero net sentiment, follow the sign of the trailing return.
    #[serde(default = "yes")]
    pub follow_momentum_on_tie: bool,
    /// Decision when neither memories nor momentum give a direction.
    #[serde(default = "hold")]
    pub neutral_direction: Action,
}

fn one() -> i64 {
    1
}
fn two() -> i64 {
    2
}
fn yes() -> bool {
    true
}
fn hold() -> Action {
    Action::Hold
}

impl Default for Rulebook {
    fn default() -> Self {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect();
        Self {
            positive_terms: words(
                "beat beats surge surges soar soars rally rallies gain gains growth record \
                 strong upgrade upgraded outperform bullish profit profits expands expansion \
                 exceeds raised raises boost boosts optimism rebound",
            ),
            negative_terms: words(
                "miss misses plunge plunges slump slumps drop drops decline declines loss losses \
                 weak downgrade downgraded underperform bearish recall lawsuit cuts cut shortfall \
                 layoffs probe slowdown concern concerns",
            ),
            summary_sentences: 2,
            seeking_min_score: 1,
            averse_min_score: 2,
            follow_momentum_on_tie: true,
            neutral_direction: Action::Hold,
        }
    }
}

impl Rulebook {
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let rb: Rulebook =
            serde_json::from_str(text).map_err(|e| LlmError::MalformedRulebook(e.to_string()))?;
        rb.validate()?;
        Ok(rb)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::MalformedRulebook(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::MalformedRulebook(m));
        if self.summary_sentences == 0 {
            return bad("summary_sentences must be >= 1".into());
        }
        if self.seeking_min_score < 1 || self.averse_min_score < 1 {
            return bad("min scores must be >= 1".into());
        }
        for term in self.positive_terms.iter().chain(&self.negative_terms) {
            if tokenize(term) != [term.as_str()] {
                return bad(format!(
                    "term `{term}` must be a single lowercase alphanumeric token"
                ));
            }
        }
        if let Some(t) = self.positive_terms.iter().find(|t| self.negative_terms.contains(t)) {
            return bad(format!("term `{t}` is both positive and negative"));
        }
        Ok(())
    }

    /// Positive minus negative term occurrences.
    pub fn sentiment(&self, text: &str) -> i64 {
        tokenize(text)
            .iter()
            .map(|t| {
                if self.positive_terms.contains(t) {
                    1
                } else if self.negative_terms.contains(t) {
                    -1
                } else {
                    0
                }
            })
            .sum()
    }
}

/// Parses memory-list lines of the form `- [id 12] text`.
pub(crate) fn parse_memory_lines(block: &str) -> Vec<(u64, &str)> {
    block
        .lines()
        .filter_map(|line| {
            let rest = line.trim_start().strip_prefix("- [id ")?;
            let (id, text) = rest.split_once(']')?;
            Some((id.trim().parse().ok()?, text.trim()))
        })
        .collect()
}

pub struct MockProvider {
    rulebook: Rulebook,
}

impl MockProvider {
    pub fn new(rulebook: Rulebook) -> Result<Self, LlmError> {
        rulebook.validate()?;
        Ok(Self { rulebook })
    }

    pub fn rulebook(&self) -> &Rulebook {
        &self.rulebook
    }

    fn slot<'a>(req: &'a ProviderRequest<'_>, name: &str) -> &'a str {
        req.slots.get(name).map(String::as_str).unwrap_or("")
    }

    fn summarize(&self, req: &ProviderRequest<'_>) -> serde_json::Value {
        let text = Self::slot(req, "text");
        let fragments: Vec<&str> = text
            .split(['.', '!', '?', '\n'])
            .map(str::trim)
            .filter(|f| !f.is_empty())
            .take(self.rulebook.summary_sentences)
            .collect();
        let score = self.rulebook.sentiment(text);
        let body = if fragments.is_empty() {
            "No content".to_string()
        } else {
            fragments.join(". ")
        };
        json!({ "summary": format!("{body}. (tone {score:+})") })
    }

    fn reflect(&self, req: &ProviderRequest<'_>, test: bool) -> serde_json::Value {
        let layers = ["shallow_memories", "intermediate_memories", "deep_memories"];
        let parsed: Vec<Vec<(u64, &str)>> = layers
            .iter()
            .map(|s| parse_memory_lines(Self::slot(req, s)))
            .collect();
        let score: i64 = parsed
            .iter()
            .flatten()
            .map(|(_, text)| self.rulebook.sentiment(text))
            .sum();
        let top1 = |i: usize| -> Vec<u64> { parsed[i].first().map(|m| m.0).into_iter().collect() };
        let count: usize = parsed.iter().map(Vec::len).sum();
        let risk = Self::slot(req, "risk_label");

        if !test {
            let label = Self::slot(req, "train_label");
            return json!({
                "rationale": format!(
                    "Next-day direction {label}; {count} memories with net sentiment {score:+} under a {risk} stance."
                ),
                "shallow_ids": top1(0),
                "intermediate_ids": top1(1),
                "deep_ids": top1(2),
            });
        }

        let trailing: f64 = Self::slot(req, "trailing_return").trim().parse().unwrap_or(0.0);
        let min_score = if risk == "risk-averse" {
            self.rulebook.averse_min_score
        } else {
            self.rulebook.seeking_min_score
        };
        let direction = if score >= min_score {
            Action::Buy
        } else if score <= -min_score {
            Action::Sell
        } else if score == 0 && self.rulebook.follow_momentum_on_tie && trailing > 0.0 {
            Action::Buy
        } else if score == 0 && self.rulebook.follow_momentum_on_tie && trailing < 0.0 {
            Action::Sell
        } else if score == 0 {
            self.rulebook.neutral_direction
        } else {
            Action::Hold
        };
        json!({
            "direction": direction.as_str(),
            "rationale": format!(
                "{count} memories with net sentiment {score:+}; trailing return {trailing}; {risk} stance requires |score| >= {min_score}."
            ),
            "shallow_ids": top1(0),
            "intermediate_ids": top1(1),
            "deep_ids": top1(2),
        })
    }

    fn extended(&self, req: &ProviderRequest<'_>) -> serde_json::Value {
        let reflections = Self::slot(req, "reflections");
        let count = |needle: &str| reflections.matches(needle).count();
        let window_return: f64 = Self::slot(req, "window_return").trim().parse().unwrap_or(0.0);
        let trend = if window_return > 0.0 {
            "gained"
        } else if window_return < 0.0 {
            "lost"
        } else {
            "was flat"
        };
        json!({
            "trend_summary": format!(
                "Over the last {} trading days the position {trend} ({window_return}); decisions: {} Buy, {} Sell, {} Hold.",
                Self::slot(req, "window_days"),
                count(": Buy"),
                count(": Sell"),
                count(": Hold"),
            )
        })
    }
}

impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<String, LlmError> {
        let value = match req.template {
            TemplateId::Summarize => self.summarize(req),
            TemplateId::ImmediateReflectTrain => self.reflect(req, false),
            TemplateId::ImmediateReflectTest => self.reflect(req, true),
            TemplateId::ExtendedReflect => self.extended(req),
            TemplateId::ProfileCompose => json!({
                "profile": format!(
                    "{} {}",
                    Self::slot(req, "sector_text").trim(),
                    Self::slot(req, "history_overview").trim()
                )
            }),
        };
        Ok(value.to_string())
    }
}

/// Replays canned responses in order, repeating the last one when exhausted.
/// Records the message list of every call.
pub struct ScriptedProvider {
    responses: Vec<String>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedProvider {
    pub fn new(responses: Vec<String>) -> Self {
        assert!(!responses.is_empty(), "scripted provider needs a response");
        Self {
            responses,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn seen_messages(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl LlmProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<String, LlmError> {
        let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
        let i = calls.len().min(self.responses.len() - 1);
        calls.push(req.messages.to_vec());
        Ok(self.responses[i].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, Payload, PromptRequest};
    use std::sync::Arc;

    fn gateway() -> Gateway {
        Gateway::new(Arc::new(MockProvider::new(Rulebook::default()).unwrap()))
    }

    fn reflect_request(test: bool, shallow: &str, trailing: &str, risk: &str) -> PromptRequest {
        let t = if test {
            TemplateId::ImmediateReflectTest
        } else {
            TemplateId::ImmediateReflectTrain
        };
        let mut r = PromptRequest::new(t);
        for s in t.required_slots() {
            r = r.slot(s, "");
        }
        let offered = parse_memory_lines(shallow).iter().map(|m| m.0).collect();
        r.slot("shallow_memories", shallow)
            .slot("intermediate_memories", "(none)")
            .slot("deep_memories", "(none)")
            .slot("trailing_return", trailing)
            .slot("train_label", "Buy")
            .slot("risk_label", risk)
            .offered([offered, vec![], vec![]])
    }

    fn reflection(resp: &crate::llm::StructuredResponse) -> &crate::llm::ReflectionPayload {
        match &resp.payload {
            Payload::Reflection(r) => r,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn positive_memories_buy_and_cite_top1() {
        let mem = "- [id 7] Deliveries beat estimates, shares surge\n- [id 3] record quarter";
        let resp = gateway()
            .complete(&reflect_request(true, mem, "0", "risk-seeking"))
            .unwrap();
        assert_eq!(resp.attempts, 1);
        let r = reflection(&resp);
        assert_eq!(r.direction, Some(Action::Buy));
        assert_eq!(r.cited, [vec![7], vec![], vec![]]);
    }

    #[test]
    fn neutral_defaults_to_hold() {
        let resp = gateway()
            .complete(&reflect_request(true, "(none)", "0", "risk-seeking"))
            .unwrap();
        let r = reflection(&resp);
        assert_eq!(r.direction, Some(Action::Hold));
        assert!(r.all_cited().is_empty());
    }

    #[test]
    fn averse_needs_stronger_evidence() {
        let mem = "- [id 1] shares surge";
        let seeking = gateway()
            .complete(&reflect_request(true, mem, "0", "risk-seeking"))
            .unwrap();
        let averse = gateway()
            .complete(&reflect_request(true, mem, "0", "risk-averse"))
            .unwrap();
        assert_eq!(reflection(&seeking).direction, Some(Action::Buy));
        assert_eq!(reflection(&averse).direction, Some(Action::Hold));
    }

    #[test]
    fn train_reflection_omits_direction() {
        let resp = gateway()
            .complete(&reflect_request(false, "- [id 2] recall probe", "", "risk-seeking"))
            .unwrap();
        assert_eq!(reflection(&resp).direction, None);
    }

    #[test]
    fn summaries_are_pure() {
        let req = PromptRequest::new(TemplateId::Summarize)
            .slot("ticker", "TSLA")
            .slot("date", "2022-10-06")
            .slot("kind", "news")
            .slot("text", "Tesla deliveries beat estimates. Shares surge. Analysts cautious.");
        let a = gateway().complete(&req).unwrap();
        let b = gateway().complete(&req).unwrap();
        assert_eq!(a.raw_text, b.raw_text);
        assert_eq!(
            a.payload,
            Payload::Summary {
                summary: "Tesla deliveries beat estimates. Shares surge. (tone +2)".into()
            }
        );
    }

    #[test]
    fn malformed_rulebooks() {
        assert!(Rulebook::from_json("{").is_err());
        let mut rb = Rulebook::default();
        rb.negative_terms.push("beat".into());
        assert!(matches!(MockProvider::new(rb), Err(LlmError::MalformedRulebook(_))));
        let mut rb = Rulebook::default();
        rb.positive_terms.push("Two Words".into());
        assert!(rb.validate().is_err());
        let rb = Rulebook::from_json(
            r#"{"positive_terms":["up"],"negative_terms":["down"],"summary_sentences":1}"#,
        )
        .unwrap();
        assert_eq!(rb.averse_min_score, 2);
        assert_eq!(rb.neutral_direction, Action::Hold);
    }
}
