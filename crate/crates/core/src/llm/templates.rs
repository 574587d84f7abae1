//! Prompt templates with `{{slot}}` placeholders.
//!
//! Template files start with a block of `#` comment lines (id, version, notes)
//! that is stripped before rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Summarize,
    ImmediateReflectTrain,
    ImmediateReflectTest,
    ExtendedReflect,
    ProfileCompose,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Summarize,
        TemplateId::ImmediateReflectTrain,
        TemplateId::ImmediateReflectTest,
        TemplateId::ExtendedReflect,
        TemplateId::ProfileCompose,
    ];

    pub fn source(self) -> &'static str {
        match self {
            TemplateId::Summarize => include_str!("../../templates/summarize.txt"),
            TemplateId::ImmediateReflectTrain => include_str!("../../templates/reflect_train.txt"),
            TemplateId::ImmediateReflectTest => include_str!("../../templates/reflect_test.txt"),
            TemplateId::ExtendedReflect => include_str!("../../templates/extended_reflect.txt"),
            TemplateId::ProfileCompose => include_str!("../../templates/profile_compose.txt"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Summarize => "summarize",
            TemplateId::ImmediateReflectTrain => "immediate_reflect_train",
            TemplateId::ImmediateReflectTest => "immediate_reflect_test",
            TemplateId::ExtendedReflect => "extended_reflect",
            TemplateId::ProfileCompose => "profile_compose",
        }
    }

    /// Slot names referenced by the template body.
    pub fn required_slots(self) -> BTreeSet<&'static str> {
        slot_names(body(self.source())).collect()
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const RISK_SEEKING_TEXT: &str = include_str!("../../templates/risk_seeking.txt");
pub const RISK_AVERSE_TEXT: &str = include_str!("../../templates/risk_averse.txt");

fn body(source: &str) -> &str {
    let mut rest = source;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, tail)| tail);
    }
    rest
}

fn slot_names(text: &str) -> impl Iterator<Item = &str> {
    text.split("{{")
        .skip(1)
        .filter_map(|chunk| chunk.split_once("}}").map(|(name, _)| name.trim()))
}

/// Fills every `{{slot}}`. Missing slots are reported by name.
pub fn render(
    template: TemplateId,
    slots: &BTreeMap<String, String>,
) -> Result<String, BTreeSet<String>> {
    let missing: BTreeSet<String> = template
        .required_slots()
        .into_iter()
        .filter(|s| !slots.contains_key(*s))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(missing);
    }
    let src = body(template.source());
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.split_once("}}") {
            Some((name, tail)) => {
                out.push_str(&slots[name.trim()]);
                rest = tail;
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn required_slots_are_parsed() {
        let slots = TemplateId::Summarize.required_slots();
        assert_eq!(
            slots.into_iter().collect::<Vec<_>>(),
            vec!["date", "kind", "text", "ticker"]
        );
        assert!(TemplateId::ImmediateReflectTest
            .required_slots()
            .contains("trailing_return"));
        assert!(!TemplateId::ImmediateReflectTrain
            .required_slots()
            .contains("trailing_return"));
    }

    #[test]
    fn render_fills_and_strips_header() {
        let slots: BTreeMap<String, String> = [
            ("ticker", "TSLA"),
            ("sector_text", "EVs"),
            ("history_overview", "up 3%"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let text = render(TemplateId::ProfileCompose, &slots).unwrap();
        assert!(!text.contains('#'));
        assert!(text.contains("specializing in TSLA."));
        assert!(text.contains("up 3%"));
        assert!(!text.contains("{{"));
    }

    #[test]
    fn render_reports_missing_slots() {
        let err = render(TemplateId::ProfileCompose, &BTreeMap::new()).unwrap_err();
        assert!(err.contains("sector_text"));
        assert_eq!(err.len(), 3);
    }
}
