//! Prompt templates.
//!
//! Each stage has one template file under `templates/`. A file holds a
//! `[system]` and a `[user]` section; `{{name}}` placeholders are filled
//! from the request variables. Lines starting with `#` before the first
//! section are a header and are dropped.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::structured::CORRECTION_VAR;
use super::ProviderError;

pub const SEGMENT: &str = "segment";
pub const CLASSIFY: &str = "classify";
pub const PERSONA: &str = "persona";
pub const ENACT: &str = "enact";
pub const INSTANT_ACTOR: &str = "instant_actor";
pub const INSTANT_CHARACTER: &str = "instant_character";
pub const POSTHOC_ACTOR: &str = "posthoc_actor";
pub const POSTHOC_CHARACTER: &str = "posthoc_character";
pub const POSTHOC_UNREHEARSED: &str = "posthoc_unrehearsed";
pub const REVIEW: &str = "review";
pub const SUMMARY: &str = "summary";
pub const EVALUATE_INSTANT: &str = "evaluate_instant";
pub const EVALUATE_POSTHOC: &str = "evaluate_posthoc";

const BUILTIN: &[(&str, &str)] = &[
    (SEGMENT, include_str!("../../templates/segment.txt")),
    (CLASSIFY, include_str!("../../templates/classify.txt")),
    (PERSONA, include_str!("../../templates/persona.txt")),
    (ENACT, include_str!("../../templates/enact.txt")),
    (INSTANT_ACTOR, include_str!("../../templates/instant_actor.txt")),
    (INSTANT_CHARACTER, include_str!("../../templates/instant_character.txt")),
    (POSTHOC_ACTOR, include_str!("../../templates/posthoc_actor.txt")),
    (POSTHOC_CHARACTER, include_str!("../../templates/posthoc_character.txt")),
    (POSTHOC_UNREHEARSED, include_str!("../../templates/posthoc_unrehearsed.txt")),
    (REVIEW, include_str!("../../templates/review.txt")),
    (SUMMARY, include_str!("../../templates/summary.txt")),
    (EVALUATE_INSTANT, include_str!("../../templates/evaluate_instant.txt")),
    (EVALUATE_POSTHOC, include_str!("../../templates/evaluate_posthoc.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(id: &str, text: &str) -> Result<Self, ProviderError> {
        let mut system: Option<String> = None;
        let mut user: Option<String> = None;
        #[derive(PartialEq)]
        enum Section {
            Header,
            System,
            User,
        }
        let mut section = Section::Header;
        for line in text.lines() {
            match line.trim() {
                "[system]" => {
                    section = Section::System;
                    system = Some(String::new());
                }
                "[user]" => {
                    section = Section::User;
                    user = Some(String::new());
                }
                _ => {
                    let buf = match section {
                        Section::System => system.as_mut(),
                        Section::User => user.as_mut(),
                        Section::Header => None,
                    };
                    match buf {
                        Some(buf) => {
                            buf.push_str(line);
                            buf.push('\n');
                        }
                        None if line.starts_with('#') || line.trim().is_empty() => {}
                        None => {
                            return Err(ProviderError::Template(format!(
                                "template `{id}`: text before the first section"
                            )))
                        }
                    }
                }
            }
        }
        let system = system.ok_or_else(|| ProviderError::Template(format!("template `{id}` has no [system] section")))?;
        let user = user.ok_or_else(|| ProviderError::Template(format!("template `{id}` has no [user] section")))?;
        Ok(Template {
            id: id.to_string(),
            system: system.trim().to_string(),
            user: user.trim().to_string(),
        })
    }

    /// Placeholder names in order of first use.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for text in [&self.system, &self.user] {
            let mut rest = text.as_str();
            while let Some(start) = rest.find("{{") {
                let after = &rest[start + 2..];
                let Some(end) = after.find("}}") else { break };
                let name = after[..end].trim().to_string();
                if !names.contains(&name) {
                    names.push(name);
                }
                rest = &after[end + 2..];
            }
        }
        names
    }

    pub fn render(&self, variables: &BTreeMap<String, String>) -> Result<Vec<ChatMessage>, ProviderError> {
        let system = fill(&self.id, &self.system, variables)?;
        let mut user = fill(&self.id, &self.user, variables)?;
        if let Some(note) = variables.get(CORRECTION_VAR) {
            user.push_str("\n\n");
            user.push_str(note);
        }
        Ok(vec![
            ChatMessage {
                role: "system".into(),
                content: system,
            },
            ChatMessage {
                role: "user".into(),
                content: user,
            },
        ])
    }
}

fn fill(id: &str, text: &str, variables: &BTreeMap<String, String>) -> Result<String, ProviderError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| ProviderError::Template(format!("template `{id}`: unclosed placeholder")))?;
        let name = after[..end].trim();
        let value = variables
            .get(name)
            .ok_or_else(|| ProviderError::Template(format!("template `{id}`: missing variable `{name}`")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, text)| {
                let template = Template::parse(id, text).expect("built-in templates parse");
                (id.to_string(), template)
            })
            .collect();
        TemplateSet { templates }
    }

    /// Built-in templates, overridden by any `<id>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, ProviderError> {
        let mut set = Self::builtin();
        for (id, _) in BUILTIN {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ProviderError::Template(format!("{}: {e}", path.display())))?;
                set.templates.insert(id.to_string(), Template::parse(id, &text)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Result<&Template, ProviderError> {
        self.templates
            .get(id)
            .ok_or_else(|| ProviderError::Template(format!("unknown template `{id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_parse_and_have_placeholders() {
        let set = TemplateSet::builtin();
        assert_eq!(set.ids().count(), BUILTIN.len());
        for id in set.ids() {
            let t = set.get(id).unwrap();
            assert!(!t.system.is_empty(), "{id} system empty");
            assert!(!t.placeholders().is_empty(), "{id} has no placeholders");
        }
    }

    #[test]
    fn render_fills_and_reports_missing() {
        let t = Template::parse("x", "# header\n[system]\nYou are {{who}}.\n[user]\nSay {{what}}.\n").unwrap();
        let mut vars = BTreeMap::new();
        vars.insert("who".to_string(), "Youth".to_string());
        assert!(t.render(&vars).is_err());
        vars.insert("what".to_string(), "hello".to_string());
        let messages = t.render(&vars).unwrap();
        assert_eq!(messages[0].content, "You are Youth.");
        assert_eq!(messages[1].content, "Say hello.");
        vars.insert(CORRECTION_VAR.to_string(), "fix it".to_string());
        assert!(t.render(&vars).unwrap()[1].content.ends_with("fix it"));
    }

    #[test]
    fn evaluator_templates_carry_no_persona() {
        let set = TemplateSet::builtin();
        for id in [EVALUATE_INSTANT, EVALUATE_POSTHOC] {
            let names = set.get(id).unwrap().placeholders();
            assert!(!names.iter().any(|n| n == "persona"), "{id} must not embed a persona");
        }
    }
}
