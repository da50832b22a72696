//! A deterministic rule-based stand-in for a model.
//!
//! Answers every built-in template from the request variables alone, so the
//! whole pipeline runs offline. Replies are plausible in shape, not in
//! literary quality. Inner thoughts are built from pseudo-words seeded by
//! the character and line, so no two characters ever share wording.

use async_trait::async_trait;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::templates::*;
use super::{ChatRequest, EmbedRequest, LlmProvider, ProviderError};
use crate::parser::heading::{fallback_spans, HeadingPatterns};
use crate::parser::speech_pattern;

pub const DEFAULT_DIMENSION: usize = 64;

#[derive(Debug, Clone)]
pub struct HeuristicProvider {
    dimension: usize,
    headings: HeadingPatterns,
}

impl Default for HeuristicProvider {
    fn default() -> Self {
        HeuristicProvider::new(DEFAULT_DIMENSION)
    }
}

impl HeuristicProvider {
    pub fn new(dimension: usize) -> Self {
        HeuristicProvider {
            dimension: dimension.max(1),
            headings: HeadingPatterns::default(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

fn seed(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// xorshift step, good enough for picking words.
fn next(state: &mut u64) -> u64 {
    let mut x = *state | 1;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    *state = x;
    x
}

fn pseudo_word(state: &mut u64) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syllables = 2 + next(state) % 3;
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(C[(next(state) % C.len() as u64) as usize] as char);
        w.push(V[(next(state) % V.len() as u64) as usize] as char);
    }
    w
}

fn pseudo_phrase(state: &mut u64, words: usize) -> String {
    (0..words).map(|_| pseudo_word(state)).collect::<Vec<_>>().join(" ")
}

fn var<'a>(request: &'a ChatRequest, name: &str) -> &'a str {
    request.variables.get(name).map(String::as_str).unwrap_or("")
}

fn numbered_lines(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    text.split('\n')
        .map(|l| match l.split_once("| ") {
            Some((_, rest)) => rest.to_string(),
            None => l.trim_start_matches(|c: char| c.is_ascii_digit()).trim_start_matches('|').to_string(),
        })
        .collect()
}

fn title_case(name: &str) -> String {
    let has_lower = name.chars().any(char::is_lowercase);
    if has_lower {
        return name.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    name.split_whitespace()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Speaker and speech for a `NAME: text` line whose name reads as a name.
fn split_speech(line: &str) -> Option<(String, String)> {
    let caps = speech_pattern().captures(line)?;
    let name = caps.get(1)?.as_str().trim();
    let words: Vec<&str> = name.split_whitespace().collect();
    if words.is_empty() || words.len() > 4 {
        return None;
    }
    if !words.iter().all(|w| w.chars().next().is_some_and(|c| c.is_uppercase() || !c.is_alphabetic())) {
        return None;
    }
    Some((title_case(name), caps.get(2)?.as_str().trim().to_string()))
}

/// A short span of the line worth quoting: the speech if there is one.
fn quotable(line: &str, max_words: usize) -> String {
    let body = split_speech(line).map(|(_, s)| s).unwrap_or_else(|| line.trim().to_string());
    body.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ")
}

const DIMENSIONS: [&str; 5] = [
    "character_emotions",
    "behavioral_motivation",
    "character_relationships",
    "plot_pacing",
    "thematic_consistency",
];

struct Draft {
    question: String,
    rationale: String,
    dimension: &'static str,
    source: &'static str,
    quote: String,
}

impl Draft {
    fn to_json(&self) -> Value {
        json!({
            "question": self.question,
            "rationale": self.rationale,
            "dimensions": [self.dimension],
            "evidence": [{"source": self.source, "quote": self.quote}],
        })
    }
}

const ACTOR_QUESTIONS: &[(&str, &str)] = &[
    (
        "Would this beat land harder if it were carried by a clearer physical action?",
        "Right now the moment lives only in the words, so the intention stays hard to play.",
    ),
    (
        "What makes the shift in tone at this point feel earned rather than sudden?",
        "Nothing earlier prepares the change, so an audience may not follow it.",
    ),
    (
        "Who is this really aimed at, and does the other person's reaction show it?",
        "The relationship behind the remark is unclear, which flattens the exchange.",
    ),
    (
        "Could it be that the pause here is doing more work than the dialogue?",
        "The silence seems to carry the meaning, yet the text does not make room for it.",
    ),
];

const CHARACTER_QUESTIONS: &[(&str, &str)] = &[
    (
        "How can I suddenly let go of what I have been holding onto here?",
        "I reach this moment without anything that pushes me to change my mind.",
    ),
    (
        "Why would I say this out loud when I have kept quiet until now?",
        "My reason for speaking is missing, so I cannot commit to the words.",
    ),
    (
        "What do I want from the others right now, and why do I not ask for it directly?",
        "I feel pulled two ways and the scene gives me no room to show it.",
    ),
];

const SCENE_QUESTIONS: &[(&str, &str)] = &[
    (
        "Does the scene resolve its central tension too quickly to leave any weight behind?",
        "The turn arrives and is settled within a few lines, so the stakes barely register.",
    ),
    (
        "How does this scene move the larger story forward beyond restating the situation?",
        "Most exchanges repeat what is already known, which stalls the momentum.",
    ),
    (
        "Are the shifts in how these people treat each other motivated by anything on the page?",
        "Alliances change without a visible trigger, which makes the relationships hard to read.",
    ),
];

const SCENE_CHARACTER_QUESTIONS: &[(&str, &str)] = &[
    (
        "How can I move from where I start this scene to where I end it so quickly?",
        "Nothing in the scene gives me a reason to change that fast.",
    ),
    (
        "What am I hiding from the others in this scene, and when do I give it away?",
        "I feel I am holding something back, but the scene never lets it surface.",
    ),
];

impl HeuristicProvider {
    fn segment(&self, request: &ChatRequest) -> Value {
        let lines = numbered_lines(var(request, "numbered_body"));
        json!({ "scenes": fallback_spans(&lines, &self.headings) })
    }

    fn classify(&self, request: &ChatRequest) -> Value {
        let lines = numbered_lines(var(request, "numbered_lines"));
        let labels: Vec<Value> = lines
            .iter()
            .enumerate()
            .map(|(index, line)| match split_speech(line) {
                Some((speaker, _)) if !self.headings.is_heading(line) => {
                    json!({"index": index, "kind": "dialogue", "speaker": speaker})
                }
                _ => json!({"index": index, "kind": "action"}),
            })
            .collect();
        json!({ "lines": labels })
    }

    fn persona(&self, request: &ChatRequest) -> Value {
        let character = var(request, "character");
        let bio = var(request, "bio");
        let appearances = var(request, "appearances");
        let spoken = appearances
            .lines()
            .filter(|l| split_speech(l).is_some_and(|(s, _)| s.eq_ignore_ascii_case(character)))
            .count();
        let background = if bio.is_empty() || bio.starts_with("(none") {
            format!("{character} speaks {spoken} line(s) in the scenes where they appear.")
        } else {
            bio.trim().to_string()
        };
        const TRAITS: &[&str] = &["guarded", "restless", "loyal", "wry", "stubborn", "hopeful", "watchful", "impulsive"];
        let mut state = seed(&["persona", character]);
        let a = TRAITS[(next(&mut state) % TRAITS.len() as u64) as usize];
        let mut b = TRAITS[(next(&mut state) % TRAITS.len() as u64) as usize];
        if a == b {
            b = TRAITS[(TRAITS.iter().position(|t| *t == a).unwrap_or(0) + 1) % TRAITS.len()];
        }
        json!({
            "background": background,
            "traits": [a, b],
            "goals": format!("To come through the events of the story on {character}'s own terms."),
            "motivations": "What is at stake for the people close to them.",
        })
    }

    fn enact(&self, request: &ChatRequest) -> Value {
        let character = var(request, "character");
        let line = var(request, "line");
        let mut state = seed(&["enact", character, line]);
        let mut p = |n| pseudo_phrase(&mut state, n);
        json!({
            "interpretation": format!("{} {}", p(3), p(2)),
            "recall_notes": format!("{} {}", p(2), p(3)),
            "objective": format!("to {} {}", p(2), p(2)),
            "synthesis": format!("I {} and I {}", p(3), p(3)),
        })
    }

    fn instant(&self, request: &ChatRequest, first_person: bool) -> Value {
        let character = var(request, "character");
        let line = var(request, "line");
        let cap: usize = var(request, "max_candidates").parse().unwrap_or(3);
        let mut state = seed(&["instant", request.template_id.as_str(), character, line]);
        let count = (next(&mut state) % 3) as usize;
        let quote = quotable(line, 6);
        let bank = if first_person { CHARACTER_QUESTIONS } else { ACTOR_QUESTIONS };
        let mut drafts = Vec::new();
        if !quote.is_empty() {
            let start = next(&mut state) as usize;
            for i in 0..count.min(cap).min(bank.len()) {
                let (q, r) = bank[(start + i) % bank.len()];
                drafts.push(Draft {
                    question: q.to_string(),
                    rationale: r.to_string(),
                    dimension: DIMENSIONS[(next(&mut state) % 5) as usize],
                    source: "current_action_or_dialogue",
                    quote: quote.clone(),
                });
            }
        }
        json!({ "candidates": drafts.iter().map(Draft::to_json).collect::<Vec<_>>() })
    }

    fn posthoc(&self, request: &ChatRequest, first_person: bool) -> Value {
        let character = var(request, "character");
        let scene_text = var(request, "scene_text");
        let cap: usize = var(request, "max_candidates").parse().unwrap_or(6);
        let mut state = seed(&["posthoc", request.template_id.as_str(), character, scene_text]);
        let quotable_lines: Vec<&str> = scene_text
            .lines()
            .filter(|l| !l.trim().is_empty() && !self.headings.is_heading(l))
            .collect();
        let bank = if first_person { SCENE_CHARACTER_QUESTIONS } else { SCENE_QUESTIONS };
        let count = 1 + (next(&mut state) % 2) as usize;
        let mut drafts = Vec::new();
        if !quotable_lines.is_empty() {
            let start = next(&mut state) as usize;
            for i in 0..count.min(cap).min(bank.len()) {
                let (q, r) = bank[(start + i) % bank.len()];
                let line = quotable_lines[(next(&mut state) % quotable_lines.len() as u64) as usize];
                drafts.push(Draft {
                    question: q.to_string(),
                    rationale: r.to_string(),
                    dimension: DIMENSIONS[(next(&mut state) % 5) as usize],
                    source: "current_scene_text",
                    quote: quotable(line, 5),
                });
            }
        }
        json!({ "candidates": drafts.iter().map(Draft::to_json).collect::<Vec<_>>() })
    }

    fn summary(&self, request: &ChatRequest) -> Value {
        let thoughts: Vec<&str> = var(request, "inner_thoughts")
            .lines()
            .map(|l| l.trim_start_matches("- ").trim())
            .filter(|l| !l.is_empty())
            .collect();
        let description = match thoughts.as_slice() {
            [] => "I went through this scene without much to hold onto.".to_string(),
            [only] => format!("In this scene {only}."),
            [first, .., last] => format!("In this scene {first}; later {last}."),
        };
        json!({ "description": description })
    }

    fn evaluate(&self, request: &ChatRequest) -> Value {
        let candidate = var(request, "candidate");
        let findings = var(request, "style_findings");
        let mut state = seed(&["evaluate", request.template_id.as_str(), candidate]);
        let clean = findings.is_empty() || findings.starts_with("no wording issues");
        let impact = next(&mut state) % 4 != 0;
        let high = next(&mut state) % 2 == 0;
        let mut reply = json!({
            "evidence": {"passed": true, "note": "quoted text supports the point"},
            "diversity": {"passed": clean, "note": if clean { "natural wording" } else { "wording falls back on stock phrasing" }},
            "dimensions": {"passed": true, "note": "the named dimension fits the question"},
            "impact_timing": {"passed": impact, "note": if impact { "matters at this point" } else { "too minor to raise here" }},
        });
        if !clean {
            reply["usefulness"] = json!(if high { "high" } else { "low" });
        }
        reply
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let mut any = false;
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            let h = seed(&["embed", &word]);
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            v[((h >> 1) % self.dimension as u64) as usize] += sign;
            any = true;
        }
        if !any || v.iter().all(|x| *x == 0.0) {
            let h = seed(&["embed-empty", text]);
            v[(h % self.dimension as u64) as usize] = 1.0;
        }
        v
    }
}

#[async_trait]
impl LlmProvider for HeuristicProvider {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let reply = match request.template_id.as_str() {
            SEGMENT => self.segment(request),
            CLASSIFY => self.classify(request),
            PERSONA => self.persona(request),
            ENACT => self.enact(request),
            INSTANT_ACTOR => self.instant(request, false),
            INSTANT_CHARACTER => self.instant(request, true),
            POSTHOC_ACTOR | POSTHOC_UNREHEARSED | REVIEW => self.posthoc(request, false),
            POSTHOC_CHARACTER => self.posthoc(request, true),
            SUMMARY => self.summary(request),
            EVALUATE_INSTANT | EVALUATE_POSTHOC => self.evaluate(request),
            other => return Err(ProviderError::Template(format!("no heuristic for template `{other}`"))),
        };
        Ok(reply.to_string())
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(request.texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::style::is_first_person;
    use crate::provider::{DETERMINISTIC_TEMPERATURE, GENERATION_TEMPERATURE};

    #[test]
    fn speech_split_and_title_case() {
        assert_eq!(split_speech("SOLDIER A: Hold the line."), Some(("Soldier A".into(), "Hold the line.".into())));
        assert_eq!(split_speech("Youth (quietly): Where are we?"), Some(("Youth".into(), "Where are we?".into())));
        assert_eq!(split_speech("the train slows: nobody moves"), None);
    }

    #[tokio::test]
    async fn thoughts_differ_between_characters() {
        let p = HeuristicProvider::default();
        let req = |c: &str| {
            ChatRequest::structured(ENACT, "inner_thought", GENERATION_TEMPERATURE)
                .var("character", c)
                .var("line", "YOUTH: Where are we?")
        };
        let a: Value = serde_json::from_str(&p.complete(&req("Youth")).await.unwrap()).unwrap();
        let b: Value = serde_json::from_str(&p.complete(&req("Soldier A")).await.unwrap()).unwrap();
        assert_ne!(a["synthesis"], b["synthesis"]);
        assert!(is_first_person(a["synthesis"].as_str().unwrap()));
        assert_eq!(a, serde_json::from_str::<Value>(&p.complete(&req("Youth")).await.unwrap()).unwrap());
    }

    #[tokio::test]
    async fn embeddings_have_configured_dimension() {
        let p = HeuristicProvider::new(16);
        let out = p.embed(&EmbedRequest::new(vec!["a b c".into(), "".into()])).await.unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|v| v.len() == 16 && v.iter().any(|x| *x != 0.0)));
    }

    #[tokio::test]
    async fn unknown_template_is_an_error() {
        let p = HeuristicProvider::default();
        let req = ChatRequest::structured("nope", "x", DETERMINISTIC_TEMPERATURE);
        assert!(matches!(p.complete(&req).await, Err(ProviderError::Template(_))));
    }
}
