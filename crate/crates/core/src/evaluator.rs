//! The feedback gate. A candidate is judged on four criteria by a neutral
//! evaluation prompt, with two local checks layered underneath: quoted
//! evidence must be found verbatim (modulo case and spacing) in the source
//! it names, and wording violations found by the style lint count against
//! expression diversity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::style::{lint_style_voiced, StyleReport};
use crate::agent::{EvidenceSource, FeedbackCandidate, Perspective, Timing, REVIEWER};
use crate::config::EngineConfig;
use crate::provider::templates::{EVALUATE_INSTANT, EVALUATE_POSTHOC};
use crate::provider::{complete_structured, ChatRequest, LlmProvider, ProviderError, StructuredOutput, DETERMINISTIC_TEMPERATURE};

#[derive(Debug, thiserror::Error)]
pub enum EvaluatorError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Evidence,
    Diversity,
    Dimensions,
    ImpactTiming,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Evidence,
        Criterion::Diversity,
        Criterion::Dimensions,
        Criterion::ImpactTiming,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: Criterion,
    pub passed: bool,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usefulness {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_id: String,
    pub results: Vec<CriterionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usefulness: Option<Usefulness>,
    pub accepted: bool,
}

impl Verdict {
    pub fn result(&self, criterion: Criterion) -> Option<&CriterionResult> {
        self.results.iter().find(|r| r.criterion == criterion)
    }

    pub fn passed(&self, criterion: Criterion) -> bool {
        self.result(criterion).is_some_and(|r| r.passed)
    }
}

/// The acceptance rule.
///
/// All four pass: accept. Only diversity fails: accept iff usefulness is
/// high. Evidence, dimensions or impact/timing fails: reject.
pub fn decide(results: &[CriterionResult], usefulness: Option<Usefulness>) -> Result<bool, EvaluatorError> {
    let mut passed = BTreeMap::new();
    for r in results {
        if passed.insert(r.criterion, r.passed).is_some() {
            return Err(EvaluatorError::Contract(format!("criterion {:?} given twice", r.criterion)));
        }
    }
    for c in Criterion::ALL {
        if !passed.contains_key(&c) {
            return Err(EvaluatorError::Contract(format!("criterion {c:?} missing")));
        }
    }
    let diversity_ok = passed[&Criterion::Diversity];
    match (diversity_ok, usefulness) {
        (true, Some(_)) => {
            return Err(EvaluatorError::Contract(
                "usefulness is only judged when diversity fails".into(),
            ))
        }
        (false, None) => {
            return Err(EvaluatorError::Contract(
                "usefulness is required when diversity fails".into(),
            ))
        }
        _ => {}
    }
    let hard_ok = passed[&Criterion::Evidence] && passed[&Criterion::Dimensions] && passed[&Criterion::ImpactTiming];
    Ok(hard_ok && (diversity_ok || usefulness == Some(Usefulness::High)))
}

/// The texts a candidate's evidence may be drawn from, keyed by source tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub sources: BTreeMap<EvidenceSource, String>,
    /// Text the feedback must not copy from.
    pub corpus: String,
}

impl EvidenceBundle {
    pub fn with(mut self, source: EvidenceSource, text: impl Into<String>) -> Self {
        let text = text.into();
        if !text.trim().is_empty() {
            self.sources.insert(source, text);
        }
        self
    }

    pub fn corpus(mut self, corpus: impl Into<String>) -> Self {
        self.corpus = corpus.into();
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (source, text) in &self.sources {
            let name = serde_json::to_value(source).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            out.push_str(&format!("### {name}\n{text}\n\n"));
        }
        if out.is_empty() {
            out.push_str("(no sources)\n");
        }
        out
    }
}

fn normalize_span(text: &str) -> String {
    text.replace(['“', '”', '‘', '’'], "'")
        .replace('"', "'")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Locate every quoted span in its named source. Returns the failure note.
pub fn verify_evidence(candidate: &FeedbackCandidate, bundle: &EvidenceBundle) -> Result<(), String> {
    if candidate.evidence_refs.is_empty() {
        return Err("no evidence cited".into());
    }
    for evidence in &candidate.evidence_refs {
        let quote = normalize_span(evidence.quote.trim_matches(|c: char| c == '"' || c.is_whitespace()));
        if quote.is_empty() {
            return Err(format!("empty quote attributed to {:?}", evidence.source));
        }
        let found = bundle
            .sources
            .get(&evidence.source)
            .is_some_and(|text| normalize_span(text).contains(&quote));
        if !found {
            return Err(format!("quote not found in {:?}: \"{}\"", evidence.source, evidence.quote));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Judgement {
    passed: bool,
    #[serde(default)]
    note: String,
}

#[derive(Debug, Deserialize)]
struct EvaluationReply {
    evidence: Judgement,
    diversity: Judgement,
    dimensions: Judgement,
    impact_timing: Judgement,
    #[serde(default)]
    usefulness: Option<Usefulness>,
}

impl StructuredOutput for EvaluationReply {
    const SCHEMA_ID: &'static str = "evaluation";
}

pub async fn assess_instant<P: LlmProvider + ?Sized>(
    candidate: &FeedbackCandidate,
    bundle: &EvidenceBundle,
    provider: &P,
    config: &EngineConfig,
) -> Result<Verdict, EvaluatorError> {
    if candidate.timing != Timing::Instant {
        return Err(EvaluatorError::Contract(format!("{} is not instant feedback", candidate.id)));
    }
    assess(EVALUATE_INSTANT, candidate, bundle, provider, config).await
}

pub async fn assess_posthoc<P: LlmProvider + ?Sized>(
    candidate: &FeedbackCandidate,
    bundle: &EvidenceBundle,
    provider: &P,
    config: &EngineConfig,
) -> Result<Verdict, EvaluatorError> {
    if candidate.timing != Timing::Posthoc {
        return Err(EvaluatorError::Contract(format!("{} is not post-hoc feedback", candidate.id)));
    }
    assess(EVALUATE_POSTHOC, candidate, bundle, provider, config).await
}

/// Style lint for a candidate, voiced by the character when it speaks in
/// the first person.
pub fn lint_candidate(candidate: &FeedbackCandidate, corpus: &str, config: &EngineConfig) -> StyleReport {
    let voice = (candidate.perspective == Perspective::Character).then_some(candidate.source.as_str());
    lint_style_voiced(&candidate.question, &candidate.rationale, corpus, voice, &config.lint)
}

async fn assess<P: LlmProvider + ?Sized>(
    template: &str,
    candidate: &FeedbackCandidate,
    bundle: &EvidenceBundle,
    provider: &P,
    config: &EngineConfig,
) -> Result<Verdict, EvaluatorError> {
    if candidate.dimensions.is_empty() {
        return Err(EvaluatorError::Contract(format!("{} addresses no dimension", candidate.id)));
    }
    let style = lint_candidate(candidate, &bundle.corpus, config);
    let shown = serde_json::json!({
        "question": candidate.question,
        "rationale": candidate.rationale,
        "dimensions": candidate.dimensions,
        "evidence": candidate.evidence_refs,
        "scene": candidate.anchor.scene_index,
        "line": candidate.anchor.line_index,
    });
    let mut request = ChatRequest::structured(template, EvaluationReply::SCHEMA_ID, DETERMINISTIC_TEMPERATURE)
        .var("candidate", serde_json::to_string_pretty(&shown).expect("candidate serializes"))
        .var("sources", bundle.render())
        .var("style_findings", style.describe());
    if candidate.source != REVIEWER {
        request = request.on_behalf_of(&candidate.source);
    }
    let reply: EvaluationReply = complete_structured(provider, &request, config.max_retries).await?;

    let note = |j: &Judgement, fallback: &str| {
        if j.note.trim().is_empty() {
            fallback.to_string()
        } else {
            j.note.trim().to_string()
        }
    };
    let mut evidence = CriterionResult {
        criterion: Criterion::Evidence,
        passed: reply.evidence.passed,
        note: note(&reply.evidence, if reply.evidence.passed { "grounded" } else { "evidence judged unreliable" }),
    };
    if let Err(why) = verify_evidence(candidate, bundle) {
        evidence.passed = false;
        evidence.note = why;
    }
    let mut diversity = CriterionResult {
        criterion: Criterion::Diversity,
        passed: reply.diversity.passed,
        note: note(&reply.diversity, if reply.diversity.passed { "varied wording" } else { "formulaic wording" }),
    };
    if !style.is_clean() {
        diversity.passed = false;
        diversity.note = style.describe();
    }
    let dimensions = CriterionResult {
        criterion: Criterion::Dimensions,
        passed: reply.dimensions.passed,
        note: note(&reply.dimensions, if reply.dimensions.passed { "on target" } else { "claimed dimension does not apply" }),
    };
    let impact = CriterionResult {
        criterion: Criterion::ImpactTiming,
        passed: reply.impact_timing.passed,
        note: note(&reply.impact_timing, if reply.impact_timing.passed { "timely" } else { "impact too small for this timing" }),
    };
    let usefulness = if diversity.passed {
        None
    } else {
        Some(reply.usefulness.unwrap_or(Usefulness::Low))
    };
    let results = vec![evidence, diversity, dimensions, impact];
    let accepted = decide(&results, usefulness)?;
    Ok(Verdict {
        candidate_id: candidate.id.clone(),
        results,
        usefulness,
        accepted,
    })
}
