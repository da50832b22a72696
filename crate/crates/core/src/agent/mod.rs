//! Character agents: enactment in the character's role, then feedback from
//! the actor who plays it.

pub mod style;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::memory::{synthesize_context, ContextWindow, LongTermStore, MemoryError, RecalledTrace, ShortTermMemory};
use crate::parser::{canonical_key, mentions_character, LineKind, PersonaProfile, ScriptLine};
use crate::provider::templates::{
    ENACT, INSTANT_ACTOR, INSTANT_CHARACTER, POSTHOC_ACTOR, POSTHOC_CHARACTER, POSTHOC_UNREHEARSED, REVIEW,
};
use crate::provider::{complete_structured, ChatRequest, LlmProvider, ProviderError, StructuredOutput, GENERATION_TEMPERATURE};

pub use style::{lint_style, lint_style_voiced, LintConfig, StyleReport, StyleRule};

/// Source label for feedback not produced by a character agent.
pub const REVIEWER: &str = "reviewer";

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("{agent} is not involved in line {anchor:?}")]
    NotInvolved { agent: String, anchor: (usize, usize) },
    #[error("{agent} already enacted up to {last:?}; line {anchor:?} is behind the cursor")]
    AlreadyEnacted {
        agent: String,
        anchor: (usize, usize),
        last: (usize, usize),
    },
    #[error("invalid feedback candidate: {0}")]
    InvalidCandidate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    #[serde(alias = "character emotions", alias = "emotions")]
    CharacterEmotions,
    #[serde(alias = "behavioral motivation", alias = "motivation")]
    BehavioralMotivation,
    #[serde(alias = "character relationships", alias = "relationships")]
    CharacterRelationships,
    #[serde(alias = "plot pacing", alias = "pacing", alias = "plot_rhythm")]
    PlotPacing,
    #[serde(alias = "thematic consistency", alias = "theme")]
    ThematicConsistency,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::CharacterEmotions,
        Dimension::BehavioralMotivation,
        Dimension::CharacterRelationships,
        Dimension::PlotPacing,
        Dimension::ThematicConsistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::CharacterEmotions => "character_emotions",
            Dimension::BehavioralMotivation => "behavioral_motivation",
            Dimension::CharacterRelationships => "character_relationships",
            Dimension::PlotPacing => "plot_pacing",
            Dimension::ThematicConsistency => "thematic_consistency",
        }
    }

    fn guide(self) -> &'static str {
        match self {
            Dimension::CharacterEmotions => "what the character feels in the moment and whether it reads as earned",
            Dimension::BehavioralMotivation => "why the character does or says this, and whether the reason holds",
            Dimension::CharacterRelationships => "how the character stands toward the others and how that shifts",
            Dimension::PlotPacing => "whether the beat arrives too early, too late, or lingers",
            Dimension::ThematicConsistency => "whether the moment serves the story's larger concerns",
        }
    }

    /// Dimension list as given to the generation prompts.
    pub fn prompt_guide() -> String {
        Dimension::ALL
            .iter()
            .map(|d| format!("- {}: {}", d.as_str(), d.guide()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    AuthoritativeBackground,
    StoryOutline,
    RelevantMemories,
    CurrentSceneText,
    CurrentActionOrDialogue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub source: EvidenceSource,
    pub quote: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    Instant,
    Posthoc,
}

/// Who is speaking in a piece of feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    /// The actor who played the character, drawing on the enactment.
    Actor,
    /// The character itself, first person.
    Character,
    /// The actor's view without any enactment behind it.
    UnrehearsedActor,
    /// An outside screenplay reviewer.
    Reviewer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub scene_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCandidate {
    pub id: String,
    /// Character name, or [`REVIEWER`].
    pub source: String,
    pub perspective: Perspective,
    pub timing: Timing,
    pub anchor: Anchor,
    pub question: String,
    pub rationale: String,
    pub dimensions: BTreeSet<Dimension>,
    pub evidence_refs: Vec<EvidenceRef>,
}

impl FeedbackCandidate {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        source: String,
        perspective: Perspective,
        timing: Timing,
        anchor: Anchor,
        question: String,
        rationale: String,
        dimensions: BTreeSet<Dimension>,
        evidence_refs: Vec<EvidenceRef>,
    ) -> Result<Self, AgentError> {
        let candidate = FeedbackCandidate {
            id,
            source,
            perspective,
            timing,
            anchor,
            question,
            rationale,
            dimensions,
            evidence_refs,
        };
        candidate.check()?;
        Ok(candidate)
    }

    pub fn check(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidCandidate(format!("{}: {m}", self.id)));
        if self.dimensions.is_empty() {
            return bad("no dimension addressed");
        }
        if self.question.trim().is_empty() {
            return bad("empty question");
        }
        match (self.timing, self.anchor.line_index) {
            (Timing::Instant, None) => bad("instant feedback needs a line anchor"),
            (Timing::Posthoc, Some(_)) => bad("post-hoc feedback is anchored to a scene, not a line"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerThought {
    pub id: String,
    pub agent: String,
    pub scene_index: usize,
    pub line_index: usize,
    pub interpretation: String,
    pub recall_notes: String,
    pub objective: String,
    pub synthesis: String,
}

impl InnerThought {
    pub fn fields(&self) -> [&str; 4] {
        [&self.interpretation, &self.recall_notes, &self.objective, &self.synthesis]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub persona: PersonaProfile,
    pub short_term: ShortTermMemory,
    pub long_term: LongTermStore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_enacted: Option<(usize, usize)>,
}

impl Agent {
    pub fn new(persona: PersonaProfile, dimension: usize) -> Self {
        Agent {
            id: persona.character.clone(),
            long_term: LongTermStore::new(&persona.character, dimension),
            persona,
            short_term: ShortTermMemory::default(),
            last_enacted: None,
        }
    }

    /// Whether this agent speaks in, or is named by, the line.
    pub fn is_involved(&self, line: &ScriptLine) -> bool {
        match line.kind {
            LineKind::Dialogue => line.speaker.as_deref().map(canonical_key) == Some(canonical_key(&self.id)),
            LineKind::Action => mentions_character(&line.text, &self.id),
            LineKind::Heading => false,
        }
    }

    pub fn context(&self, recalled: &[RecalledTrace], budget: usize) -> ContextWindow {
        synthesize_context(&self.short_term, recalled, &self.persona, budget)
    }
}

#[derive(Debug, Deserialize)]
struct ThoughtReply {
    interpretation: String,
    recall_notes: String,
    objective: String,
    synthesis: String,
}

impl StructuredOutput for ThoughtReply {
    const SCHEMA_ID: &'static str = "inner_thought";

    fn validate(&self) -> Result<(), String> {
        for (name, value) in [
            ("interpretation", &self.interpretation),
            ("recall_notes", &self.recall_notes),
            ("objective", &self.objective),
            ("synthesis", &self.synthesis),
        ] {
            if value.trim().is_empty() {
                return Err(format!("`{name}` is empty"));
            }
        }
        if !style::is_first_person(&self.synthesis) {
            return Err("`synthesis` must be written in the first person".into());
        }
        Ok(())
    }
}

/// Result of one enactment.
#[derive(Debug, Clone)]
pub struct Enactment {
    pub thought: InnerThought,
    pub recalled: Vec<RecalledTrace>,
}

/// Enact `line` as the agent's character. The public line must already be
/// in the agent's short-term memory. The thought is stored privately in
/// short-term memory only.
pub async fn enact_line<P: LlmProvider + ?Sized>(
    agent: &mut Agent,
    line: &ScriptLine,
    scene_heading: &str,
    provider: &P,
    config: &EngineConfig,
) -> Result<Enactment, AgentError> {
    let anchor = line.anchor();
    if !agent.is_involved(line) {
        return Err(AgentError::NotInvolved {
            agent: agent.id.clone(),
            anchor,
        });
    }
    if let Some(last) = agent.last_enacted {
        if anchor <= last {
            return Err(AgentError::AlreadyEnacted {
                agent: agent.id.clone(),
                anchor,
                last,
            });
        }
    }
    let recalled = agent.long_term.recall(&line.text, config.recall_k, provider).await?;
    let context = agent.context(&recalled, config.context_budget);
    let request = ChatRequest::structured(ENACT, ThoughtReply::SCHEMA_ID, GENERATION_TEMPERATURE)
        .var("character", agent.id.clone())
        .var("scene_heading", scene_heading.to_string())
        .var("context", context.render())
        .var("line", line.text.clone())
        .on_behalf_of(&agent.id);
    let reply: ThoughtReply = complete_structured(provider, &request, config.max_retries).await?;
    let thought = InnerThought {
        id: format!("t-{}-{}-{}", anchor.0, anchor.1, crate::memory::slug(&agent.id)),
        agent: agent.id.clone(),
        scene_index: anchor.0,
        line_index: anchor.1,
        interpretation: reply.interpretation.trim().to_string(),
        recall_notes: reply.recall_notes.trim().to_string(),
        objective: reply.objective.trim().to_string(),
        synthesis: reply.synthesis.trim().to_string(),
    };
    agent.short_term.current_inner_thoughts.push(thought.synthesis.clone());
    agent.last_enacted = Some(anchor);
    Ok(Enactment { thought, recalled })
}

#[derive(Debug, Clone, Deserialize)]
struct CandidateDraft {
    question: String,
    #[serde(default)]
    rationale: String,
    dimensions: Vec<Dimension>,
    #[serde(default)]
    evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Deserialize)]
struct CandidatesReply {
    candidates: Vec<CandidateDraft>,
}

impl StructuredOutput for CandidatesReply {
    const SCHEMA_ID: &'static str = "feedback_candidates";

    fn validate(&self) -> Result<(), String> {
        for (i, c) in self.candidates.iter().enumerate() {
            if c.question.trim().is_empty() {
                return Err(format!("candidate {i} has an empty question"));
            }
            if c.dimensions.is_empty() {
                return Err(format!("candidate {i} names no dimension"));
            }
        }
        Ok(())
    }
}

/// Text available to a feedback generator, shared with the evaluator so
/// that evidence is checked against what the generator actually saw.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackInputs {
    pub character: Option<String>,
    pub persona: Option<String>,
    /// Rendered context window (persona, memories, scene so far, thoughts).
    pub context: Option<String>,
    pub line: Option<String>,
    pub scene_heading: String,
    pub scene_text: String,
    pub screenplay: Option<String>,
    pub outline: Option<String>,
    pub background: Option<String>,
    pub memories: Vec<String>,
}

fn or_none(v: &Option<String>) -> String {
    v.clone().filter(|s| !s.trim().is_empty()).unwrap_or_else(|| "(none)".into())
}

fn generation_request(
    template: &str,
    inputs: &FeedbackInputs,
    cap: usize,
    config: &EngineConfig,
) -> ChatRequest {
    let memories = if inputs.memories.is_empty() {
        "(none)".to_string()
    } else {
        inputs.memories.iter().map(|m| format!("- {m}")).collect::<Vec<_>>().join("\n")
    };
    let mut request = ChatRequest::structured(template, CandidatesReply::SCHEMA_ID, GENERATION_TEMPERATURE)
        .var("character", inputs.character.clone().unwrap_or_else(|| REVIEWER.into()))
        .var("persona", or_none(&inputs.persona))
        .var("context", or_none(&inputs.context))
        .var("line", or_none(&inputs.line))
        .var("scene_heading", inputs.scene_heading.clone())
        .var("scene_text", inputs.scene_text.clone())
        .var("screenplay", or_none(&inputs.screenplay))
        .var("outline", or_none(&inputs.outline))
        .var("background", or_none(&inputs.background))
        .var("memories", memories)
        .var("dimensions", Dimension::prompt_guide())
        .var("style_rules", config.lint.prompt_rules())
        .var("max_candidates", cap.to_string());
    if let Some(c) = &inputs.character {
        request = request.on_behalf_of(c);
    }
    request
}

#[allow(clippy::too_many_arguments)]
fn materialize(
    drafts: Vec<CandidateDraft>,
    id_base: &str,
    source: &str,
    perspective: Perspective,
    timing: Timing,
    anchor: Anchor,
    cap: usize,
) -> Result<Vec<FeedbackCandidate>, AgentError> {
    drafts
        .into_iter()
        .take(cap)
        .enumerate()
        .map(|(n, d)| {
            FeedbackCandidate::new(
                format!("{id_base}.{n}"),
                source.to_string(),
                perspective,
                timing,
                anchor,
                d.question.trim().to_string(),
                d.rationale.trim().to_string(),
                d.dimensions.into_iter().collect(),
                d.evidence
                    .into_iter()
                    .map(|e| EvidenceRef {
                        source: e.source,
                        quote: e.quote.trim().to_string(),
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Line-anchored candidates right after an enactment. `perspective` is
/// [`Perspective::Actor`] for the full pipeline or [`Perspective::Character`]
/// for first-person feedback restricted to what the character knows.
pub async fn generate_instant_candidates<P: LlmProvider + ?Sized>(
    line: &ScriptLine,
    thought: &InnerThought,
    perspective: Perspective,
    inputs: &FeedbackInputs,
    provider: &P,
    config: &EngineConfig,
) -> Result<Vec<FeedbackCandidate>, AgentError> {
    if thought.anchor() != line.anchor() {
        return Err(AgentError::InvalidCandidate(format!(
            "thought {} is not anchored to line {:?}",
            thought.id,
            line.anchor()
        )));
    }
    let template = match perspective {
        Perspective::Actor => INSTANT_ACTOR,
        Perspective::Character => INSTANT_CHARACTER,
        other => {
            return Err(AgentError::InvalidCandidate(format!(
                "instant feedback needs an enacted perspective, not {other:?}"
            )))
        }
    };
    let request = generation_request(template, inputs, config.instant_cap, config);
    let reply: CandidatesReply = complete_structured(provider, &request, config.max_retries).await?;
    let (scene, index) = line.anchor();
    materialize(
        reply.candidates,
        &format!("i-{scene}-{index}-{}", crate::memory::slug(&thought.agent)),
        &thought.agent,
        perspective,
        Timing::Instant,
        Anchor {
            scene_index: scene,
            line_index: Some(index),
        },
        config.instant_cap,
    )
}

/// Scene-level candidates once a scene is fully revealed.
pub async fn generate_posthoc_candidates<P: LlmProvider + ?Sized>(
    scene_index: usize,
    perspective: Perspective,
    inputs: &FeedbackInputs,
    provider: &P,
    config: &EngineConfig,
) -> Result<Vec<FeedbackCandidate>, AgentError> {
    let template = match perspective {
        Perspective::Actor => POSTHOC_ACTOR,
        Perspective::Character => POSTHOC_CHARACTER,
        Perspective::UnrehearsedActor => POSTHOC_UNREHEARSED,
        Perspective::Reviewer => REVIEW,
    };
    let source = match perspective {
        Perspective::Reviewer => REVIEWER.to_string(),
        _ => inputs
            .character
            .clone()
            .ok_or_else(|| AgentError::InvalidCandidate("character perspective without a character".into()))?,
    };
    let request = generation_request(template, inputs, config.posthoc_cap, config);
    let reply: CandidatesReply = complete_structured(provider, &request, config.max_retries).await?;
    materialize(
        reply.candidates,
        &format!("p-{scene_index}-{}", crate::memory::slug(&source)),
        &source,
        perspective,
        Timing::Posthoc,
        Anchor {
            scene_index,
            line_index: None,
        },
        config.posthoc_cap,
    )
}

impl InnerThought {
    pub fn anchor(&self) -> (usize, usize) {
        (self.scene_index, self.line_index)
    }
}
