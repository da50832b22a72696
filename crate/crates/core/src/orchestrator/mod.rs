//! Sessions: a line cursor over a parsed screenplay, the agents activated
//! for it, and the feedback that survives the gate.

pub mod report;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use futures::future::join_all;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::agent::{
    enact_line, generate_instant_candidates, generate_posthoc_candidates, Agent, AgentError, EvidenceSource,
    FeedbackCandidate, FeedbackInputs, InnerThought, Perspective, Timing, REVIEWER,
};
use crate::config::EngineConfig;
use crate::evaluator::{assess_instant, assess_posthoc, EvaluatorError, EvidenceBundle, Verdict};
use crate::memory::{summarize_scene, MemoryError, RecalledTrace};
use crate::parser::{canonical_key, ParsedScreenplay, ScriptLine};
use crate::provider::{LlmProvider, ProviderError};

pub use report::{ComparisonTable, SessionReport};

pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(alias = "Eval-PE", alias = "eval_pe", alias = "evalpe")]
    EvalPE,
    #[serde(alias = "Exp-PE", alias = "exp_pe", alias = "exppe")]
    ExpPE,
    #[serde(alias = "Eval-NoPE", alias = "eval_nope", alias = "evalnope")]
    EvalNoPE,
    #[serde(alias = "Rev-NoPE", alias = "rev_nope", alias = "revnope")]
    RevNoPE,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::EvalPE, Mode::ExpPE, Mode::EvalNoPE, Mode::RevNoPE];

    /// Whether characters are enacted before feedback is written.
    pub fn has_experience(self) -> bool {
        matches!(self, Mode::EvalPE | Mode::ExpPE)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::EvalPE => "EvalPE",
            Mode::ExpPE => "ExpPE",
            Mode::EvalNoPE => "EvalNoPE",
            Mode::RevNoPE => "RevNoPE",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().to_lowercase() == key)
            .ok_or_else(|| format!("unknown mode `{s}`; expected one of EvalPE, ExpPE, EvalNoPE, RevNoPE"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown character `{0}`")]
    UnknownCharacter(String),
    #[error("invalid session configuration: {0}")]
    InvalidModeConfig(String),
    #[error("the screenplay has no more lines")]
    EndOfScreenplay,
    #[error("scene {scene} is fully revealed and must be finished before stepping on")]
    SceneFinishRequired { scene: usize },
    #[error("scene {scene} still has {remaining} unrevealed line(s)")]
    SceneIncomplete { scene: usize, remaining: usize },
    #[error("no thought or feedback item with id `{0}`")]
    UnknownTarget(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Evaluator(#[from] EvaluatorError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownCharacter(_) => "unknown_character",
            SessionError::InvalidModeConfig(_) => "invalid_mode_config",
            SessionError::EndOfScreenplay => "end_of_screenplay",
            SessionError::SceneFinishRequired { .. } => "scene_finish_required",
            SessionError::SceneIncomplete { .. } => "scene_incomplete",
            SessionError::UnknownTarget(_) => "unknown_target",
            SessionError::Evaluator(EvaluatorError::Contract(_)) => "contract_violation",
            _ if self.provider_error().is_some() => "provider_error",
            _ => "invalid_output",
        }
    }

    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            SessionError::Agent(AgentError::Provider(e))
            | SessionError::Agent(AgentError::Memory(MemoryError::Provider(e)))
            | SessionError::Evaluator(EvaluatorError::Provider(e))
            | SessionError::Memory(MemoryError::Provider(e)) => Some(e),
            _ => None,
        }
    }
}

/// Position of the next line to reveal, and how many scenes are closed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    /// Index into the screenplay's line list.
    pub next: usize,
    pub finished_scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub id: String,
    pub candidate: FeedbackCandidate,
    pub verdict: Verdict,
    #[serde(default)]
    pub marked: bool,
}

/// Every gate decision, accepted or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub candidate: FeedbackCandidate,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackType {
    InnerThought,
    Instant,
    Posthoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkMetadata {
    pub character: String,
    pub scene_content: String,
    /// 1-based.
    pub scene_number: usize,
    pub feedback_type: FeedbackType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueMark {
    /// Id of the marked thought or feedback item.
    pub id: String,
    pub content: String,
    pub created_at: String,
    pub metadata: MarkMetadata,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub line: ScriptLine,
    pub cursor: Cursor,
    pub inner_thoughts: Vec<InnerThought>,
    pub accepted_instant: Vec<FeedbackItem>,
    /// The revealed line was the last of its scene.
    pub scene_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocResult {
    pub scene_index: usize,
    pub items: Vec<FeedbackItem>,
    pub cursor: Cursor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum SessionEvent {
    Step(StepResult),
    Posthoc(PosthocResult),
    Mark(ValueMark),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub id: String,
    /// Store id of the screenplay, when the session was created by a service.
    #[serde(default)]
    pub screenplay_id: String,
    pub mode: Mode,
    /// Activated characters in first-appearance order.
    pub activated: Vec<String>,
    pub config: EngineConfig,
    pub screenplay: ParsedScreenplay,
    pub cursor: Cursor,
    pub agents: IndexMap<String, Agent>,
    pub thoughts: Vec<InnerThought>,
    pub feedback_log: Vec<FeedbackItem>,
    pub assessments: Vec<Assessment>,
    pub marks: Vec<ValueMark>,
    pub events: Vec<SessionEvent>,
}

impl Session {
    pub fn create(
        id: impl Into<String>,
        screenplay: ParsedScreenplay,
        mode: Mode,
        activated: &[String],
        config: EngineConfig,
        embedding_dimension: usize,
    ) -> Result<Session, SessionError> {
        let mut wanted = Vec::new();
        for name in activated {
            let display = screenplay
                .character(name)
                .ok_or_else(|| SessionError::UnknownCharacter(name.clone()))?
                .to_string();
            if !wanted.contains(&display) {
                wanted.push(display);
            }
        }
        if mode.has_experience() && wanted.is_empty() {
            return Err(SessionError::InvalidModeConfig(format!("{mode} needs at least one activated character")));
        }
        if embedding_dimension == 0 {
            return Err(SessionError::InvalidModeConfig("embedding dimension must be positive".into()));
        }
        let activated: Vec<String> = screenplay.characters.iter().filter(|c| wanted.contains(c)).cloned().collect();
        let mut agents = IndexMap::new();
        if mode.has_experience() {
            for name in &activated {
                let persona = screenplay
                    .personas
                    .get(name)
                    .cloned()
                    .ok_or_else(|| SessionError::InvalidModeConfig(format!("no persona for {name}")))?;
                agents.insert(name.clone(), Agent::new(persona, embedding_dimension));
            }
        }
        Ok(Session {
            schema_version: SESSION_SCHEMA_VERSION,
            id: id.into(),
            screenplay_id: String::new(),
            mode,
            activated,
            config,
            screenplay,
            cursor: Cursor::default(),
            agents,
            thoughts: Vec::new(),
            feedback_log: Vec::new(),
            assessments: Vec::new(),
            marks: Vec::new(),
            events: Vec::new(),
        })
    }

    /// Revealed lines, in document order.
    pub fn public_context(&self) -> &[ScriptLine] {
        &self.screenplay.lines[..self.cursor.next]
    }

    pub fn is_finished(&self) -> bool {
        self.cursor.finished_scenes >= self.screenplay.scenes.len()
    }

    /// The scene awaiting `finish_scene`, if every line of it is revealed.
    pub fn scene_ready_to_finish(&self) -> Option<usize> {
        let scene = self.cursor.finished_scenes;
        if scene >= self.screenplay.scenes.len() {
            return None;
        }
        (self.scene_end(scene) <= self.cursor.next).then_some(scene)
    }

    fn scene_end(&self, scene: usize) -> usize {
        self.screenplay.lines.partition_point(|l| l.scene_index <= scene)
    }

    fn scene_revealed_text(&self, scene: usize) -> String {
        self.public_context()
            .iter()
            .filter(|l| l.scene_index == scene)
            .map(|l| l.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn heading(&self, scene: usize) -> String {
        self.screenplay.scenes.get(scene).map(|s| s.heading.clone()).unwrap_or_default()
    }

    fn background(&self, character: &str) -> String {
        let persona = self.screenplay.personas.get(character).map(|p| p.render()).unwrap_or_default();
        match self.screenplay.bio(character) {
            Some(bio) => format!("{bio}\n\n{persona}"),
            None => persona,
        }
    }

    /// Reveal the next line; enact it for involved agents and gate their
    /// instant feedback. On error the session is left exactly as before.
    pub async fn step<P: LlmProvider + ?Sized>(&mut self, provider: &P) -> Result<StepResult, SessionError> {
        if self.cursor.next >= self.screenplay.lines.len() {
            return Err(match self.scene_ready_to_finish() {
                Some(scene) => SessionError::SceneFinishRequired { scene },
                None => SessionError::EndOfScreenplay,
            });
        }
        if let Some(scene) = self.scene_ready_to_finish() {
            return Err(SessionError::SceneFinishRequired { scene });
        }
        let snapshot = self.clone();
        match self.step_inner(provider).await {
            Ok(result) => Ok(result),
            Err(e) => {
                *self = snapshot;
                Err(e)
            }
        }
    }

    async fn step_inner<P: LlmProvider + ?Sized>(&mut self, provider: &P) -> Result<StepResult, SessionError> {
        let line = self.screenplay.lines[self.cursor.next].clone();
        let scene = line.scene_index;
        self.cursor.next += 1;
        let heading = self.heading(scene);
        let corpus = self.screenplay.full_text();
        let config = self.config.clone();

        let mut thoughts = Vec::new();
        let mut accepted = Vec::new();
        let names: Vec<String> = self.agents.keys().cloned().collect();
        for name in &names {
            self.agents[name].short_term.observe(scene, &line.text);
        }
        for name in &names {
            if !self.agents[name].is_involved(&line) {
                continue;
            }
            let enactment = enact_line(&mut self.agents[name], &line, &heading, provider, &config).await?;
            let perspective = match self.mode {
                Mode::ExpPE => Perspective::Character,
                _ => Perspective::Actor,
            };
            let (inputs, bundle) = self.instant_inputs(name, &line, &enactment.recalled, perspective, &corpus);
            let candidates =
                generate_instant_candidates(&line, &enactment.thought, perspective, &inputs, provider, &config).await?;
            for candidate in candidates {
                let verdict = assess_instant(&candidate, &bundle, provider, &config).await?;
                self.record(candidate, verdict, &mut accepted);
            }
            thoughts.push(enactment.thought);
        }
        self.thoughts.extend(thoughts.iter().cloned());
        let result = StepResult {
            scene_complete: self.scene_end(scene) <= self.cursor.next,
            line,
            cursor: self.cursor,
            inner_thoughts: thoughts,
            accepted_instant: accepted,
        };
        self.events.push(SessionEvent::Step(result.clone()));
        Ok(result)
    }

    fn record(&mut self, candidate: FeedbackCandidate, verdict: Verdict, accepted: &mut Vec<FeedbackItem>) {
        if verdict.accepted {
            let item = FeedbackItem {
                id: candidate.id.clone(),
                candidate: candidate.clone(),
                verdict: verdict.clone(),
                marked: false,
            };
            self.feedback_log.push(item.clone());
            accepted.push(item);
        }
        self.assessments.push(Assessment { candidate, verdict });
    }

    fn instant_inputs(
        &self,
        name: &str,
        line: &ScriptLine,
        recalled: &[RecalledTrace],
        perspective: Perspective,
        corpus: &str,
    ) -> (FeedbackInputs, EvidenceBundle) {
        let agent = &self.agents[name];
        let memories: Vec<String> = recalled.iter().map(|r| r.trace.description.clone()).collect();
        let scene_text = self.scene_revealed_text(line.scene_index);
        let background = self.background(name);
        let outline = match perspective {
            Perspective::Character => None,
            _ => self.screenplay.outline.clone(),
        };
        let inputs = FeedbackInputs {
            character: Some(name.to_string()),
            persona: Some(agent.persona.render()),
            context: Some(agent.context(recalled, self.config.context_budget).render()),
            line: Some(line.text.clone()),
            scene_heading: self.heading(line.scene_index),
            scene_text: scene_text.clone(),
            screenplay: None,
            outline: outline.clone(),
            background: Some(background.clone()),
            memories: memories.clone(),
        };
        let bundle = EvidenceBundle::default()
            .with(EvidenceSource::AuthoritativeBackground, background)
            .with(EvidenceSource::StoryOutline, outline.unwrap_or_default())
            .with(EvidenceSource::RelevantMemories, memories.join("\n"))
            .with(
                EvidenceSource::CurrentSceneText,
                format!("{scene_text}\n{}", agent.short_term.current_inner_thoughts.join("\n")),
            )
            .with(EvidenceSource::CurrentActionOrDialogue, line.text.clone())
            .corpus(corpus);
        (inputs, bundle)
    }

    /// Close the fully revealed scene: gate scene-level feedback from every
    /// source, then (with experience) write each agent's scene memory.
    pub async fn finish_scene<P: LlmProvider + ?Sized>(&mut self, provider: &P) -> Result<PosthocResult, SessionError> {
        let scene = self.cursor.finished_scenes;
        if scene >= self.screenplay.scenes.len() {
            return Err(SessionError::EndOfScreenplay);
        }
        let end = self.scene_end(scene);
        if end > self.cursor.next {
            return Err(SessionError::SceneIncomplete {
                scene,
                remaining: end - self.cursor.next,
            });
        }
        let snapshot = self.clone();
        match self.finish_inner(scene, provider).await {
            Ok(result) => Ok(result),
            Err(e) => {
                *self = snapshot;
                Err(e)
            }
        }
    }

    fn posthoc_sources(&self, scene: usize) -> Vec<(Option<String>, Perspective)> {
        match self.mode {
            Mode::EvalPE | Mode::ExpPE => {
                let perspective = if self.mode == Mode::ExpPE {
                    Perspective::Character
                } else {
                    Perspective::Actor
                };
                self.agents
                    .values()
                    .filter(|a| a.short_term.scene_index == scene && !a.short_term.current_inner_thoughts.is_empty())
                    .map(|a| (Some(a.id.clone()), perspective))
                    .collect()
            }
            Mode::EvalNoPE => self
                .activated
                .iter()
                .map(|c| (Some(c.clone()), Perspective::UnrehearsedActor))
                .collect(),
            Mode::RevNoPE => vec![(None, Perspective::Reviewer)],
        }
    }

    async fn posthoc_for<P: LlmProvider + ?Sized>(
        &self,
        scene: usize,
        character: Option<&str>,
        perspective: Perspective,
        provider: &P,
    ) -> Result<Vec<(FeedbackCandidate, Verdict)>, SessionError> {
        let config = &self.config;
        let scene_text = self.screenplay.scene_text(scene);
        let screenplay = self.screenplay.full_text();
        let with_script = perspective != Perspective::Character;
        let outline = if with_script { self.screenplay.outline.clone() } else { None };
        let mut inputs = FeedbackInputs {
            character: character.map(str::to_string),
            scene_heading: self.heading(scene),
            scene_text: scene_text.clone(),
            screenplay: with_script.then(|| screenplay.clone()),
            outline: outline.clone(),
            ..Default::default()
        };
        let mut bundle = EvidenceBundle::default()
            .with(EvidenceSource::StoryOutline, outline.unwrap_or_default())
            .with(
                EvidenceSource::CurrentActionOrDialogue,
                if with_script { screenplay.clone() } else { scene_text.clone() },
            )
            .corpus(screenplay);
        let mut scene_evidence = scene_text.clone();
        if let Some(name) = character {
            let background = self.background(name);
            inputs.persona = self.screenplay.personas.get(name).map(|p| p.render());
            inputs.background = Some(background.clone());
            bundle = bundle.with(EvidenceSource::AuthoritativeBackground, background);
            if let Some(agent) = self.agents.get(name) {
                let recalled = agent.long_term.recall(&scene_text, config.recall_k, provider).await.map_err(AgentError::from)?;
                let memories: Vec<String> = recalled.iter().map(|r| r.trace.description.clone()).collect();
                inputs.context = Some(agent.context(&recalled, config.context_budget).render());
                bundle = bundle.with(EvidenceSource::RelevantMemories, memories.join("\n"));
                inputs.memories = memories;
                scene_evidence = format!("{scene_evidence}\n{}", agent.short_term.current_inner_thoughts.join("\n"));
            }
        }
        bundle = bundle.with(EvidenceSource::CurrentSceneText, scene_evidence);

        let candidates = generate_posthoc_candidates(scene, perspective, &inputs, provider, config).await?;
        let mut out = Vec::with_capacity(candidates.len());
        for candidate in candidates {
            let verdict = assess_posthoc(&candidate, &bundle, provider, config).await?;
            out.push((candidate, verdict));
        }
        Ok(out)
    }

    async fn finish_inner<P: LlmProvider + ?Sized>(&mut self, scene: usize, provider: &P) -> Result<PosthocResult, SessionError> {
        let sources = self.posthoc_sources(scene);
        let outcomes = {
            let this = &*self;
            join_all(
                sources
                    .iter()
                    .map(|(character, perspective)| this.posthoc_for(scene, character.as_deref(), *perspective, provider)),
            )
            .await
        };
        let mut items = Vec::new();
        for outcome in outcomes {
            for (candidate, verdict) in outcome? {
                self.record(candidate, verdict, &mut items);
            }
        }
        let config = self.config.clone();
        for agent in self.agents.values_mut() {
            if agent.short_term.scene_index != scene {
                agent.short_term.enter_scene(scene);
            }
            summarize_scene(&agent.persona, &mut agent.long_term, &mut agent.short_term, scene, provider, &config).await?;
        }
        self.cursor.finished_scenes += 1;
        let result = PosthocResult {
            scene_index: scene,
            items,
            cursor: self.cursor,
        };
        self.events.push(SessionEvent::Posthoc(result.clone()));
        Ok(result)
    }

    /// Step and finish until the screenplay is exhausted.
    pub async fn run_all<P: LlmProvider + ?Sized>(&mut self, provider: &P) -> Result<SessionReport, SessionError> {
        if self.cursor != Cursor::default() {
            return Err(SessionError::InvalidModeConfig("run_all needs a fresh session".into()));
        }
        while !self.is_finished() {
            if self.scene_ready_to_finish().is_some() {
                self.finish_scene(provider).await?;
            } else {
                self.step(provider).await?;
            }
        }
        Ok(SessionReport::from_session(self))
    }

    /// Mark a thought or feedback item as valuable. Marking twice returns
    /// the existing mark.
    pub fn mark_value(&mut self, target_id: &str, clock: &dyn Clock) -> Result<ValueMark, SessionError> {
        if let Some(existing) = self.marks.iter().find(|m| m.id == target_id) {
            return Ok(existing.clone());
        }
        let (character, scene, content, feedback_type) =
            if let Some(t) = self.thoughts.iter().find(|t| t.id == target_id) {
                (t.agent.clone(), t.scene_index, t.synthesis.clone(), FeedbackType::InnerThought)
            } else if let Some(item) = self.feedback_log.iter_mut().find(|i| i.id == target_id) {
                item.marked = true;
                let c = &item.candidate;
                let kind = match c.timing {
                    Timing::Instant => FeedbackType::Instant,
                    Timing::Posthoc => FeedbackType::Posthoc,
                };
                let content = if c.rationale.is_empty() {
                    c.question.clone()
                } else {
                    format!("{}\n{}", c.question, c.rationale)
                };
                (c.source.clone(), c.anchor.scene_index, content, kind)
            } else {
                return Err(SessionError::UnknownTarget(target_id.to_string()));
            };
        let mark = ValueMark {
            id: target_id.to_string(),
            content,
            created_at: clock.now().to_rfc3339_opts(SecondsFormat::Millis, true),
            metadata: MarkMetadata {
                character,
                scene_content: self.screenplay.scene_text(scene),
                scene_number: scene + 1,
                feedback_type,
            },
        };
        self.marks.push(mark.clone());
        self.events.push(SessionEvent::Mark(mark.clone()));
        Ok(mark)
    }

    pub fn is_marked(&self, target_id: &str) -> bool {
        self.marks.iter().any(|m| m.id == target_id)
    }

    /// Feedback items from one source, in log order.
    pub fn feedback_from<'a>(&'a self, source: &'a str) -> impl Iterator<Item = &'a FeedbackItem> + 'a {
        let key = canonical_key(source);
        self.feedback_log
            .iter()
            .filter(move |i| canonical_key(&i.candidate.source) == key || (source == REVIEWER && i.candidate.source == REVIEWER))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }
}

#[cfg(test)]
mod tests;
