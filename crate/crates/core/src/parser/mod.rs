//! Screenplay ingestion: scene segmentation, line classification, character
//! extraction and persona synthesis.
//!
//! Segmentation is first requested from the model as line spans; the spans
//! are accepted only if they partition the normalized body exactly, otherwise
//! the regex fallback decides. Line texts are always taken from the source,
//! never from model output, so the round trip is exact by construction.

pub mod bios;
pub mod heading;

use std::sync::OnceLock;

use futures::future::join_all;
use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::provider::templates::{CLASSIFY, PERSONA, SEGMENT};
use crate::provider::{
    complete_structured, complete_structured_with, ChatRequest, LlmProvider, ProviderError, StructuredOutput,
    DETERMINISTIC_TEMPERATURE, GENERATION_TEMPERATURE,
};
pub use heading::{
    body_lines, fallback_spans, normalize_body, spans_to_scenes, validate_spans, HeadingPatterns, SceneSpan,
};

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("screenplay body is empty")]
    EmptyBody,
    #[error("could not classify lines of scene {scene}: {source}")]
    Classification {
        scene: usize,
        #[source]
        source: ProviderError,
    },
    #[error("could not build persona for {character}: {source}")]
    Persona {
        character: String,
        #[source]
        source: ProviderError,
    },
    #[error("unknown character `{0}`")]
    UnknownCharacter(String),
    #[error("invalid parsed screenplay: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawScreenplay {
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bios: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outline: Option<String>,
}

impl RawScreenplay {
    pub fn new(title: impl Into<String>, body: impl Into<String>) -> Self {
        RawScreenplay {
            title: title.into(),
            body: body.into(),
            bios: None,
            outline: None,
        }
    }

    pub fn normalized_body(&self) -> String {
        normalize_body(&self.body)
    }

    pub fn is_blank(&self) -> bool {
        self.normalized_body().trim().is_empty()
    }

    /// Content address over the normalized inputs.
    pub fn content_id(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            Some(self.title.as_str()),
            Some(self.normalized_body().as_str()),
            self.bios.as_deref(),
            self.outline.as_deref(),
        ] {
            h.update(part.map(|p| p.len() as u64).unwrap_or(u64::MAX).to_le_bytes());
            h.update(part.unwrap_or("").as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub index: usize,
    /// The heading line as written, or `SCENE n` when the scene has none.
    pub heading: String,
    /// Row of the heading within `body_lines`, if the scene has a real one.
    pub heading_row: Option<usize>,
    pub body_lines: Vec<String>,
}

impl Scene {
    pub fn text(&self) -> String {
        self.body_lines.join("\n")
    }

    /// Rows that carry content other than the heading.
    fn content_rows(&self) -> Vec<usize> {
        self.body_lines
            .iter()
            .enumerate()
            .filter(|(row, line)| Some(*row) != self.heading_row && !line.trim().is_empty())
            .map(|(row, _)| row)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Heading,
    Action,
    Dialogue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub scene_index: usize,
    pub line_index: usize,
    pub kind: LineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub text: String,
}

impl ScriptLine {
    pub fn anchor(&self) -> (usize, usize) {
        (self.scene_index, self.line_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaSource {
    AuthoritativeBio,
    Synthesized,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub character: String,
    pub background: String,
    pub traits: Vec<String>,
    pub goals: String,
    pub motivations: String,
    pub source: PersonaSource,
}

impl PersonaProfile {
    pub fn render(&self) -> String {
        format!(
            "Name: {}\nBackground: {}\nCore traits: {}\nGoals: {}\nMotivations: {}",
            self.character,
            self.background,
            self.traits.join(", "),
            self.goals,
            self.motivations
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedScreenplay {
    pub title: String,
    pub scenes: Vec<Scene>,
    pub lines: Vec<ScriptLine>,
    /// Distinct speakers in first-appearance order.
    pub characters: Vec<String>,
    pub personas: IndexMap<String, PersonaProfile>,
    /// Author-provided bios keyed by character display name.
    #[serde(default)]
    pub bios: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outline: Option<String>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl ParsedScreenplay {
    pub fn line(&self, scene_index: usize, line_index: usize) -> Option<&ScriptLine> {
        self.scene_lines(scene_index).get(line_index)
    }

    pub fn scene_lines(&self, scene_index: usize) -> &[ScriptLine] {
        let start = self.lines.partition_point(|l| l.scene_index < scene_index);
        let end = self.lines.partition_point(|l| l.scene_index <= scene_index);
        &self.lines[start..end]
    }

    pub fn scene_text(&self, scene_index: usize) -> String {
        self.scenes.get(scene_index).map(Scene::text).unwrap_or_default()
    }

    /// Normalized body, rebuilt from the scenes.
    pub fn full_text(&self) -> String {
        self.scenes.iter().map(Scene::text).collect::<Vec<_>>().join("\n")
    }

    /// Case-insensitive lookup returning the display name.
    pub fn character(&self, name: &str) -> Option<&str> {
        let key = canonical_key(name);
        self.characters.iter().find(|c| canonical_key(c) == key).map(String::as_str)
    }

    pub fn bio(&self, character: &str) -> Option<&str> {
        let key = canonical_key(character);
        self.bios.iter().find(|(n, _)| canonical_key(n) == key).map(|(_, b)| b.as_str())
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        let invalid = |m: String| Err(ParseError::Invalid(m));
        for (i, scene) in self.scenes.iter().enumerate() {
            if scene.index != i {
                return invalid(format!("scene {i} has index {}", scene.index));
            }
        }
        let mut previous: Option<(usize, usize)> = None;
        for line in &self.lines {
            let anchor = line.anchor();
            let expected = match previous {
                Some((s, l)) if s == anchor.0 => (s, l + 1),
                Some((s, _)) if anchor.0 > s => (anchor.0, 0),
                None => (anchor.0, 0),
                Some(_) => return invalid(format!("line {anchor:?} out of order")),
            };
            if anchor != expected {
                return invalid(format!("line {anchor:?} out of order, expected {expected:?}"));
            }
            if anchor.0 >= self.scenes.len() {
                return invalid(format!("line {anchor:?} refers to a missing scene"));
            }
            match line.kind {
                LineKind::Dialogue if line.speaker.as_deref().map_or(true, |s| s.trim().is_empty()) => {
                    return invalid(format!("dialogue line {anchor:?} has no speaker"));
                }
                LineKind::Heading if anchor.1 != 0 => {
                    return invalid(format!("heading at {anchor:?} is not the first line"));
                }
                LineKind::Action | LineKind::Heading if line.speaker.is_some() => {
                    return invalid(format!("non-dialogue line {anchor:?} has a speaker"));
                }
                _ => {}
            }
            previous = Some(anchor);
        }
        let speakers = extract_characters(&self.lines);
        if speakers != self.characters {
            return invalid("character list does not match dialogue speakers".into());
        }
        for c in &self.characters {
            let Some(p) = self.personas.get(c) else {
                return invalid(format!("no persona for {c}"));
            };
            if p.background.trim().is_empty()
                || p.goals.trim().is_empty()
                || p.motivations.trim().is_empty()
                || p.traits.iter().all(|t| t.trim().is_empty())
            {
                return invalid(format!("persona for {c} has empty fields"));
            }
        }
        if self.personas.len() != self.characters.len() {
            return invalid("personas exist for names that are not characters".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ParserConfig {
    pub headings: HeadingPatterns,
    pub max_retries: u32,
    /// Ask the model for segmentation before falling back to patterns.
    pub model_segmentation: bool,
    /// Cap on appearance text sent for persona synthesis, in characters.
    pub persona_context_chars: usize,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            headings: HeadingPatterns::default(),
            max_retries: 2,
            model_segmentation: true,
            persona_context_chars: 12_000,
        }
    }
}

/// Trim and collapse inner whitespace, keeping case.
pub fn canonical_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Comparison key for character names.
pub fn canonical_key(name: &str) -> String {
    canonical_name(name).to_lowercase()
}

/// Whether `text` names `character` as a whole word, ignoring case.
pub fn mentions_character(text: &str, character: &str) -> bool {
    let name = canonical_name(character);
    if name.is_empty() {
        return false;
    }
    let pattern = format!(r"(?i)(^|[^\p{{L}}\p{{N}}]){}($|[^\p{{L}}\p{{N}}])", regex::escape(&name).replace(' ', r"\s+"));
    Regex::new(&pattern).map(|re| re.is_match(text)).unwrap_or(false)
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub scenes: Vec<Scene>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SegmentReply {
    scenes: Vec<SceneSpan>,
}

impl StructuredOutput for SegmentReply {
    const SCHEMA_ID: &'static str = "scene_spans";
}

fn numbered(lines: &[String]) -> String {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}| {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Pattern-based segmentation; pure and always yields at least one scene.
pub fn fallback_segment(raw: &RawScreenplay, headings: &HeadingPatterns) -> Vec<Scene> {
    let lines = body_lines(&raw.normalized_body());
    spans_to_scenes(&fallback_spans(&lines, headings), &lines)
}

pub async fn segment_scenes<P: LlmProvider + ?Sized>(
    raw: &RawScreenplay,
    provider: &P,
    config: &ParserConfig,
) -> Result<Segmentation, ParseError> {
    if raw.is_blank() {
        return Err(ParseError::EmptyBody);
    }
    let lines = body_lines(&raw.normalized_body());
    let mut diagnostics = Vec::new();

    if config.model_segmentation {
        let request = ChatRequest::structured(SEGMENT, SegmentReply::SCHEMA_ID, DETERMINISTIC_TEMPERATURE)
            .var("title", raw.title.clone())
            .var("line_count", lines.len().to_string())
            .var("numbered_body", numbered(&lines));
        match complete_structured::<SegmentReply, _>(provider, &request, config.max_retries).await {
            Ok(reply) => match validate_spans(&reply.scenes, &lines) {
                Ok(()) => {
                    return Ok(Segmentation {
                        scenes: spans_to_scenes(&reply.scenes, &lines),
                        diagnostics,
                    })
                }
                Err(why) => diagnostics.push(format!("model segmentation rejected ({why}); used heading patterns")),
            },
            Err(e) => diagnostics.push(format!("model segmentation unavailable ({e}); used heading patterns")),
        }
        warn!(title = %raw.title, "falling back to pattern segmentation");
    }

    Ok(Segmentation {
        scenes: spans_to_scenes(&fallback_spans(&lines, &config.headings), &lines),
        diagnostics,
    })
}

#[derive(Debug, Deserialize)]
struct LineLabel {
    index: usize,
    kind: LineKind,
    #[serde(default)]
    speaker: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ClassifyReply {
    lines: Vec<LineLabel>,
}

impl StructuredOutput for ClassifyReply {
    const SCHEMA_ID: &'static str = "line_labels";

    fn validate(&self) -> Result<(), String> {
        for label in &self.lines {
            match label.kind {
                LineKind::Heading => return Err(format!("line {} labelled as a heading", label.index)),
                LineKind::Dialogue if label.speaker.as_deref().map_or(true, |s| s.trim().is_empty()) => {
                    return Err(format!("dialogue line {} has no speaker", label.index))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub async fn classify_lines<P: LlmProvider + ?Sized>(
    scene: &Scene,
    provider: &P,
    config: &ParserConfig,
) -> Result<Vec<ScriptLine>, ParseError> {
    let mut out = Vec::new();
    if let Some(row) = scene.heading_row {
        out.push(ScriptLine {
            scene_index: scene.index,
            line_index: 0,
            kind: LineKind::Heading,
            speaker: None,
            text: scene.body_lines[row].trim().to_string(),
        });
    }
    let rows = scene.content_rows();
    if rows.is_empty() {
        return Ok(out);
    }
    let texts: Vec<String> = rows.iter().map(|&r| scene.body_lines[r].trim().to_string()).collect();
    let request = ChatRequest::structured(CLASSIFY, ClassifyReply::SCHEMA_ID, DETERMINISTIC_TEMPERATURE)
        .var("heading", scene.heading.clone())
        .var("line_count", texts.len().to_string())
        .var("numbered_lines", numbered(&texts));
    let expected = texts.len();
    let reply: ClassifyReply = complete_structured_with(provider, &request, config.max_retries, |r: &ClassifyReply| {
        if r.lines.len() != expected {
            return Err(format!("expected {expected} labels, got {}", r.lines.len()));
        }
        for (i, label) in r.lines.iter().enumerate() {
            if label.index != i {
                return Err(format!("label {i} carries index {}", label.index));
            }
        }
        Ok(())
    })
    .await
    .map_err(|source| ParseError::Classification {
        scene: scene.index,
        source,
    })?;

    let offset = out.len();
    for (i, (label, text)) in reply.lines.into_iter().zip(texts).enumerate() {
        let speaker = match label.kind {
            LineKind::Dialogue => label.speaker.map(|s| canonical_name(&s)),
            _ => None,
        };
        out.push(ScriptLine {
            scene_index: scene.index,
            line_index: offset + i,
            kind: label.kind,
            speaker,
            text,
        });
    }
    Ok(out)
}

/// Distinct speakers in first-appearance order, compared case-insensitively.
pub fn extract_characters(lines: &[ScriptLine]) -> Vec<String> {
    let mut seen = IndexMap::new();
    for line in lines {
        if let (LineKind::Dialogue, Some(speaker)) = (line.kind, &line.speaker) {
            seen.entry(canonical_key(speaker)).or_insert_with(|| canonical_name(speaker));
        }
    }
    seen.into_values().collect()
}

/// Rewrite every speaker to the display form of its first appearance.
fn unify_speakers(lines: &mut [ScriptLine], characters: &[String]) {
    for line in lines {
        if let Some(speaker) = &line.speaker {
            let key = canonical_key(speaker);
            if let Some(display) = characters.iter().find(|c| canonical_key(c) == key) {
                line.speaker = Some(display.clone());
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct PersonaReply {
    background: String,
    traits: Vec<String>,
    goals: String,
    motivations: String,
}

impl StructuredOutput for PersonaReply {
    const SCHEMA_ID: &'static str = "persona";

    fn validate(&self) -> Result<(), String> {
        if self.background.trim().is_empty() || self.goals.trim().is_empty() || self.motivations.trim().is_empty() {
            return Err("background, goals and motivations must be non-empty".into());
        }
        if self.traits.iter().all(|t| t.trim().is_empty()) {
            return Err("at least one trait is required".into());
        }
        Ok(())
    }
}

pub async fn build_persona<P: LlmProvider + ?Sized>(
    name: &str,
    parsed: &ParsedScreenplay,
    provider: &P,
    config: &ParserConfig,
) -> Result<PersonaProfile, ParseError> {
    let character = parsed
        .character(name)
        .ok_or_else(|| ParseError::UnknownCharacter(name.to_string()))?
        .to_string();
    let appearing: Vec<usize> = parsed
        .scenes
        .iter()
        .filter(|s| {
            parsed.scene_lines(s.index).iter().any(|l| {
                l.speaker.as_deref().map(canonical_key) == Some(canonical_key(&character))
                    || (l.kind == LineKind::Action && mentions_character(&l.text, &character))
            })
        })
        .map(|s| s.index)
        .collect();
    let mut appearances = String::new();
    for &i in &appearing {
        let text = parsed.scene_text(i);
        if appearances.len() + text.len() > config.persona_context_chars {
            let room = config.persona_context_chars.saturating_sub(appearances.len());
            appearances.push_str(&text.chars().take(room).collect::<String>());
            break;
        }
        appearances.push_str(&text);
        appearances.push_str("\n\n");
    }
    let bio = parsed.bio(&character);
    let request = ChatRequest::structured(PERSONA, PersonaReply::SCHEMA_ID, GENERATION_TEMPERATURE)
        .var("character", character.clone())
        .var("bio", bio.unwrap_or("(none provided)"))
        .var("outline", parsed.outline.as_deref().unwrap_or("(none provided)"))
        .var("appearances", appearances.trim_end().to_string());
    let reply: PersonaReply = complete_structured(provider, &request, config.max_retries)
        .await
        .map_err(|source| ParseError::Persona {
            character: character.clone(),
            source,
        })?;
    let source = match (bio.is_some(), appearing.is_empty()) {
        (true, false) => PersonaSource::Merged,
        (true, true) => PersonaSource::AuthoritativeBio,
        (false, _) => PersonaSource::Synthesized,
    };
    Ok(PersonaProfile {
        character,
        background: reply.background.trim().to_string(),
        traits: reply
            .traits
            .into_iter()
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect(),
        goals: reply.goals.trim().to_string(),
        motivations: reply.motivations.trim().to_string(),
        source,
    })
}

/// Full ingestion: segment, classify, extract characters, build personas.
pub async fn parse_screenplay<P: LlmProvider + ?Sized>(
    raw: &RawScreenplay,
    provider: &P,
    config: &ParserConfig,
) -> Result<ParsedScreenplay, ParseError> {
    let Segmentation { scenes, diagnostics } = segment_scenes(raw, provider, config).await?;

    let classified = join_all(scenes.iter().map(|s| classify_lines(s, provider, config))).await;
    let mut lines = Vec::new();
    for result in classified {
        lines.extend(result?);
    }
    let characters = extract_characters(&lines);
    unify_speakers(&mut lines, &characters);

    let bios = raw
        .bios
        .as_deref()
        .map(bios::parse_bios)
        .unwrap_or_default()
        .into_values()
        .map(|(name, bio)| {
            let display = characters
                .iter()
                .find(|c| canonical_key(c) == canonical_key(&name))
                .cloned()
                .unwrap_or(name);
            (display, bio)
        })
        .collect();

    let mut parsed = ParsedScreenplay {
        title: raw.title.clone(),
        scenes,
        lines,
        characters,
        personas: IndexMap::new(),
        bios,
        outline: raw.outline.clone().filter(|o| !o.trim().is_empty()),
        diagnostics,
    };

    let personas = join_all(parsed.characters.iter().map(|c| build_persona(c, &parsed, provider, config))).await;
    let mut built = IndexMap::new();
    for persona in personas {
        let persona = persona?;
        built.insert(persona.character.clone(), persona);
    }
    parsed.personas = built;
    parsed.validate()?;
    Ok(parsed)
}

pub(crate) fn speech_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([\p{L}][\p{L}\p{N} .'\-]{0,39}?)\s*(?:\([^)]*\))?\s*[:：]\s*(\S.*)$").unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::scripted::ScriptedProvider;

    #[test]
    fn names_compare_case_insensitively() {
        assert_eq!(canonical_name("  Soldier   A "), "Soldier A");
        assert_eq!(canonical_key("SOLDIER A"), canonical_key("soldier  a"));
        let lines = vec![
            dialogue(0, 0, "SOLDIER A"),
            dialogue(0, 1, "Youth"),
            dialogue(1, 0, "Soldier A"),
        ];
        assert_eq!(extract_characters(&lines), vec!["SOLDIER A", "Youth"]);
    }

    #[test]
    fn no_dialogue_no_characters() {
        let lines = vec![ScriptLine {
            scene_index: 0,
            line_index: 0,
            kind: LineKind::Action,
            speaker: None,
            text: "Rain.".into(),
        }];
        assert!(extract_characters(&lines).is_empty());
    }

    #[test]
    fn mention_detection_uses_word_boundaries() {
        assert!(mentions_character("The youth stares at the sign.", "Youth"));
        assert!(mentions_character("Soldier  A shrugs.", "Soldier A"));
        assert!(!mentions_character("Youthful faces pass.", "Youth"));
    }

    fn dialogue(scene: usize, line: usize, speaker: &str) -> ScriptLine {
        ScriptLine {
            scene_index: scene,
            line_index: line,
            kind: LineKind::Dialogue,
            speaker: Some(speaker.into()),
            text: format!("{speaker}: ..."),
        }
    }

    #[tokio::test]
    async fn bad_model_spans_fall_back_to_patterns() {
        let raw = RawScreenplay::new("t", "INT. A\nx\n\nEXT. B\ny\n");
        // Drops the last three lines.
        let provider = ScriptedProvider::new().with_template(
            SEGMENT,
            r#"{"scenes":[{"start_line":0,"end_line":3,"has_heading":true}]}"#,
        );
        let seg = segment_scenes(&raw, &provider, &ParserConfig::default()).await.unwrap();
        assert_eq!(seg.scenes.len(), 2);
        assert_eq!(seg.diagnostics.len(), 1);
        let rebuilt: Vec<String> = seg.scenes.iter().map(Scene::text).collect();
        assert_eq!(rebuilt.join("\n"), raw.normalized_body());
    }

    #[tokio::test]
    async fn valid_model_spans_are_used() {
        let raw = RawScreenplay::new("t", "SCENE ONE\nx\nSCENE TWO\ny");
        let provider = ScriptedProvider::new().with_template(
            SEGMENT,
            r#"{"scenes":[{"start_line":0,"end_line":2,"has_heading":true},{"start_line":2,"end_line":4,"has_heading":true}]}"#,
        );
        let seg = segment_scenes(&raw, &provider, &ParserConfig::default()).await.unwrap();
        assert!(seg.diagnostics.is_empty());
        assert_eq!(seg.scenes[1].heading, "SCENE TWO");
    }

    #[tokio::test]
    async fn empty_body_is_an_error() {
        let raw = RawScreenplay::new("t", "  \r\n\t\n");
        let err = segment_scenes(&raw, &ScriptedProvider::new(), &ParserConfig::default()).await;
        assert!(matches!(err, Err(ParseError::EmptyBody)));
    }

    #[tokio::test]
    async fn classification_keeps_source_text_and_order() {
        let scene = Scene {
            index: 0,
            heading: "INT. STATION".into(),
            heading_row: Some(0),
            body_lines: vec![
                "INT. STATION".into(),
                "The youth stares at the station sign.".into(),
                "".into(),
                "SOLDIER A: We just have to keep waiting.".into(),
            ],
        };
        let provider = ScriptedProvider::new().with_template(
            CLASSIFY,
            r#"{"lines":[{"index":0,"kind":"action"},{"index":1,"kind":"dialogue","speaker":"Soldier A"}]}"#,
        );
        let lines = classify_lines(&scene, &provider, &ParserConfig::default()).await.unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].kind, LineKind::Heading);
        assert_eq!(lines[1].kind, LineKind::Action);
        assert_eq!(lines[1].speaker, None);
        assert_eq!(lines[2].speaker.as_deref(), Some("Soldier A"));
        assert_eq!(lines[2].text, "SOLDIER A: We just have to keep waiting.");
    }

    #[tokio::test]
    async fn wrong_label_count_is_a_classification_error() {
        let scene = Scene {
            index: 2,
            heading: "SCENE 3".into(),
            heading_row: None,
            body_lines: vec!["a".into(), "b".into()],
        };
        let provider = ScriptedProvider::new().with_template(CLASSIFY, r#"{"lines":[{"index":0,"kind":"action"}]}"#);
        let err = classify_lines(&scene, &provider, &ParserConfig::default()).await.unwrap_err();
        assert!(matches!(err, ParseError::Classification { scene: 2, .. }));
    }

    #[tokio::test]
    async fn persona_fields_and_source() {
        let mut raw = RawScreenplay::new("t", "INT. A\nYOUTH: Hello.\nSOLDIER A: Quiet.");
        raw.bios = Some("Youth: Lost his unit.".into());
        let provider = ScriptedProvider::new()
            .with_template(SEGMENT, "not json")
            .with_template(
                CLASSIFY,
                r#"{"lines":[{"index":0,"kind":"dialogue","speaker":"Youth"},{"index":1,"kind":"dialogue","speaker":"Soldier A"}]}"#,
            )
            .with_template(
                PERSONA,
                r#"{"background":"bg","traits":["wary"],"goals":"g","motivations":"m"}"#,
            );
        let config = ParserConfig {
            max_retries: 0,
            ..Default::default()
        };
        let parsed = parse_screenplay(&raw, &provider, &config).await.unwrap();
        assert_eq!(parsed.characters, vec!["Youth", "Soldier A"]);
        assert_eq!(parsed.personas["Youth"].source, PersonaSource::Merged);
        assert_eq!(parsed.personas["Soldier A"].source, PersonaSource::Synthesized);
        let youth = &parsed.personas["Youth"];
        assert_eq!((youth.background.as_str(), youth.goals.as_str()), ("bg", "g"));
        assert_eq!(youth.traits, vec!["wary"]);
        assert_eq!(parsed.diagnostics.len(), 1);
    }

    #[test]
    fn speech_pattern_splits_speaker() {
        let c = speech_pattern().captures("SOLDIER A: We just have to keep waiting.").unwrap();
        assert_eq!(&c[1], "SOLDIER A");
        let c = speech_pattern().captures("YOUTH (quietly): Is this the end?").unwrap();
        assert_eq!(&c[1], "YOUTH");
        assert!(speech_pattern().captures("The youth stares.").is_none());
    }
}
