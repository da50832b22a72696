//! Per-agent dual memory.
//!
//! Long-term memory is an append-only list of embedded event descriptions,
//! searched by exact cosine scan. Short-term memory holds the public text
//! and the agent's own thoughts for the scene in progress and is cleared at
//! every scene transition.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::parser::PersonaProfile;
use crate::provider::templates::SUMMARY;
use crate::provider::{
    complete_structured, ChatRequest, EmbedRequest, LlmProvider, ProviderError, StructuredOutput,
    GENERATION_TEMPERATURE,
};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("embedding dimension mismatch: store uses {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("trace belongs to {actual}, store belongs to {expected}")]
    WrongAgent { expected: String, actual: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("corrupt trace file at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Scale to unit length. Zero or non-finite vectors are rejected.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, ProviderError> {
    if v.is_empty() {
        return Err(ProviderError::DegenerateEmbedding);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(ProviderError::DegenerateEmbedding);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embed and L2-normalize. Every vector must have `dimension` entries.
pub async fn embed<P: LlmProvider + ?Sized>(
    texts: &[String],
    provider: &P,
    dimension: usize,
    on_behalf_of: Option<&str>,
) -> Result<Vec<Vec<f64>>, MemoryError> {
    if texts.is_empty() || texts.iter().any(|t| t.trim().is_empty()) {
        return Err(MemoryError::EmptyText);
    }
    let request = EmbedRequest::new(texts.to_vec()).on_behalf_of(on_behalf_of);
    let vectors = provider.embed(&request).await?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::ArityMismatch {
            expected: texts.len(),
            actual: vectors.len(),
        }
        .into());
    }
    vectors
        .into_iter()
        .map(|v| {
            if v.len() != dimension {
                return Err(MemoryError::DimensionMismatch {
                    expected: dimension,
                    actual: v.len(),
                });
            }
            Ok(normalize(v)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub id: String,
    pub agent: String,
    pub scene_index: usize,
    pub description: String,
    pub embedding: Vec<f64>,
    pub order: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalledTrace {
    pub similarity: f64,
    pub trace: MemoryTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermStore {
    pub agent: String,
    pub dimension: usize,
    traces: Vec<MemoryTrace>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    agent: String,
    dimension: usize,
}

impl LongTermStore {
    pub fn new(agent: &str, dimension: usize) -> Self {
        LongTermStore {
            agent: agent.to_string(),
            dimension,
            traces: Vec::new(),
        }
    }

    pub fn traces(&self) -> &[MemoryTrace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    fn next_order(&self) -> u64 {
        self.traces.last().map(|t| t.order + 1).unwrap_or(0)
    }

    /// Append a description whose embedding is already known.
    pub fn push_embedded(
        &mut self,
        scene_index: usize,
        description: &str,
        embedding: Vec<f64>,
    ) -> Result<&MemoryTrace, MemoryError> {
        if description.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if embedding.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                actual: embedding.len(),
            });
        }
        let order = self.next_order();
        self.traces.push(MemoryTrace {
            id: format!("{}#{order}", slug(&self.agent)),
            agent: self.agent.clone(),
            scene_index,
            description: description.to_string(),
            embedding: normalize(embedding)?,
            order,
        });
        Ok(self.traces.last().expect("just pushed"))
    }

    pub async fn append_trace<P: LlmProvider + ?Sized>(
        &mut self,
        scene_index: usize,
        description: &str,
        provider: &P,
    ) -> Result<MemoryTrace, MemoryError> {
        if description.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let mut vectors = embed(&[description.to_string()], provider, self.dimension, Some(&self.agent)).await?;
        let trace = self.push_embedded(scene_index, description, vectors.remove(0))?;
        Ok(trace.clone())
    }

    /// Exact top-k by cosine similarity; ties go to the older trace.
    pub fn recall_by_vector(&self, query: &[f64], k: usize) -> Result<Vec<RecalledTrace>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if query.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let query = normalize(query.to_vec())?;
        let mut scored: Vec<(f64, usize)> = self
            .traces
            .iter()
            .enumerate()
            .map(|(i, t)| (dot(&query, &t.embedding), i))
            .collect();
        let rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.traces[a.1].order.cmp(&self.traces[b.1].order))
        };
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take, rank);
            scored.truncate(take);
        }
        scored.sort_by(rank);
        Ok(scored
            .into_iter()
            .map(|(similarity, i)| RecalledTrace {
                similarity,
                trace: self.traces[i].clone(),
            })
            .collect())
    }

    pub async fn recall<P: LlmProvider + ?Sized>(
        &self,
        query: &str,
        k: usize,
        provider: &P,
    ) -> Result<Vec<RecalledTrace>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if self.traces.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = embed(&[query.to_string()], provider, self.dimension, Some(&self.agent)).await?;
        self.recall_by_vector(&vectors[0], k)
    }

    /// Header line followed by one trace per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&StoreHeader {
            agent: self.agent.clone(),
            dimension: self.dimension,
        })
        .expect("header serializes");
        out.push('\n');
        for t in &self.traces {
            out.push_str(&trace_line(t));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MemoryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(MemoryError::Corrupt {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: StoreHeader = serde_json::from_str(header).map_err(|e| MemoryError::Corrupt {
            line: 1,
            message: e.to_string(),
        })?;
        let mut store = LongTermStore::new(&header.agent, header.dimension);
        for (i, line) in lines {
            let trace: MemoryTrace = serde_json::from_str(line).map_err(|e| MemoryError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            if trace.agent != store.agent {
                return Err(MemoryError::WrongAgent {
                    expected: store.agent.clone(),
                    actual: trace.agent,
                });
            }
            if trace.embedding.len() != store.dimension {
                return Err(MemoryError::DimensionMismatch {
                    expected: store.dimension,
                    actual: trace.embedding.len(),
                });
            }
            if trace.order != store.next_order() {
                return Err(MemoryError::Corrupt {
                    line: i + 1,
                    message: format!("order {} out of sequence", trace.order),
                });
            }
            store.traces.push(trace);
        }
        Ok(store)
    }
}

/// One JSON-lines record for a trace, newline-terminated.
pub fn trace_line(trace: &MemoryTrace) -> String {
    let mut line = serde_json::to_string(trace).expect("trace serializes");
    line.push('\n');
    line
}

pub(crate) fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.trim_matches('-').to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShortTermMemory {
    pub scene_index: usize,
    pub current_scene_text: Vec<String>,
    pub current_inner_thoughts: Vec<String>,
}

impl ShortTermMemory {
    pub fn observe(&mut self, scene_index: usize, public_line: &str) {
        if scene_index != self.scene_index {
            self.enter_scene(scene_index);
        }
        self.current_scene_text.push(public_line.to_string());
    }

    pub fn enter_scene(&mut self, scene_index: usize) {
        self.scene_index = scene_index;
        self.current_scene_text.clear();
        self.current_inner_thoughts.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.current_scene_text.is_empty() && self.current_inner_thoughts.is_empty()
    }
}

/// The assembled prompt context for one enactment or generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub persona: String,
    pub recalled: Vec<String>,
    pub scene_text: Vec<String>,
    pub inner_thoughts: Vec<String>,
    /// Entries dropped to fit the budget.
    pub truncated: usize,
}

impl ContextWindow {
    fn size(&self) -> usize {
        let count = |v: &[String]| v.iter().map(|s| s.chars().count()).sum::<usize>();
        self.persona.chars().count() + count(&self.recalled) + count(&self.scene_text) + count(&self.inner_thoughts)
    }

    pub fn render(&self) -> String {
        let mut out = format!("## Character\n{}\n", self.persona);
        if !self.recalled.is_empty() {
            out.push_str("\n## Memories from earlier scenes\n");
            for r in &self.recalled {
                out.push_str(&format!("- {r}\n"));
            }
        }
        if !self.scene_text.is_empty() {
            out.push_str("\n## This scene so far\n");
            for l in &self.scene_text {
                out.push_str(l);
                out.push('\n');
            }
        }
        if !self.inner_thoughts.is_empty() {
            out.push_str("\n## Inner thoughts in this scene\n");
            for t in &self.inner_thoughts {
                out.push_str(&format!("- {t}\n"));
            }
        }
        out
    }
}

/// Assemble persona, recalled memories, scene text and thoughts, in that
/// order, within `budget` characters.
///
/// Over budget, the oldest scene lines go first, then the least similar
/// recalled memories, then the oldest thoughts. The persona is never cut.
pub fn synthesize_context(
    short: &ShortTermMemory,
    recalled: &[RecalledTrace],
    persona: &PersonaProfile,
    budget: usize,
) -> ContextWindow {
    let mut window = ContextWindow {
        persona: persona.render(),
        recalled: recalled.iter().map(|r| r.trace.description.clone()).collect(),
        scene_text: short.current_scene_text.clone(),
        inner_thoughts: short.current_inner_thoughts.clone(),
        truncated: 0,
    };
    while window.size() > budget {
        if !window.scene_text.is_empty() {
            window.scene_text.remove(0);
        } else if !window.recalled.is_empty() {
            window.recalled.pop();
        } else if !window.inner_thoughts.is_empty() {
            window.inner_thoughts.remove(0);
        } else {
            break;
        }
        window.truncated += 1;
    }
    window
}

#[derive(Debug, Deserialize)]
struct SummaryReply {
    description: String,
}

impl StructuredOutput for SummaryReply {
    const SCHEMA_ID: &'static str = "scene_summary";

    fn validate(&self) -> Result<(), String> {
        if self.description.trim().is_empty() {
            return Err("description is empty".into());
        }
        Ok(())
    }
}

/// Close a scene for one agent: write a first-person event description to
/// long-term memory and clear short-term memory. An agent with no thoughts
/// in the scene accrues no trace.
pub async fn summarize_scene<P: LlmProvider + ?Sized>(
    persona: &PersonaProfile,
    long_term: &mut LongTermStore,
    short_term: &mut ShortTermMemory,
    scene_index: usize,
    provider: &P,
    config: &EngineConfig,
) -> Result<Option<MemoryTrace>, MemoryError> {
    if short_term.current_inner_thoughts.is_empty() {
        short_term.enter_scene(scene_index + 1);
        return Ok(None);
    }
    let request = ChatRequest::structured(SUMMARY, SummaryReply::SCHEMA_ID, GENERATION_TEMPERATURE)
        .var("character", persona.character.clone())
        .var("persona", persona.render())
        .var("scene_text", short_term.current_scene_text.join("\n"))
        .var(
            "inner_thoughts",
            short_term
                .current_inner_thoughts
                .iter()
                .map(|t| format!("- {t}"))
                .collect::<Vec<_>>()
                .join("\n"),
        )
        .on_behalf_of(&persona.character);
    let reply: SummaryReply = complete_structured(provider, &request, config.max_retries).await?;
    let trace = long_term
        .append_trace(scene_index, reply.description.trim(), provider)
        .await?;
    short_term.enter_scene(scene_index + 1);
    Ok(Some(trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::PersonaSource;
    use crate::provider::scripted::ScriptedProvider;

    fn persona() -> PersonaProfile {
        PersonaProfile {
            character: "Youth".into(),
            background: "A young conscript.".into(),
            traits: vec!["restless".into()],
            goals: "Get home.".into(),
            motivations: "Fear of being forgotten.".into(),
            source: PersonaSource::Synthesized,
        }
    }

    #[tokio::test]
    async fn embed_normalizes_and_checks_dimension() {
        let p = ScriptedProvider::new()
            .with_embedding("a", vec![3.0, 4.0])
            .with_embedding("b", vec![0.0, 2.0])
            .with_embedding("c", vec![1.0, 2.0, 3.0]);
        let v = embed(&["a".into(), "b".into()], &p, 2, None).await.unwrap();
        assert_eq!(v.len(), 2);
        for x in &v {
            assert!((dot(x, x).sqrt() - 1.0).abs() < 1e-6);
        }
        let err = embed(&["c".into()], &p, 2, None).await.unwrap_err();
        assert!(matches!(err, MemoryError::DimensionMismatch { expected: 2, actual: 3 }));
        assert!(matches!(embed(&[], &p, 2, None).await, Err(MemoryError::EmptyText)));
        assert!(matches!(embed(&[" ".into()], &p, 2, None).await, Err(MemoryError::EmptyText)));
    }

    #[test]
    fn orders_and_recall_contract() {
        let mut store = LongTermStore::new("Youth", 2);
        assert!(store.recall_by_vector(&[1.0, 0.0], 3).unwrap().is_empty());
        assert_eq!(store.push_embedded(0, "first", vec![1.0, 0.0]).unwrap().order, 0);
        assert_eq!(store.push_embedded(1, "second", vec![1.0, 0.0]).unwrap().order, 1);
        store.push_embedded(1, "third", vec![0.0, 1.0]).unwrap();
        let top = store.recall_by_vector(&[1.0, 0.1], 10).unwrap();
        assert_eq!(top.len(), 3);
        // Equal similarity: older first.
        assert_eq!(top[0].trace.description, "first");
        assert_eq!(top[1].trace.description, "second");
        assert_eq!(store.recall_by_vector(&[1.0, 0.0], 1).unwrap().len(), 1);
        assert!(matches!(store.recall_by_vector(&[1.0, 0.0], 0), Err(MemoryError::ZeroK)));
    }

    #[tokio::test]
    async fn append_after_recall_grows_by_one() {
        let p = ScriptedProvider::new()
            .with_embedding("walked to the station", vec![1.0, 1.0])
            .with_embedding("where am I", vec![1.0, 0.0]);
        let mut store = LongTermStore::new("Youth", 2);
        store.append_trace(0, "walked to the station", &p).await.unwrap();
        let hits = store.recall("where am I", 5, &p).await.unwrap();
        assert_eq!(hits.len(), 1);
        let before = store.len();
        store.push_embedded(1, "another", vec![0.5, 0.5]).unwrap();
        assert_eq!(store.len(), before + 1);
    }

    #[test]
    fn jsonl_round_trip_and_isolation() {
        let mut store = LongTermStore::new("Youth", 2);
        store.push_embedded(0, "one", vec![0.3, 0.4]).unwrap();
        store.push_embedded(1, "two", vec![0.1, 0.0]).unwrap();
        let text = store.to_jsonl();
        assert!(text.lines().next().unwrap().contains("\"dimension\":2"));
        assert_eq!(LongTermStore::from_jsonl(&text).unwrap(), store);

        let foreign = text.replace("\"agent\":\"Youth\",\"scene_index\":1", "\"agent\":\"Soldier A\",\"scene_index\":1");
        assert!(matches!(LongTermStore::from_jsonl(&foreign), Err(MemoryError::WrongAgent { .. })));
    }

    #[test]
    fn context_assembly_order_and_truncation() {
        let short = ShortTermMemory::default();
        let window = synthesize_context(&short, &[], &persona(), 8000);
        assert!(window.recalled.is_empty() && window.scene_text.is_empty());
        assert!(window.render().starts_with("## Character\nName: Youth"));
        assert_eq!(window, synthesize_context(&short, &[], &persona(), 8000));

        let short = ShortTermMemory {
            scene_index: 0,
            current_scene_text: (0..10).map(|i| format!("line {i} {}", "x".repeat(40))).collect(),
            current_inner_thoughts: vec!["I am cold.".into()],
        };
        let mut store = LongTermStore::new("Youth", 2);
        store.push_embedded(0, "I saw the train leave.", vec![1.0, 0.0]).unwrap();
        let recalled = store.recall_by_vector(&[1.0, 0.0], 5).unwrap();
        let persona_len = persona().render().chars().count();
        let budget = persona_len + 200;
        let window = synthesize_context(&short, &recalled, &persona(), budget);
        assert!(window.size() <= budget);
        assert_eq!(window.recalled.len(), 1);
        assert_eq!(window.inner_thoughts.len(), 1);
        // Survivors are the newest scene lines.
        assert_eq!(window.scene_text.last(), short.current_scene_text.last());
        assert!(window.scene_text.len() < 10);

        let tiny = synthesize_context(&short, &recalled, &persona(), 5);
        assert_eq!(tiny.persona, persona().render());
        assert!(tiny.scene_text.is_empty() && tiny.recalled.is_empty() && tiny.inner_thoughts.is_empty());
    }

    #[tokio::test]
    async fn summary_writes_one_trace_and_clears() {
        let p = ScriptedProvider::new()
            .with_template(SUMMARY, r#"{"description":"I waited at the platform and nobody came."}"#)
            .with_embedding("I waited at the platform and nobody came.", vec![0.2, 0.9]);
        let mut store = LongTermStore::new("Youth", 2);
        let mut short = ShortTermMemory {
            scene_index: 0,
            current_scene_text: vec!["SOLDIER A: We wait.".into()],
            current_inner_thoughts: vec!["I am tired of waiting.".into()],
        };
        let trace = summarize_scene(&persona(), &mut store, &mut short, 0, &p, &EngineConfig::default())
            .await
            .unwrap()
            .unwrap();
        assert_eq!(trace.description, "I waited at the platform and nobody came.");
        assert_eq!(store.len(), 1);
        assert!(short.current_inner_thoughts.is_empty());
        assert!(short.is_empty());

        let mut idle = ShortTermMemory {
            scene_index: 1,
            current_scene_text: vec!["Rain.".into()],
            current_inner_thoughts: vec![],
        };
        let none = summarize_scene(&persona(), &mut store, &mut idle, 1, &p, &EngineConfig::default())
            .await
            .unwrap();
        assert!(none.is_none());
        assert_eq!(store.len(), 1);
    }
}
