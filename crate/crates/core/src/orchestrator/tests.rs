use std::sync::Arc;

use async_trait::async_trait;
use chrono::TimeZone;

use super::*;
use crate::agent::style::passes_first_person_lint;
use crate::parser::{parse_screenplay, ParserConfig, RawScreenplay};
use crate::provider::audit::AuditingProvider;
use crate::provider::heuristic::HeuristicProvider;
use crate::provider::templates::{INSTANT_ACTOR, REVIEW};
use crate::provider::{ChatRequest, EmbedRequest};

const SCRIPT: &str = "INT. RAILWAY STATION - NIGHT
A deserted platform. Youth sits alone on a bench.
YOUTH: Are we standing at an end or a beginning?
SOLDIER A: Keep your voice down.
SOLDIER B: Let him talk. Nobody is listening.
Soldier A turns away from the others.

EXT. TRACKS - DAWN
Youth walks along the rails.
YOUTH: I can still hear the guns.
SOLDIER B: That is thunder, nothing more.
";

async fn parsed() -> ParsedScreenplay {
    let raw = RawScreenplay::new("Platform", SCRIPT);
    parse_screenplay(&raw, &HeuristicProvider::default(), &ParserConfig::default()).await.unwrap()
}

fn all() -> Vec<String> {
    vec!["Youth".into(), "Soldier A".into(), "Soldier B".into()]
}

async fn session(mode: Mode, activated: &[String]) -> Session {
    Session::create("s1", parsed().await, mode, activated, EngineConfig::default(), 64).unwrap()
}

#[tokio::test]
async fn creation_rules() {
    let s = session(Mode::EvalPE, &all()).await;
    assert_eq!(s.agents.len(), 3);
    assert_eq!(s.activated, all());
    assert!(s.agents.values().all(|a| a.short_term.is_empty() && a.long_term.is_empty()));

    let s = session(Mode::EvalNoPE, &all()).await;
    assert!(s.agents.is_empty());

    let err = Session::create("x", parsed().await, Mode::EvalPE, &["Conductor".into()], EngineConfig::default(), 64);
    assert!(matches!(err, Err(SessionError::UnknownCharacter(_))));
    let err = Session::create("x", parsed().await, Mode::ExpPE, &[], EngineConfig::default(), 64);
    assert!(matches!(err, Err(SessionError::InvalidModeConfig(_))));
    assert!(Session::create("x", parsed().await, Mode::RevNoPE, &[], EngineConfig::default(), 64).is_ok());
}

#[tokio::test]
async fn cursor_protocol() {
    let p = HeuristicProvider::default();
    let mut s = session(Mode::EvalNoPE, &all()).await;
    assert!(matches!(s.finish_scene(&p).await, Err(SessionError::SceneIncomplete { scene: 0, remaining: 6 })));
    for n in 1..=6 {
        let r = s.step(&p).await.unwrap();
        assert_eq!(s.public_context(), &s.screenplay.lines[..n]);
        assert!(r.inner_thoughts.is_empty() && r.accepted_instant.is_empty());
        assert_eq!(r.scene_complete, n == 6);
    }
    assert!(matches!(s.step(&p).await, Err(SessionError::SceneFinishRequired { scene: 0 })));
    s.finish_scene(&p).await.unwrap();
    while s.scene_ready_to_finish().is_none() {
        s.step(&p).await.unwrap();
    }
    assert!(matches!(s.step(&p).await, Err(SessionError::SceneFinishRequired { scene: 1 })));
    s.finish_scene(&p).await.unwrap();
    assert!(s.is_finished());
    assert!(matches!(s.step(&p).await, Err(SessionError::EndOfScreenplay)));
    assert!(matches!(s.finish_scene(&p).await, Err(SessionError::EndOfScreenplay)));
}

#[tokio::test]
async fn full_run_writes_one_trace_per_enacted_scene() {
    let p = HeuristicProvider::default();
    let mut s = session(Mode::EvalPE, &all()).await;
    let report = s.run_all(&p).await.unwrap();
    assert!(report.inner_thought_count > 0);
    for agent in s.agents.values() {
        let enacted: std::collections::BTreeSet<usize> =
            s.thoughts.iter().filter(|t| t.agent == agent.id).map(|t| t.scene_index).collect();
        let traced: Vec<usize> = agent.long_term.traces().iter().map(|t| t.scene_index).collect();
        assert_eq!(traced, enacted.into_iter().collect::<Vec<_>>(), "{}", agent.id);
        assert!(agent.short_term.is_empty());
    }
    for item in &s.feedback_log {
        assert!(item.verdict.accepted);
        if let Some(line) = item.candidate.anchor.line_index {
            assert!(s.screenplay.line(item.candidate.anchor.scene_index, line).is_some());
        }
    }
    let again = {
        let mut s2 = session(Mode::EvalPE, &all()).await;
        s2.run_all(&p).await.unwrap();
        s2
    };
    assert_eq!(s.to_json(), again.to_json());
}

#[tokio::test]
async fn nope_modes_have_no_experience() {
    let p = HeuristicProvider::default();
    for mode in [Mode::EvalNoPE, Mode::RevNoPE] {
        let mut s = session(mode, &all()).await;
        let report = s.run_all(&p).await.unwrap();
        assert_eq!(report.inner_thought_count, 0);
        assert_eq!(report.instant_count, 0);
        assert_eq!(report.memory_trace_count, 0);
    }
}

#[tokio::test]
async fn reviewer_runs_once_per_scene() {
    let audit = Arc::new(AuditingProvider::new(Arc::new(HeuristicProvider::default())));
    let mut s = session(Mode::RevNoPE, &[]).await;
    s.run_all(&audit).await.unwrap();
    let passes = audit.records().iter().filter(|r| r.template_id == REVIEW).count();
    assert_eq!(passes, s.screenplay.scenes.len());
    assert!(s.feedback_log.iter().all(|i| i.candidate.source == REVIEWER));
}

#[tokio::test]
async fn character_mode_speaks_in_first_person() {
    let p = HeuristicProvider::default();
    let mut s = session(Mode::ExpPE, &all()).await;
    s.run_all(&p).await.unwrap();
    assert!(!s.feedback_log.is_empty());
    for item in &s.feedback_log {
        assert_eq!(item.candidate.perspective, Perspective::Character);
        assert!(passes_first_person_lint(&item.candidate.question, &item.candidate.source), "{}", item.candidate.question);
    }
}

struct FailOn(&'static str, HeuristicProvider);

#[async_trait]
impl LlmProvider for FailOn {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if request.template_id == self.0 {
            return Err(ProviderError::Transport("down".into()));
        }
        self.1.complete(request).await
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.1.embed(request).await
    }
}

#[tokio::test]
async fn failed_step_leaves_session_untouched() {
    let failing = FailOn(INSTANT_ACTOR, HeuristicProvider::default());
    let mut s = session(Mode::EvalPE, &all()).await;
    s.step(&failing).await.unwrap();
    let before = s.clone();
    let err = s.step(&failing).await.unwrap_err();
    assert_eq!(err.code(), "provider_error");
    assert_eq!(s, before);
    let r = s.step(&HeuristicProvider::default()).await.unwrap();
    assert_eq!(r.line.anchor(), (0, 1));
    assert_eq!(r.inner_thoughts.len(), 1);
}

#[tokio::test]
async fn marks_are_idempotent_and_carry_metadata() {
    let p = HeuristicProvider::default();
    let mut s = session(Mode::EvalPE, &all()).await;
    s.run_all(&p).await.unwrap();
    let clock = FixedClock(Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap());
    let thought = s.thoughts[0].clone();
    let mark = s.mark_value(&thought.id, &clock).unwrap();
    assert_eq!(mark.metadata.feedback_type, FeedbackType::InnerThought);
    assert_eq!(mark.metadata.character, thought.agent);
    assert_eq!(mark.metadata.scene_number, thought.scene_index + 1);
    assert_eq!(mark.created_at, "2026-01-02T03:04:05.000Z");
    assert_eq!(s.mark_value(&thought.id, &SystemClock).unwrap(), mark);
    assert_eq!(s.marks.len(), 1);

    let item = s.feedback_log[0].clone();
    let m = s.mark_value(&item.id, &clock).unwrap();
    assert!(s.feedback_log[0].marked);
    assert_eq!(m.metadata.scene_content, s.screenplay.scene_text(item.candidate.anchor.scene_index));
    assert!(matches!(s.mark_value("nope", &clock), Err(SessionError::UnknownTarget(_))));
}

#[test]
fn mode_names() {
    for m in Mode::ALL {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
    }
    assert_eq!("Eval-PE".parse::<Mode>().unwrap(), Mode::EvalPE);
    assert_eq!(serde_json::from_str::<Mode>("\"Rev-NoPE\"").unwrap(), Mode::RevNoPE);
    assert!("PE".parse::<Mode>().is_err());
}

#[test]
fn comparison_table_has_one_column_per_mode() {
    let report = |mode| SessionReport {
        session_id: "s".into(),
        title: "t".into(),
        mode,
        activated: vec![],
        scene_count: 1,
        line_count: 1,
        inner_thought_count: 0,
        memory_trace_count: 0,
        instant_count: 2,
        posthoc_count: 1,
        candidates_assessed: 4,
        acceptance_rate: 0.75,
        per_dimension: Default::default(),
        per_source: Default::default(),
        feedback_log: vec![],
    };
    let table = ComparisonTable::from_reports(&Mode::ALL.map(report));
    let md = table.to_markdown();
    assert!(md.starts_with("| metric | EvalPE | ExpPE | EvalNoPE | RevNoPE |"));
    assert!(md.contains("| acceptance_rate | 0.750 | 0.750 | 0.750 | 0.750 |"));
}
