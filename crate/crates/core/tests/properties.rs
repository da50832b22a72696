use std::collections::BTreeSet;
use std::sync::Mutex;

use async_trait::async_trait;
use proptest::prelude::*;
use rehearsal_core::memory::LongTermStore;
use rehearsal_core::parser::{fallback_segment, HeadingPatterns};
use rehearsal_core::provider::heuristic::HeuristicProvider;
use rehearsal_core::provider::templates::TemplateSet;
use rehearsal_core::provider::{ChatRequest, EmbedRequest, ProviderError};
use rehearsal_core::{parse_screenplay, EngineConfig, LlmProvider, Mode, ParserConfig, RawScreenplay, Session};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn nonzero(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn recall_matches_brute_force(
        vectors in prop::collection::vec(nonzero(6), 1..80),
        query in nonzero(6),
        k in 1usize..12,
    ) {
        let mut store = LongTermStore::new("p", 6);
        for (i, v) in vectors.iter().enumerate() {
            store.push_embedded(0, &format!("t{i}"), v.clone()).unwrap();
        }
        let got = store.recall_by_vector(&query, k).unwrap();
        let mut sims: Vec<f64> = vectors.iter().map(|v| cosine(v, &query)).collect();
        sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(got.len(), k.min(vectors.len()));
        for (g, s) in got.iter().zip(&sims) {
            prop_assert!((g.similarity - s).abs() < 1e-9);
        }
        for pair in got.windows(2) {
            let tie = (pair[0].similarity - pair[1].similarity).abs() < 1e-12;
            prop_assert!(!tie || pair[0].trace.order < pair[1].trace.order);
        }
    }

    #[test]
    fn segmentation_keeps_every_line(lines in prop::collection::vec(
        prop_oneof![
            Just("INT. HOUSE - DAY".to_string()),
            Just("ext. road".to_string()),
            Just("  I/E CAR - NIGHT  ".to_string()),
            Just(String::new()),
            "[A-Z]{2,6}: [a-z ]{0,20}",
            "[A-Za-z ]{0,30}",
        ],
        0..40,
    ), crlf in any::<bool>()) {
        let body = lines.join(if crlf { "\r\n" } else { "\n" });
        let scenes = fallback_segment(&RawScreenplay::new("p", body.clone()), &HeadingPatterns::default());
        prop_assert!(!scenes.is_empty());
        let joined = scenes.iter().map(|s| s.body_lines.join("\n")).collect::<Vec<_>>().join("\n");
        let expected = lines.iter().map(|l| l.trim_end()).collect::<Vec<_>>().join("\n");
        prop_assert_eq!(joined, expected);
        for (i, s) in scenes.iter().enumerate() {
            prop_assert_eq!(s.index, i);
        }
    }
}

/// Renders every request against the builtin templates before delegating.
struct Rendering {
    templates: TemplateSet,
    inner: HeuristicProvider,
    seen: Mutex<BTreeSet<String>>,
}

#[async_trait]
impl LlmProvider for Rendering {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.templates.get(&request.template_id)?.render(&request.variables)?;
        self.seen.lock().unwrap().insert(request.template_id.clone());
        self.inner.complete(request).await
    }

    async fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.inner.embed(request).await
    }
}

const PLAY: &str = "INT. BARN - NIGHT
Rain on the roof.
NELL: Did you lock the gate?
OWEN: Twice.
NELL: Then who opened it?

EXT. FIELD - DAWN
OWEN: Tracks. Small ones.
NELL: A fox, nothing more.
";

#[tokio::test]
async fn every_pipeline_request_fills_its_template() {
    let provider = Rendering {
        templates: TemplateSet::builtin(),
        inner: HeuristicProvider::default(),
        seen: Mutex::new(BTreeSet::new()),
    };
    let mut raw = RawScreenplay::new("Barn", PLAY);
    raw.bios = Some("NELL: A farmer.\nOWEN: Her brother.".into());
    raw.outline = Some("Something gets into the barn.".into());
    let parsed = parse_screenplay(&raw, &provider, &ParserConfig::default()).await.unwrap();
    let roles = vec!["Nell".to_string(), "Owen".to_string()];
    for mode in Mode::ALL {
        let mut s = Session::create("t", parsed.clone(), mode, &roles, EngineConfig::default(), 64).unwrap();
        s.run_all(&provider).await.unwrap();
    }
    let seen = provider.seen.into_inner().unwrap();
    let all: BTreeSet<String> = TemplateSet::builtin().ids().map(String::from).collect();
    let unused: Vec<_> = all.difference(&seen).collect();
    assert!(unused.is_empty(), "templates never requested: {unused:?}");
}
