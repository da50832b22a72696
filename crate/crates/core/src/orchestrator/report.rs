use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{FeedbackItem, Mode, Session};
use crate::agent::{Dimension, Timing};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub instant: usize,
    pub posthoc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub title: String,
    pub mode: Mode,
    pub activated: Vec<String>,
    pub scene_count: usize,
    pub line_count: usize,
    pub inner_thought_count: usize,
    pub memory_trace_count: usize,
    pub instant_count: usize,
    pub posthoc_count: usize,
    pub candidates_assessed: usize,
    pub acceptance_rate: f64,
    pub per_dimension: BTreeMap<Dimension, usize>,
    pub per_source: IndexMap<String, SourceCounts>,
    pub feedback_log: Vec<FeedbackItem>,
}

impl SessionReport {
    pub fn from_session(session: &Session) -> Self {
        let mut per_dimension: BTreeMap<Dimension, usize> = Dimension::ALL.iter().map(|d| (*d, 0)).collect();
        let mut per_source: IndexMap<String, SourceCounts> = IndexMap::new();
        let (mut instant, mut posthoc) = (0, 0);
        for item in &session.feedback_log {
            let counts = per_source.entry(item.candidate.source.clone()).or_default();
            match item.candidate.timing {
                Timing::Instant => {
                    instant += 1;
                    counts.instant += 1;
                }
                Timing::Posthoc => {
                    posthoc += 1;
                    counts.posthoc += 1;
                }
            }
            for d in &item.candidate.dimensions {
                *per_dimension.entry(*d).or_default() += 1;
            }
        }
        let assessed = session.assessments.len();
        SessionReport {
            session_id: session.id.clone(),
            title: session.screenplay.title.clone(),
            mode: session.mode,
            activated: session.activated.clone(),
            scene_count: session.screenplay.scenes.len(),
            line_count: session.screenplay.lines.len(),
            inner_thought_count: session.thoughts.len(),
            memory_trace_count: session.agents.values().map(|a| a.long_term.len()).sum(),
            instant_count: instant,
            posthoc_count: posthoc,
            candidates_assessed: assessed,
            acceptance_rate: if assessed == 0 {
                0.0
            } else {
                session.feedback_log.len() as f64 / assessed as f64
            },
            per_dimension,
            per_source,
            feedback_log: session.feedback_log.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One column per mode, one row per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<Mode>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<f64>,
}

impl ComparisonTable {
    pub fn from_reports(reports: &[SessionReport]) -> Self {
        let mut rows = Vec::new();
        let mut row = |metric: &str, f: &dyn Fn(&SessionReport) -> f64| {
            rows.push(ComparisonRow {
                metric: metric.to_string(),
                values: reports.iter().map(f).collect(),
            });
        };
        row("instant_count", &|r| r.instant_count as f64);
        row("posthoc_count", &|r| r.posthoc_count as f64);
        for d in Dimension::ALL {
            row(d.as_str(), &move |r| r.per_dimension.get(&d).copied().unwrap_or(0) as f64);
        }
        row("candidates_assessed", &|r| r.candidates_assessed as f64);
        row("acceptance_rate", &|r| r.acceptance_rate);
        ComparisonTable {
            columns: reports.iter().map(|r| r.mode).collect(),
            rows,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| metric |");
        for c in &self.columns {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.columns.len()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.metric));
            for v in &row.values {
                if v.fract() == 0.0 {
                    out.push_str(&format!(" {v:.0} |"));
                } else {
                    out.push_str(&format!(" {v:.3} |"));
                }
            }
            out.push('\n');
        }
        out
    }
}
