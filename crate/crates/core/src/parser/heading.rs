use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Scene;

/// Scene-heading detectors applied at line start.
#[derive(Debug, Clone)]
pub struct HeadingPatterns {
    patterns: Vec<Regex>,
}

/// INT / EXT / INT./EXT / INT/EXT / I/E followed by `.` or a space.
pub const DEFAULT_HEADING_PATTERN: &str = r"(?i)^\s*(?:INT\./EXT|INT/EXT|EXT\./INT|EXT/INT|I/E|INT|EXT)(?:\.|\s)";

impl Default for HeadingPatterns {
    fn default() -> Self {
        HeadingPatterns {
            patterns: vec![Regex::new(DEFAULT_HEADING_PATTERN).expect("default heading pattern compiles")],
        }
    }
}

impl HeadingPatterns {
    /// Replace the default set. Each pattern is anchored to line start if it
    /// is not already.
    pub fn new<I, S>(patterns: I) -> Result<Self, regex::Error>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let patterns = patterns
            .into_iter()
            .map(|p| {
                let p = p.as_ref();
                let anchored = if p.starts_with('^') || p.starts_with("(?i)^") {
                    p.to_string()
                } else {
                    format!("^(?:{p})")
                };
                Regex::new(&anchored)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HeadingPatterns { patterns })
    }

    /// The default set plus extra patterns, e.g. for non-Latin scripts.
    pub fn with_extra<I, S>(extra: I) -> Result<Self, regex::Error>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::default();
        set.patterns.extend(Self::new(extra)?.patterns);
        Ok(set)
    }

    pub fn is_heading(&self, line: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(line))
    }

    pub fn sources(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.as_str().to_string()).collect()
    }
}

/// Canonical text form: CRLF and lone CR become LF, trailing whitespace is
/// stripped from every line, blank lines are kept.
pub fn normalize_body(body: &str) -> String {
    let unified = body.replace("\r\n", "\n").replace('\r', "\n");
    unified
        .split('\n')
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Lines of a normalized body. Joining the result with `\n` gives the body
/// back exactly.
pub fn body_lines(normalized: &str) -> Vec<String> {
    normalized.split('\n').map(str::to_string).collect()
}

/// A contiguous run of normalized body lines forming one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpan {
    pub start_line: usize,
    pub end_line: usize,
    pub has_heading: bool,
}

/// Deterministic segmentation at heading lines.
///
/// Blank lines before the first heading stay with the first scene; any
/// non-blank text before it becomes its own scene with a synthetic heading.
/// A body with no heading at all is one synthetic scene.
pub fn fallback_spans(lines: &[String], patterns: &HeadingPatterns) -> Vec<SceneSpan> {
    let heading_rows: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| patterns.is_heading(l))
        .map(|(i, _)| i)
        .collect();

    let Some(&first) = heading_rows.first() else {
        return vec![SceneSpan {
            start_line: 0,
            end_line: lines.len(),
            has_heading: false,
        }];
    };

    let mut spans = Vec::with_capacity(heading_rows.len() + 1);
    let preamble_has_text = lines[..first].iter().any(|l| !l.trim().is_empty());
    let mut starts: Vec<(usize, bool)> = Vec::new();
    if preamble_has_text {
        starts.push((0, false));
        starts.extend(heading_rows.iter().map(|&r| (r, true)));
    } else {
        starts.push((0, true));
        starts.extend(heading_rows.iter().skip(1).map(|&r| (r, true)));
    }
    for (i, &(start, has_heading)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map(|s| s.0).unwrap_or(lines.len());
        spans.push(SceneSpan {
            start_line: start,
            end_line: end,
            has_heading,
        });
    }
    spans
}

/// Check that spans partition `0..line_count` in order with no gaps or
/// overlaps, and that every claimed heading is a non-blank line.
pub fn validate_spans(spans: &[SceneSpan], lines: &[String]) -> Result<(), String> {
    if spans.is_empty() {
        return Err("no scenes returned".into());
    }
    let mut expected_start = 0usize;
    for (i, span) in spans.iter().enumerate() {
        if span.start_line != expected_start {
            return Err(format!(
                "scene {i} starts at line {} but line {expected_start} is not covered exactly once",
                span.start_line
            ));
        }
        if span.end_line <= span.start_line {
            return Err(format!("scene {i} is empty"));
        }
        if span.end_line > lines.len() {
            return Err(format!("scene {i} runs past the end of the text"));
        }
        if span.has_heading && first_non_blank(&lines[span.start_line..span.end_line]).is_none() {
            return Err(format!("scene {i} claims a heading but is blank"));
        }
        expected_start = span.end_line;
    }
    if expected_start != lines.len() {
        return Err(format!(
            "lines {expected_start}..{} are not covered by any scene",
            lines.len()
        ));
    }
    Ok(())
}

pub(crate) fn first_non_blank(lines: &[String]) -> Option<usize> {
    lines.iter().position(|l| !l.trim().is_empty())
}

pub fn spans_to_scenes(spans: &[SceneSpan], lines: &[String]) -> Vec<Scene> {
    spans
        .iter()
        .enumerate()
        .map(|(index, span)| {
            let body_lines = lines[span.start_line..span.end_line].to_vec();
            let heading_row = if span.has_heading { first_non_blank(&body_lines) } else { None };
            let heading = match heading_row {
                Some(row) => body_lines[row].trim().to_string(),
                None => format!("SCENE {}", index + 1),
            };
            Scene {
                index,
                heading,
                heading_row,
                body_lines,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(text: &str) -> Vec<String> {
        body_lines(&normalize_body(text))
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_body("a  \r\nb\t\r\n\r\nc\rd "), "a\nb\n\nc\nd");
    }

    #[test]
    fn default_patterns() {
        let p = HeadingPatterns::default();
        for yes in [
            "INT. Coffee Shop - DAY",
            "EXT. STREET - NIGHT",
            "ext. beach - night",
            "INT./EXT. CAR - MOVING",
            "I/E SUBWAY CAR",
            "INT BUNKER",
            "  INT. HALL",
        ] {
            assert!(p.is_heading(yes), "{yes}");
        }
        for no in [
            "He walks into the INT. of the cave.",
            "INTERIOR monologue",
            "Exterior shots follow",
            "EXTRA: I'm here.",
            "",
        ] {
            assert!(!p.is_heading(no), "{no}");
        }
    }

    #[test]
    fn extra_patterns_for_other_scripts() {
        let p = HeadingPatterns::with_extra([r"第\s*\d+\s*场"]).unwrap();
        assert!(p.is_heading("第 3 场 车站 夜"));
        assert!(p.is_heading("INT. HALL"));
        assert!(!p.is_heading("他说第3场"));
    }

    #[test]
    fn two_headings_two_scenes() {
        let l = lines("INT. Coffee Shop - DAY\nA man sits.\n\nEXT. STREET - NIGHT\nRain.");
        let spans = fallback_spans(&l, &HeadingPatterns::default());
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[1].start_line, 3);
        validate_spans(&spans, &l).unwrap();
    }

    #[test]
    fn no_heading_single_synthetic_scene() {
        let l = lines("Rain falls.\nNobody speaks.");
        let scenes = spans_to_scenes(&fallback_spans(&l, &HeadingPatterns::default()), &l);
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].heading, "SCENE 1");
        assert_eq!(scenes[0].heading_row, None);
    }

    #[test]
    fn preamble_handling() {
        let blank = lines("\n\nINT. A\nx");
        let spans = fallback_spans(&blank, &HeadingPatterns::default());
        assert_eq!(spans.len(), 1);
        assert_eq!(spans_to_scenes(&spans, &blank)[0].heading, "INT. A");

        let titled = lines("THE STATION\n\nINT. A\nx");
        let spans = fallback_spans(&titled, &HeadingPatterns::default());
        assert_eq!(spans.len(), 2);
        assert!(!spans[0].has_heading);
    }

    #[test]
    fn span_validation_rejects_gaps_and_overlaps() {
        let l = lines("a\nb\nc\nd");
        let ok = [
            SceneSpan { start_line: 0, end_line: 2, has_heading: false },
            SceneSpan { start_line: 2, end_line: 4, has_heading: false },
        ];
        assert!(validate_spans(&ok, &l).is_ok());
        let gap = [
            SceneSpan { start_line: 0, end_line: 1, has_heading: false },
            SceneSpan { start_line: 2, end_line: 4, has_heading: false },
        ];
        assert!(validate_spans(&gap, &l).is_err());
        let overlap = [
            SceneSpan { start_line: 0, end_line: 3, has_heading: false },
            SceneSpan { start_line: 2, end_line: 4, has_heading: false },
        ];
        assert!(validate_spans(&overlap, &l).is_err());
        let short = [SceneSpan { start_line: 0, end_line: 3, has_heading: false }];
        assert!(validate_spans(&short, &l).is_err());
    }
}
