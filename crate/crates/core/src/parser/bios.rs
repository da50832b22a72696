use indexmap::IndexMap;
use regex::Regex;
use std::sync::OnceLock;

use super::{canonical_key, canonical_name};

/// Split a bios document into per-character entries.
///
/// An entry starts with `Name: text` or a `## Name` line; following lines
/// until the next entry belong to it. Keys are canonical (case-folded)
/// names; values keep the name as written plus the text.
pub fn parse_bios(text: &str) -> IndexMap<String, (String, String)> {
    static COLON: OnceLock<Regex> = OnceLock::new();
    static HASH: OnceLock<Regex> = OnceLock::new();
    let colon = COLON.get_or_init(|| Regex::new(r"^\s*([\p{L}][\p{L}\p{N} '\-]{0,39}?)\s*[:：]\s*(.*)$").unwrap());
    let hash = HASH.get_or_init(|| Regex::new(r"^\s*#{1,6}\s*(.+?)\s*$").unwrap());

    let mut entries: IndexMap<String, (String, String)> = IndexMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let start = if let Some(c) = hash.captures(line) {
            Some((c[1].to_string(), String::new()))
        } else {
            colon.captures(line).map(|c| (c[1].to_string(), c[2].trim().to_string()))
        };
        if let Some((name, first)) = start {
            let display = canonical_name(&name);
            let key = canonical_key(&display);
            let slot = entries.entry(key.clone()).or_insert_with(|| (display, String::new()));
            append(&mut slot.1, &first);
            current = Some(key);
            continue;
        }
        if let Some(key) = &current {
            if let Some(slot) = entries.get_mut(key) {
                append(&mut slot.1, line.trim());
            }
        }
    }
    entries.retain(|_, (_, bio)| !bio.is_empty());
    entries
}

fn append(buf: &mut String, text: &str) {
    if text.is_empty() {
        return;
    }
    if !buf.is_empty() {
        buf.push(' ');
    }
    buf.push_str(text);
}
