//! Best-effort reader for the numbered, tab-separated Persona-Chat text
//! layout:
//!
//! ```text
//! 1 your persona: i like to remodel homes.
//! 2 partner's persona: i have a dog.
//! 3 hi , how are you ?\ti am good , you ?\t\tcand 1|cand 2|...|i am good , you ?
//! ```
//!
//! Numbering restarts at 1 for each dialogue. The first column of a dialogue
//! line is the partner (speaker A), the second the self speaker (B) whose
//! reply is ranked against the `|`-separated candidates.

use super::record::{DialogueRecord, Speaker, Turn};
use crate::error::{Error, Result};

const SILENCE: &str = "__SILENCE__";

#[derive(Debug, Default)]
pub struct ParlaiParse {
    pub records: Vec<DialogueRecord>,
    /// Line number (1-based) where each record starts.
    pub first_lines: Vec<usize>,
    /// Lines that could not be interpreted, with the reason.
    pub skipped: Vec<(usize, String)>,
}

fn finish(parse: &mut ParlaiParse, current: &mut Option<(usize, DialogueRecord)>) {
    if let Some((line, record)) = current.take() {
        if record.turns.is_empty() {
            parse.skipped.push((line, "dialogue without turns".into()));
        } else {
            parse.records.push(record);
            parse.first_lines.push(line);
        }
    }
}

fn push_turn(record: &mut DialogueRecord, speaker: Speaker, text: &str, cands: Option<(Vec<String>, usize)>) {
    record.turns.push(Turn {
        speaker,
        text: text.to_string(),
    });
    match cands {
        Some((set, answer)) => {
            record.candidates.push(Some(set));
            record.answer_index.push(Some(answer));
        }
        None => {
            record.candidates.push(None);
            record.answer_index.push(None);
        }
    }
}

pub fn parse_parlai(text: &str) -> ParlaiParse {
    let mut parse = ParlaiParse::default();
    let mut current: Option<(usize, DialogueRecord)> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let Some((num, rest)) = line.split_once(' ') else {
            parse.skipped.push((lineno, "missing line number".into()));
            continue;
        };
        let Ok(num) = num.parse::<usize>() else {
            parse.skipped.push((lineno, format!("bad line number `{num}`")));
            continue;
        };
        if num == 1 || current.is_none() {
            finish(&mut parse, &mut current);
            current = Some((lineno, DialogueRecord::default()));
        }
        let record = &mut current.as_mut().expect("dialogue started above").1;
        if let Some(p) = rest.strip_prefix("your persona:") {
            record.persona_b.push(p.trim().to_string());
            continue;
        }
        if let Some(p) = rest.strip_prefix("partner's persona:") {
            record.persona_a.push(p.trim().to_string());
            continue;
        }
        let fields: Vec<&str> = rest.split('\t').collect();
        if fields.len() < 2 {
            parse.skipped.push((lineno, "expected tab-separated utterance pair".into()));
            continue;
        }
        let (x, y) = (fields[0].trim(), fields[1].trim());
        let cands = match fields.get(3).map(|c| c.trim()).filter(|c| !c.is_empty()) {
            Some(c) => {
                let set: Vec<String> = c.split('|').map(|s| s.trim().to_string()).collect();
                match set.iter().position(|s| s == y) {
                    Some(a) => Some((set, a)),
                    None => {
                        parse.skipped.push((lineno, "label missing from candidates".into()));
                        continue;
                    }
                }
            }
            None => None,
        };
        if !(x == SILENCE && record.turns.is_empty()) {
            push_turn(record, Speaker::A, x, None);
        }
        push_turn(record, Speaker::B, y, cands);
    }
    finish(&mut parse, &mut current);
    for r in &mut parse.records {
        if r.candidates.iter().all(Option::is_none) {
            r.candidates.clear();
            r.answer_index.clear();
        }
    }
    parse
}

/// Copies the personas of a revised-persona parse of the same dialogues into
/// the `*_revised` fields.
pub fn merge_revised(original: &mut [DialogueRecord], revised: &[DialogueRecord]) -> Result<()> {
    if original.len() != revised.len() {
        return Err(Error::Mismatch(format!(
            "{} original dialogues but {} revised",
            original.len(),
            revised.len()
        )));
    }
    for (k, (o, r)) in original.iter_mut().zip(revised).enumerate() {
        if o.turns != r.turns {
            return Err(Error::Mismatch(format!("dialogue {k}: revised turns differ from original")));
        }
        o.persona_a_revised = r.persona_a.clone();
        o.persona_b_revised = r.persona_b.clone();
    }
    Ok(())
}
