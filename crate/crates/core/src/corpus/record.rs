use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use crate::error::{Error, Result};

pub const MIN_PROFILES: usize = 3;
pub const MAX_PROFILES: usize = 5;
pub const DEFAULT_CANDIDATES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::A => "A",
            Speaker::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// One dialogue with both speakers' personas and optional per-turn candidate
/// sets. `candidates[t]` / `answer_index[t]` belong to turn `t`; both lists are
/// either empty or as long as `turns`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub persona_a: Vec<String>,
    pub persona_b: Vec<String>,
    #[serde(default)]
    pub persona_a_revised: Vec<String>,
    #[serde(default)]
    pub persona_b_revised: Vec<String>,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub candidates: Vec<Option<Vec<String>>>,
    #[serde(default)]
    pub answer_index: Vec<Option<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    ParlaiText,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "parlai-text" | "parlai" => Ok(Self::ParlaiText),
            _ => Err(Error::Config(format!("unknown corpus format `{s}` (expected jsonl or parlai-text)"))),
        }
    }
}

impl DialogueRecord {
    pub fn persona(&self, speaker: Speaker, revised: bool) -> &[String] {
        match (speaker, revised) {
            (Speaker::A, false) => &self.persona_a,
            (Speaker::B, false) => &self.persona_b,
            (Speaker::A, true) => &self.persona_a_revised,
            (Speaker::B, true) => &self.persona_b_revised,
        }
    }

    pub fn candidate_set(&self, turn: usize) -> Option<(&[String], usize)> {
        let set = self.candidates.get(turn)?.as_deref()?;
        let answer = (*self.answer_index.get(turn)?)?;
        Some((set, answer))
    }

    pub fn candidate_turns(&self) -> usize {
        (0..self.turns.len()).filter(|&t| self.candidate_set(t).is_some()).count()
    }

    /// Checks the structural invariants. `candidates` fixes the required size
    /// of every candidate set when given.
    pub fn validate(&self, candidates: Option<usize>) -> std::result::Result<(), String> {
        for (name, p) in [
            ("persona_a", &self.persona_a),
            ("persona_b", &self.persona_b),
            ("persona_a_revised", &self.persona_a_revised),
            ("persona_b_revised", &self.persona_b_revised),
        ] {
            // An empty list marks the persona as unavailable.
            if !p.is_empty() && !(MIN_PROFILES..=MAX_PROFILES).contains(&p.len()) {
                return Err(format!(
                    "{name} has {} profiles, expected {MIN_PROFILES} to {MAX_PROFILES}",
                    p.len()
                ));
            }
        }
        if self.turns.is_empty() {
            return Err("dialogue has no turns".into());
        }
        for (t, pair) in self.turns.windows(2).enumerate() {
            if pair[0].speaker == pair[1].speaker {
                return Err(format!("turns {t} and {} are both spoken by {}", t + 1, pair[1].speaker));
            }
        }
        let n = self.turns.len();
        if !self.candidates.is_empty() && self.candidates.len() != n {
            return Err(format!("candidates has {} entries for {n} turns", self.candidates.len()));
        }
        if !self.answer_index.is_empty() && self.answer_index.len() != n {
            return Err(format!("answer_index has {} entries for {n} turns", self.answer_index.len()));
        }
        for t in 0..n {
            let set = self.candidates.get(t).and_then(|c| c.as_ref());
            let answer = self.answer_index.get(t).copied().flatten();
            match (set, answer) {
                (None, None) => {}
                (Some(_), None) => return Err(format!("turn {t}: candidate set without a true response")),
                (None, Some(_)) => return Err(format!("turn {t}: answer index without a candidate set")),
                (Some(set), Some(a)) => {
                    if let Some(k) = candidates {
                        if set.len() != k {
                            return Err(format!("turn {t}: {} candidates, expected {k}", set.len()));
                        }
                    }
                    if a >= set.len() {
                        return Err(format!("turn {t}: answer index {a} out of {} candidates", set.len()));
                    }
                    if tokenize(&set[a]) != tokenize(&self.turns[t].text) {
                        return Err(format!("turn {t}: true candidate does not match the turn text"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// Required candidate-set size; `None` accepts any size.
    pub candidates: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: CorpusFormat::Jsonl,
            candidates: Some(DEFAULT_CANDIDATES),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>, options: LoadOptions) -> Result<Vec<DialogueRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    match options.format {
        CorpusFormat::Jsonl => parse_jsonl(&text, &label, options.candidates),
        CorpusFormat::ParlaiText => {
            let parsed = super::parlai::parse_parlai(&text);
            if let Some((line, reason)) = parsed.skipped.first() {
                return Err(Error::Parse {
                    path: label,
                    line: *line,
                    message: reason.clone(),
                });
            }
            check_all(parsed.records, parsed.first_lines, &label, options.candidates)
        }
    }
}

/// Parses JSONL text; blank lines are ignored. `label` names the source in errors.
pub fn parse_jsonl(text: &str, label: &str, candidates: Option<usize>) -> Result<Vec<DialogueRecord>> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: label.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
        lines.push(i + 1);
    }
    check_all(records, lines, label, candidates)
}

fn check_all(
    records: Vec<DialogueRecord>,
    lines: Vec<usize>,
    label: &str,
    candidates: Option<usize>,
) -> Result<Vec<DialogueRecord>> {
    for (record, line) in records.iter().zip(&lines) {
        record.validate(candidates).map_err(|message| Error::Parse {
            path: label.to_string(),
            line: *line,
            message,
        })?;
    }
    Ok(records)
}

pub fn to_jsonl(records: &[DialogueRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_turns() -> DialogueRecord {
        DialogueRecord {
            persona_a: vec!["i like tea".into(), "i have a cat".into(), "i run".into()],
            persona_b: vec!["i swim".into(), "i read".into(), "i cook".into()],
            turns: vec![
                Turn { speaker: Speaker::A, text: "hi there".into() },
                Turn { speaker: Speaker::B, text: "hello , how are you ?".into() },
            ],
            candidates: vec![None, Some(vec!["nope".into(), "Hello, how are you?".into()])],
            answer_index: vec![None, Some(1)],
            ..Default::default()
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let r = two_turns();
        let parsed = parse_jsonl(&to_jsonl(&[r.clone()]), "mem", Some(2)).unwrap();
        assert_eq!(parsed, vec![r]);
        assert_eq!(parsed[0].turns.len(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = to_jsonl(&[two_turns()]);
        let text = format!("{good}\n{{not json\n");
        match parse_jsonl(&text, "mem", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_true_response_is_rejected() {
        let mut r = two_turns();
        r.answer_index[1] = None;
        let err = parse_jsonl(&to_jsonl(&[r]), "mem", None).unwrap_err();
        assert!(err.to_string().contains("without a true response"), "{err}");
    }

    #[test]
    fn invariants() {
        let mut r = two_turns();
        r.turns[1].speaker = Speaker::A;
        assert!(r.validate(None).unwrap_err().contains("both spoken"));

        let mut r = two_turns();
        r.persona_a.truncate(2);
        assert!(r.validate(None).is_err());

        let r = two_turns();
        assert!(r.validate(Some(20)).unwrap_err().contains("expected 20"));

        let mut r = two_turns();
        r.answer_index[1] = Some(0);
        assert!(r.validate(None).unwrap_err().contains("does not match"));
    }
}
