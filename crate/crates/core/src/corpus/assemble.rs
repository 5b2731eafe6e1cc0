use std::fmt;
use std::str::FromStr;

use super::record::{DialogueRecord, Speaker};
use super::tokenize::tokenize;
use super::vocab::{Vocab, UNK};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PersonaSide {
    /// The persona of the speaker who utters the response.
    #[default]
    Own,
    Partner,
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PersonaVersion {
    #[default]
    Original,
    Revised,
}

impl fmt::Display for PersonaSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PersonaSide::Own => "self",
            PersonaSide::Partner => "partner",
            PersonaSide::Disabled => "none",
        })
    }
}

impl FromStr for PersonaSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(Self::Own),
            "partner" => Ok(Self::Partner),
            "none" => Ok(Self::Disabled),
            _ => Err(Error::Config(format!("persona side `{s}` not one of self, partner, none"))),
        }
    }
}

impl fmt::Display for PersonaVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PersonaVersion::Original => "original",
            PersonaVersion::Revised => "revised",
        })
    }
}

impl FromStr for PersonaVersion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "revised" => Ok(Self::Revised),
            _ => Err(Error::Config(format!("persona version `{s}` not one of original, revised"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PersonaConfig {
    pub side: PersonaSide,
    pub version: PersonaVersion,
    pub ablate_context: bool,
}

impl fmt::Display for PersonaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.side, self.version)?;
        if self.ablate_context {
            f.write_str("-noctx")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub chars_per_word: usize,
    pub words_per_utterance: usize,
    pub utterances: usize,
    pub words_per_profile: usize,
    pub profiles: usize,
    pub words_per_response: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            chars_per_word: 18,
            words_per_utterance: 20,
            utterances: 15,
            words_per_profile: 15,
            profiles: 5,
            words_per_response: 20,
        }
    }
}

/// A tokenized sentence: word ids plus per-word character ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Tokenizes and keeps the first `max_words` words; `None` when nothing
    /// remains.
    pub fn encode(text: &str, vocab: &Vocab, max_words: usize, max_chars: usize) -> Option<Sentence> {
        let tokens = tokenize(text);
        let tokens = &tokens[..tokens.len().min(max_words)];
        if tokens.is_empty() {
            return None;
        }
        Some(Sentence {
            words: tokens.iter().map(|t| vocab.word_id(t)).collect(),
            chars: tokens.iter().map(|t| vocab.char_ids(t, max_chars)).collect(),
        })
    }

    pub fn unknown() -> Sentence {
        Sentence {
            words: vec![UNK],
            chars: vec![Vec::new()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingExample {
    /// `record:turn`.
    pub id: String,
    pub context: Vec<Sentence>,
    pub persona: Vec<Sentence>,
    pub candidates: Vec<Sentence>,
    pub label: usize,
    pub config: PersonaConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assembly {
    pub examples: Vec<MatchingExample>,
    /// Turns that carry no candidate set.
    pub skipped_without_candidates: usize,
    /// Candidate-bearing turns whose preceding context is empty.
    pub skipped_empty_context: usize,
}

fn encode_all<'a>(texts: impl Iterator<Item = &'a String>, vocab: &Vocab, words: usize, chars: usize) -> Vec<Sentence> {
    texts.filter_map(|t| Sentence::encode(t, vocab, words, chars)).collect()
}

/// One example per candidate-bearing turn. The context keeps the most recent
/// `limits.utterances` non-empty utterances; utterances, profiles and
/// responses keep their leading words.
pub fn assemble_examples(
    record: &DialogueRecord,
    record_index: usize,
    config: PersonaConfig,
    limits: &Limits,
    vocab: &Vocab,
) -> Assembly {
    let mut out = Assembly::default();
    let lc = limits.chars_per_word;
    for (t, turn) in record.turns.iter().enumerate() {
        let Some((set, answer)) = record.candidate_set(t) else {
            out.skipped_without_candidates += 1;
            continue;
        };
        let context = if config.ablate_context {
            Vec::new()
        } else {
            let mut c = encode_all(record.turns[..t].iter().map(|u| &u.text), vocab, limits.words_per_utterance, lc);
            if c.is_empty() {
                out.skipped_empty_context += 1;
                continue;
            }
            c.drain(..c.len().saturating_sub(limits.utterances));
            c
        };
        let revised = config.version == PersonaVersion::Revised;
        let speaker: Option<Speaker> = match config.side {
            PersonaSide::Own => Some(turn.speaker),
            PersonaSide::Partner => Some(turn.speaker.other()),
            PersonaSide::Disabled => None,
        };
        let persona = match speaker {
            Some(s) => {
                let mut p = encode_all(record.persona(s, revised).iter(), vocab, limits.words_per_profile, lc);
                p.truncate(limits.profiles);
                p
            }
            None => Vec::new(),
        };
        let candidates = set
            .iter()
            .map(|c| Sentence::encode(c, vocab, limits.words_per_response, lc).unwrap_or_else(Sentence::unknown))
            .collect();
        out.examples.push(MatchingExample {
            id: format!("{record_index}:{t}"),
            context,
            persona,
            candidates,
            label: answer,
            config,
        });
    }
    out
}

/// Assembles a whole corpus, in record order.
pub fn assemble_corpus(records: &[DialogueRecord], config: PersonaConfig, limits: &Limits, vocab: &Vocab) -> Assembly {
    let mut all = Assembly::default();
    for (i, r) in records.iter().enumerate() {
        let a = assemble_examples(r, i, config, limits, vocab);
        all.examples.extend(a.examples);
        all.skipped_without_candidates += a.skipped_without_candidates;
        all.skipped_empty_context += a.skipped_empty_context;
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::record::Turn;
    use crate::corpus::vocab::{build_vocab, EmbeddingSpec};

    fn record() -> DialogueRecord {
        let cands = |truth: &str| Some(vec!["something else".to_string(), truth.to_string()]);
        DialogueRecord {
            persona_a: vec!["a one".into(), "a two".into(), "a three".into()],
            persona_b: vec!["b one".into(), "b two".into(), "b three".into(), "b four".into()],
            persona_a_revised: vec!["ra one".into(), "ra two".into(), "ra three".into()],
            persona_b_revised: vec![],
            turns: vec![
                Turn { speaker: Speaker::A, text: "hello".into() },
                Turn { speaker: Speaker::B, text: "hi there".into() },
                Turn { speaker: Speaker::A, text: "how are you".into() },
            ],
            candidates: vec![None, cands("hi there"), cands("how are you")],
            answer_index: vec![None, Some(1), Some(1)],
        }
    }

    fn vocab() -> Vocab {
        build_vocab(&[record()], &EmbeddingSpec::random(0, 0), &EmbeddingSpec::random(0, 0)).unwrap()
    }

    #[test]
    fn one_example_per_candidate_turn() {
        let v = vocab();
        let a = assemble_examples(&record(), 7, PersonaConfig::default(), &Limits::default(), &v);
        assert_eq!(a.examples.len(), record().candidate_turns());
        assert_eq!(a.skipped_without_candidates, 1);
        let first = &a.examples[0];
        assert_eq!(first.id, "7:1");
        assert_eq!(first.context.len(), 1);
        assert_eq!(first.context[0].words, vec![v.word_id("hello")]);
        assert_eq!(first.label, 1);
        assert_eq!(first.candidates.len(), 2);
    }

    #[test]
    fn self_and_partner_selection() {
        let v = vocab();
        let l = Limits::default();
        let own = assemble_examples(&record(), 0, PersonaConfig::default(), &l, &v);
        let partner = PersonaConfig { side: PersonaSide::Partner, ..Default::default() };
        let other = assemble_examples(&record(), 0, partner, &l, &v);
        // Turn 1 is spoken by B.
        assert_eq!(own.examples[0].persona.len(), 4);
        assert_eq!(own.examples[0].persona[0].words[0], v.word_id("b"));
        assert_eq!(other.examples[0].persona[0].words[0], v.word_id("a"));
        assert_ne!(own.examples[0].persona, other.examples[0].persona);

        let none = PersonaConfig { side: PersonaSide::Disabled, ..Default::default() };
        assert!(assemble_examples(&record(), 0, none, &l, &v).examples[0].persona.is_empty());

        let revised = PersonaConfig { version: PersonaVersion::Revised, ..Default::default() };
        let r = assemble_examples(&record(), 0, revised, &l, &v);
        assert!(r.examples[0].persona.is_empty(), "B has no revised persona");
        assert_eq!(r.examples[1].persona[0].words[0], v.word_id("ra"));
    }

    #[test]
    fn limits_and_ablation() {
        let v = vocab();
        let tight = Limits { utterances: 1, words_per_response: 1, profiles: 2, words_per_profile: 1, ..Default::default() };
        let a = assemble_examples(&record(), 0, PersonaConfig::default(), &tight, &v);
        let last = &a.examples[1];
        assert_eq!(last.context.len(), 1);
        assert_eq!(last.context[0].words[0], v.word_id("hi"), "most recent utterance kept");
        assert!(last.candidates.iter().all(|c| c.len() == 1));
        assert_eq!(last.persona.len(), 2);
        assert!(last.persona.iter().all(|p| p.len() == 1));

        let ablated = PersonaConfig { ablate_context: true, ..Default::default() };
        let a = assemble_examples(&record(), 0, ablated, &Limits::default(), &v);
        assert!(a.examples.iter().all(|e| e.context.is_empty()));
    }

    #[test]
    fn parse_config_values() {
        assert_eq!("partner".parse::<PersonaSide>().unwrap(), PersonaSide::Partner);
        assert!("both".parse::<PersonaSide>().unwrap_err().to_string().contains("self, partner, none"));
        assert_eq!("revised".parse::<PersonaVersion>().unwrap(), PersonaVersion::Revised);
    }
}
