//! Synthetic dialogues whose correct responses are determined by topic
//! keywords, so that the value of persona and context signals is known by
//! construction.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::record::{DialogueRecord, Speaker, Turn};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Signal {
    /// The true response names a topic of the responder's persona.
    Persona,
    /// The true response picks up the fresh topic of the last utterance.
    Context,
    /// Both at once; negatives carry one of the two cues but never both.
    Both,
}

impl FromStr for Signal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persona" => Ok(Self::Persona),
            "context" => Ok(Self::Context),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("signal `{s}` not one of persona, context, both"))),
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::Persona => "persona",
            Signal::Context => "context",
            Signal::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_dialogues: usize,
    pub topics: usize,
    pub signal: Signal,
    pub seed: u64,
    pub turns: usize,
    pub candidates: usize,
    /// Negatives per set that reuse a topic already mentioned in the context
    /// but absent from the responder's persona.
    pub context_distractors: usize,
}

impl SynthSpec {
    pub fn new(num_dialogues: usize, topics: usize, signal: Signal, seed: u64) -> Self {
        Self {
            num_dialogues,
            topics,
            signal,
            seed,
            turns: 8,
            candidates: 20,
            context_distractors: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<DialogueRecord>,
    /// Topic keyword per topic index.
    pub keywords: Vec<String>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const SYLLABLES: usize = 70;

/// Pseudo-word naming topic `i`; distinct for `i < 70^3`.
pub fn keyword(i: usize) -> String {
    let space = SYLLABLES * SYLLABLES * SYLLABLES;
    let mut j = (i * 104_729 + 7) % space;
    let mut out = String::with_capacity(6);
    for _ in 0..3 {
        let s = j % SYLLABLES;
        j /= SYLLABLES;
        out.push(CONSONANTS[s % CONSONANTS.len()] as char);
        out.push(VOWELS[s / CONSONANTS.len()] as char);
    }
    out
}

const ORIGINAL: &[&str] = &[
    "i love {}",
    "i really like {}",
    "my favorite thing is {}",
    "i am into {}",
    "i spend my weekends on {}",
];
const REVISED: &[&str] = &[
    "{} makes me happy",
    "you can often find me doing {}",
    "i enjoy {} a lot",
    "{} is my passion",
];
const PHRASES: &[&str] = &[
    "i like {}",
    "what about {}",
    "{} is great",
    "do you know {}",
    "tell me about {}",
    "i tried {} once",
    "have you heard of {}",
];
const OPENERS: &[&str] = &["so", "well", "oh", "yes", "hey", "hmm", "ok"];
const JOINERS: &[&str] = &["and", "also", "but"];

fn fill(template: &str, word: &str) -> String {
    template.replace("{}", word)
}

fn render<R: Rng>(rng: &mut R, words: &[&str]) -> String {
    let mut parts: Vec<String> = Vec::new();
    if rng.gen_bool(0.5) {
        parts.push(OPENERS.choose(rng).unwrap().to_string());
    }
    for (k, w) in words.iter().enumerate() {
        if k > 0 {
            parts.push(JOINERS.choose(rng).unwrap().to_string());
        }
        parts.push(fill(PHRASES.choose(rng).unwrap(), w));
    }
    let mut s = parts.join(" ");
    s.push_str(if rng.gen_bool(0.3) { " ?" } else { " ." });
    s
}

struct Dialogue<'a> {
    keywords: &'a [String],
    own: [Vec<usize>; 2],
}

impl Dialogue<'_> {
    fn persona_of(&self, s: Speaker) -> &[usize] {
        &self.own[matches!(s, Speaker::B) as usize]
    }

    fn text<R: Rng>(&self, rng: &mut R, topics: &mut [usize]) -> String {
        topics.shuffle(rng);
        let words: Vec<&str> = topics.iter().map(|&t| self.keywords[t].as_str()).collect();
        render(rng, &words)
    }
}

fn pick<R: Rng>(rng: &mut R, pool: &[usize]) -> usize {
    pool[rng.gen_range(0..pool.len())]
}

fn dialogue(spec: &SynthSpec, keywords: &[String], rng: &mut ChaCha8Rng) -> DialogueRecord {
    let mut all: Vec<usize> = (0..spec.topics).collect();
    all.shuffle(rng);
    let na = rng.gen_range(3..=5);
    let nb = rng.gen_range(3..=5);
    let d = Dialogue {
        keywords,
        own: [all[..na].to_vec(), all[na..na + nb].to_vec()],
    };
    let fresh_pool: Vec<usize> = all[na + nb..].to_vec();
    let mut record = DialogueRecord::default();
    for (k, side) in [Speaker::A, Speaker::B].into_iter().enumerate() {
        let mut orig = Vec::new();
        let mut rev = Vec::new();
        for &t in &d.own[k] {
            orig.push(fill(ORIGINAL.choose(rng).unwrap(), &keywords[t]));
            rev.push(fill(REVISED.choose(rng).unwrap(), &keywords[t]));
        }
        match side {
            Speaker::A => (record.persona_a, record.persona_a_revised) = (orig, rev),
            Speaker::B => (record.persona_b, record.persona_b_revised) = (orig, rev),
        }
    }

    let mut mentioned: BTreeSet<usize> = BTreeSet::new();
    let mut last: Vec<usize> = Vec::new();
    let mut prev_fresh: Option<usize> = None;
    for t in 0..spec.turns {
        let speaker = if t % 2 == 0 { Speaker::A } else { Speaker::B };
        let own = d.persona_of(speaker);
        let fresh = pick(rng, &fresh_pool);
        let mut truth: Vec<usize> = match spec.signal {
            Signal::Persona => vec![pick(rng, own)],
            Signal::Context => prev_fresh.into_iter().chain([fresh]).collect(),
            Signal::Both => [pick(rng, own)].into_iter().chain(prev_fresh).chain([fresh]).collect(),
        };
        let text = d.text(rng, &mut truth);
        if t == 0 {
            record.candidates.push(None);
            record.answer_index.push(None);
        } else {
            let forbidden: BTreeSet<usize> = own.iter().chain(&last).chain(&truth).copied().collect();
            let others: Vec<usize> = (0..spec.topics).filter(|x| !forbidden.contains(x)).collect();
            let seen: Vec<usize> = mentioned.iter().filter(|x| !own.contains(x)).copied().collect();
            let mut set = Vec::with_capacity(spec.candidates);
            for k in 0..spec.candidates - 1 {
                let mut topics: Vec<usize> = (0..truth.len()).map(|_| pick(rng, &others)).collect();
                if k < spec.context_distractors && !seen.is_empty() {
                    topics[0] = pick(rng, &seen);
                } else if spec.signal == Signal::Both {
                    match k % 3 {
                        0 => topics[0] = pick(rng, own),
                        1 => topics[0] = prev_fresh.unwrap_or(topics[0]),
                        _ => {}
                    }
                }
                set.push(d.text(rng, &mut topics));
            }
            let answer = rng.gen_range(0..spec.candidates);
            set.insert(answer, text.clone());
            record.candidates.push(Some(set));
            record.answer_index.push(Some(answer));
        }
        record.turns.push(Turn { speaker, text });
        mentioned.extend(truth.iter().copied());
        last = truth;
        if spec.signal != Signal::Persona {
            prev_fresh = Some(fresh);
        }
    }
    record
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.topics < 20 {
        return Err(Error::Config(format!("synthetic corpora need at least 20 topics, got {}", spec.topics)));
    }
    if spec.turns < 2 || spec.candidates < 2 {
        return Err(Error::Config("synthetic corpora need at least 2 turns and 2 candidates".into()));
    }
    let keywords: Vec<String> = (0..spec.topics).map(keyword).collect();
    let mut rng = rng::substream(spec.seed, "synthetic");
    let records = (0..spec.num_dialogues).map(|_| dialogue(spec, &keywords, &mut rng)).collect();
    Ok(SynthCorpus { records, keywords })
}

/// Train, validation and test corpora from independent substreams of
/// `spec.seed`; `spec.num_dialogues` is ignored in favour of `sizes`.
pub fn generate_splits(spec: &SynthSpec, sizes: [usize; 3]) -> Result<[SynthCorpus; 3]> {
    let make = |k: usize| {
        let seed = rng::indexed_substream(spec.seed, "synthetic-split", k as u64).next_u64();
        generate_synthetic(&SynthSpec {
            num_dialogues: sizes[k],
            seed,
            ..spec.clone()
        })
    };
    Ok([make(0)?, make(1)?, make(2)?])
}
