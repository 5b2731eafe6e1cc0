use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use rand::Rng;

use super::record::DialogueRecord;
use super::tokenize::tokenize;
use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "[CLS]", "[SEP]"];

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;

/// Where a frozen word-vector block comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingSource {
    /// Whitespace text file, `token v1 ... vd` per line. Vocabulary words
    /// absent from the file get a zero vector.
    File(PathBuf),
    /// Per-token pseudo-random vectors keyed on the token text, for runs
    /// without pretrained files.
    Random { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpec {
    pub source: EmbeddingSource,
    pub dim: usize,
}

impl EmbeddingSpec {
    pub fn random(dim: usize, seed: u64) -> Self {
        Self {
            source: EmbeddingSource::Random { seed },
            dim,
        }
    }
}

/// Word and character id maps plus the frozen word matrix (fixed block then
/// corpus-estimated block, row-major `[words, fixed_dim + trained_dim]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    chars: Vec<char>,
    char_ids: HashMap<char, usize>,
    pub fixed_dim: usize,
    pub trained_dim: usize,
    vectors: Vec<f64>,
}

impl Vocab {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = tokens.into_iter().filter(|t| !SPECIALS.contains(t)).collect();
        let words: Vec<String> = SPECIALS.iter().copied().chain(set).map(str::to_string).collect();
        let chars: BTreeSet<char> = words[SPECIALS.len()..].iter().flat_map(|w| w.chars()).collect();
        Self::from_parts(words, chars.into_iter().collect())
    }

    fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        // Character ids start after pad and unk.
        let char_ids = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self {
            words,
            word_ids,
            chars,
            char_ids,
            fixed_dim: 0,
            trained_dim: 0,
            vectors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn char_count(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, token: &str) -> usize {
        self.word_ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_ids.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    /// Character ids of a word, cut to `max_chars`. Specials have none.
    pub fn char_ids(&self, token: &str, max_chars: usize) -> Vec<usize> {
        if SPECIALS.contains(&token) {
            return Vec::new();
        }
        token.chars().take(max_chars).map(|c| self.char_id(c)).collect()
    }

    pub fn vector_dim(&self) -> usize {
        self.fixed_dim + self.trained_dim
    }

    /// Frozen word matrix `[len, fixed_dim + trained_dim]`; row 0 is zero.
    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        let d = self.vector_dim();
        &self.vectors[id * d..(id + 1) * d]
    }

    pub fn set_vectors(&mut self, fixed_dim: usize, trained_dim: usize, vectors: Vec<f64>) -> Result<()> {
        if vectors.len() != self.len() * (fixed_dim + trained_dim) {
            return Err(Error::Mismatch(format!(
                "word matrix has {} values, vocabulary needs {} x {}",
                vectors.len(),
                self.len(),
                fixed_dim + trained_dim
            )));
        }
        self.fixed_dim = fixed_dim;
        self.trained_dim = trained_dim;
        self.vectors = vectors;
        Ok(())
    }

    /// Line-oriented text form holding the id maps (the word matrix travels as
    /// a tensor in checkpoints).
    pub fn to_text(&self) -> String {
        let mut out = format!("words {}\n", self.words.len());
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out.push_str(&format!("chars {}\n", self.chars.len()));
        for c in &self.chars {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("vocabulary section: {m}"));
        let mut lines = text.lines();
        let count = |lines: &mut std::str::Lines, key: &str| -> Result<usize> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key))
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| bad(&format!("missing `{key}` header")))
        };
        let nw = count(&mut lines, "words ")?;
        let words: Vec<String> = lines.by_ref().take(nw).map(str::to_string).collect();
        if words.len() != nw || words.iter().take(SPECIALS.len()).ne(SPECIALS.iter()) {
            return Err(bad("word list truncated or missing specials"));
        }
        let nc = count(&mut lines, "chars ")?;
        let mut chars = Vec::with_capacity(nc);
        for l in lines.by_ref().take(nc) {
            let mut it = l.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(bad("character entry must be one character")),
            }
        }
        if chars.len() != nc {
            return Err(bad("character list truncated"));
        }
        Ok(Self::from_parts(words, chars))
    }
}

fn corpus_tokens(records: &[DialogueRecord]) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for r in records {
        let texts = r
            .persona_a
            .iter()
            .chain(&r.persona_b)
            .chain(&r.persona_a_revised)
            .chain(&r.persona_b_revised)
            .chain(r.turns.iter().map(|t| &t.text))
            .chain(r.candidates.iter().flatten().flatten());
        for text in texts {
            set.extend(tokenize(text));
        }
    }
    set
}

fn fill_block(
    vocab: &Vocab,
    spec: &EmbeddingSpec,
    offset: usize,
    stride: usize,
    out: &mut [f64],
) -> Result<()> {
    if spec.dim == 0 {
        return Ok(());
    }
    match &spec.source {
        EmbeddingSource::Random { seed } => {
            let bound = (3.0 / spec.dim as f64).sqrt();
            for (id, w) in vocab.words.iter().enumerate().skip(1) {
                let mut rng = rng::keyed_substream(*seed, "word-vectors", w);
                let row = &mut out[id * stride + offset..id * stride + offset + spec.dim];
                row.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
        }
        EmbeddingSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let label = path.display().to_string();
            for (i, line) in text.lines().enumerate() {
                let mut fields = line.split_whitespace();
                let Some(token) = fields.next() else { continue };
                let values: Vec<&str> = fields.collect();
                // word2vec text files open with a `count dim` header.
                if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
                    continue;
                }
                if values.len() != spec.dim {
                    return Err(Error::EmbeddingDim {
                        path: label,
                        token: token.to_string(),
                        found: values.len(),
                        expected: spec.dim,
                    });
                }
                let Some(&id) = vocab.word_ids.get(token) else { continue };
                if id == PAD {
                    continue;
                }
                let row = &mut out[id * stride + offset..id * stride + offset + spec.dim];
                for (slot, v) in row.iter_mut().zip(&values) {
                    *slot = v.parse().map_err(|_| Error::Parse {
                        path: label.clone(),
                        line: i + 1,
                        message: format!("token `{token}`: `{v}` is not a number"),
                    })?;
                }
            }
        }
    }
    Ok(())
}

/// Builds the vocabulary from every token of `records` (normally the training
/// split) and fills the frozen word matrix from the two embedding specs.
pub fn build_vocab(records: &[DialogueRecord], fixed: &EmbeddingSpec, trained: &EmbeddingSpec) -> Result<Vocab> {
    let tokens = corpus_tokens(records);
    let mut vocab = Vocab::from_tokens(tokens.iter().map(String::as_str));
    let stride = fixed.dim + trained.dim;
    let mut vectors = vec![0.0; vocab.len() * stride];
    fill_block(&vocab, fixed, 0, stride, &mut vectors)?;
    fill_block(&vocab, trained, fixed.dim, stride, &mut vectors)?;
    vocab.set_vectors(fixed.dim, trained.dim, vectors)?;
    Ok(vocab)
}
