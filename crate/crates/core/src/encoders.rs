//! Word representations and the two-level recurrent encoders shared by the
//! recurrent matchers.

use std::collections::HashMap;

use ndcore::{glorot_matrix, LstmParams, NdError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const WORDS: &str = "embed.words";
pub const CHARS: &str = "embed.chars";

#[derive(Clone, Debug)]
pub struct CharConv {
    pub width: usize,
    pub w: ParamId,
    pub b: ParamId,
}

/// Frozen word vectors concatenated with a trainable character CNN.
#[derive(Clone, Debug)]
pub struct WordEmbedder {
    pub words: ParamId,
    pub chars: ParamId,
    pub convs: Vec<CharConv>,
    pub dim: usize,
}

impl WordEmbedder {
    /// `vectors` is the frozen `[vocab, d]` word matrix (`d` may be 0).
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        vectors: Tensor<T>,
        char_count: usize,
        char_dim: usize,
        widths: &[usize],
        filters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        store.add(WORDS, vectors, false)?;
        let mut table = glorot_matrix::<T, R>(rng, char_count, char_dim);
        table.data_mut()[..char_dim].iter_mut().for_each(|v| *v = T::zero());
        store.add(CHARS, table, true)?;
        for &width in widths {
            let w = glorot_matrix(rng, width * char_dim, filters);
            store.add(&format!("embed.conv{width}.w"), w, true)?;
            store.add(&format!("embed.conv{width}.b"), Tensor::zeros(&[filters]), true)?;
        }
        Self::from_store(store)
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Result<Self> {
        let words = store.id(WORDS)?;
        let chars = store.id(CHARS)?;
        let mut widths: Vec<usize> = store
            .iter()
            .filter_map(|(_, p)| p.name.strip_prefix("embed.conv")?.strip_suffix(".w")?.parse().ok())
            .collect();
        widths.sort_unstable();
        let mut dim = store.value(words).dims2().1;
        let mut convs = Vec::new();
        for width in widths {
            let w = store.id(&format!("embed.conv{width}.w"))?;
            let b = store.id(&format!("embed.conv{width}.b"))?;
            dim += store.value(w).dims2().1;
            convs.push(CharConv { width, w, b });
        }
        Ok(Self { words, chars, convs, dim })
    }

    /// `[n, dim]` vectors for one token sequence. Word id 0 is padding and
    /// maps to the zero vector; each distinct (word, characters) pair is
    /// embedded once.
    pub fn embed_words<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        words: &[usize],
        chars: &[Vec<usize>],
    ) -> Result<Var> {
        if words.len() != chars.len() {
            return Err(Error::Mismatch(format!("{} word ids but {} character lists", words.len(), chars.len())));
        }
        let vocab = store.value(self.words).dims2().0;
        if let Some(&bad) = words.iter().find(|&&w| w >= vocab) {
            return Err(NdError::OutOfRange { what: "word vocabulary", index: bad, size: vocab }.into());
        }
        // Slot 0 of the lexicon is a placeholder that `embedding` never reads.
        let mut slots: HashMap<(usize, &[usize]), usize> = HashMap::new();
        let mut lex_words = vec![0usize];
        let mut lex_chars: Vec<Vec<usize>> = vec![Vec::new()];
        let ids: Vec<usize> = words
            .iter()
            .zip(chars)
            .map(|(&w, c)| {
                if w == 0 {
                    return 0;
                }
                *slots.entry((w, c.as_slice())).or_insert_with(|| {
                    lex_words.push(w);
                    lex_chars.push(c.clone());
                    lex_words.len() - 1
                })
            })
            .collect();
        let mut parts = Vec::new();
        if store.value(self.words).dims2().1 > 0 {
            let table = tape.param(store, self.words);
            parts.push(tape.gather_rows(table, &lex_words)?);
        }
        let table = tape.param(store, self.chars);
        for conv in &self.convs {
            let (w, b) = (tape.param(store, conv.w), tape.param(store, conv.b));
            parts.push(tape.char_conv(table, &lex_chars, w, b, conv.width)?);
        }
        let lexicon = tape.concat(&parts)?;
        Ok(tape.embedding(lexicon, &ids)?)
    }

    /// Embeds several sentences through one shared lexicon.
    pub fn embed_sentences<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        sentences: &[&Sentence],
    ) -> Result<Vec<Var>> {
        let words: Vec<usize> = sentences.iter().flat_map(|s| s.words.iter().copied()).collect();
        let chars: Vec<Vec<usize>> = sentences.iter().flat_map(|s| s.chars.iter().cloned()).collect();
        let all = self.embed_words(tape, store, &words, &chars)?;
        let mut out = Vec::with_capacity(sentences.len());
        let mut start = 0;
        for s in sentences {
            out.push(tape.slice_rows(all, start, start + s.len())?);
            start += s.len();
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncodedSentence {
    /// `[length, 2h]`.
    pub hiddens: Var,
    pub length: usize,
    /// `[4h]`: componentwise max then last valid state.
    pub pooled: Var,
}

/// BiLSTM over `embedded` (`[rows, d]`, first `length` rows valid) followed by
/// max-and-last pooling.
pub fn encode_sentence<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    lstm: &LstmParams,
    embedded: Var,
    length: usize,
) -> Result<EncodedSentence> {
    let hiddens = lstm.encode(tape, store, embedded, length)?;
    let pooled = tape.pool_max_last(hiddens, length)?;
    Ok(EncodedSentence { hiddens, length, pooled })
}

#[derive(Clone, Debug)]
pub struct EncodedContext {
    pub utterance_aggregates: Vec<Var>,
    /// `[n_c, 2h']` from the second-level BiLSTM.
    pub context_hiddens: Var,
    /// `[4h']`.
    pub pooled: Var,
}

/// Second-level BiLSTM over utterance aggregates in turn order.
pub fn encode_context<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    lstm: &LstmParams,
    utterance_aggregates: &[Var],
) -> Result<EncodedContext> {
    if utterance_aggregates.is_empty() {
        return Err(Error::EmptyContext);
    }
    let seq = tape.stack_rows(utterance_aggregates)?;
    let context_hiddens = lstm.encode(tape, store, seq, utterance_aggregates.len())?;
    let pooled = tape.pool_max_last(context_hiddens, utterance_aggregates.len())?;
    Ok(EncodedContext {
        utterance_aggregates: utterance_aggregates.to_vec(),
        context_hiddens,
        pooled,
    })
}
