use ndcore::{glorot_matrix, uniform, LstmParams, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use super::imn::{enhance, imn_interact};
use super::{Family, ModelConfig, Pass};
use crate::corpus::{MatchingExample, Sentence};
use crate::encoders::{encode_context, encode_sentence, EncodedSentence, WordEmbedder};
use crate::error::{Error, Result};
use crate::fusion::{fuse_context, fuse_context_response, fuse_none, fuse_response, Fused, FusionStrategy};

#[derive(Clone, Debug)]
struct Mlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
enum FusionParams {
    None { w: ParamId, b: ParamId },
    /// Optional projection of the context vector onto the profile width.
    Context { proj: Option<ParamId> },
    Response,
    ContextResponse { w: ParamId, b: ParamId },
}

/// Parameters of HRE, and of IMN when `agg` is present.
#[derive(Clone, Debug)]
pub struct RecurrentNet {
    embed: WordEmbedder,
    sent: LstmParams,
    ctx: LstmParams,
    agg: Option<LstmParams>,
    fusion: FusionParams,
    mlp: Mlp,
}

/// Context, persona and response vectors scored for one candidate.
struct Slots {
    context: Var,
    response: Var,
}

impl RecurrentNet {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &ModelConfig,
        vectors: Tensor<T>,
        char_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (h, h2) = (config.hidden, config.context_hidden);
        let embed = WordEmbedder::init(
            store,
            vectors,
            char_count,
            config.char_dim,
            &config.char_widths,
            config.char_filters,
            rng,
        )?;
        LstmParams::init(store, "sent", embed.dim, h, rng)?;
        let imn = config.family == Family::Imn && config.interaction;
        if imn {
            LstmParams::init(store, "agg", 8 * h, h, rng)?;
        }
        LstmParams::init(store, "ctx", 4 * h, h2, rng)?;
        let (dp, dc) = (4 * h, 4 * h2);
        match config.strategy {
            FusionStrategy::NoneAware => {
                let bound = (6.0 / (dp + 1) as f64).sqrt();
                store.add("fusion.w", uniform(rng, &[dp], bound), true)?;
                store.add("fusion.b", Tensor::zeros(&[1]), true)?;
            }
            FusionStrategy::ContextAware if dc != dp => {
                store.add("fusion.proj", glorot_matrix(rng, dc, dp), true)?;
            }
            FusionStrategy::ContextAware | FusionStrategy::ResponseAware => {}
            FusionStrategy::ContextResponseAware => {
                store.add("fusion.w", glorot_matrix(rng, dc + dp, dp), true)?;
                store.add("fusion.b", Tensor::zeros(&[dp]), true)?;
            }
        }
        let features = dc + 2 * dp;
        store.add("mlp.w1", glorot_matrix(rng, features, config.mlp_hidden), true)?;
        store.add("mlp.b1", Tensor::zeros(&[config.mlp_hidden]), true)?;
        store.add("mlp.w2", glorot_matrix(rng, config.mlp_hidden, 1), true)?;
        store.add("mlp.b2", Tensor::zeros(&[1]), true)?;
        Self::from_store(store, config)
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        let embed = WordEmbedder::from_store(store)?;
        let sent = LstmParams::from_store(store, "sent")?;
        let ctx = LstmParams::from_store(store, "ctx")?;
        let imn = config.family == Family::Imn && config.interaction;
        let agg = if imn { Some(LstmParams::from_store(store, "agg")?) } else { None };
        if !imn && store.id("agg.fwd.w").is_ok() {
            return Err(Error::Mismatch("parameters hold an interaction block the configuration lacks".into()));
        }
        let fusion = match config.strategy {
            FusionStrategy::NoneAware => FusionParams::None {
                w: store.id("fusion.w")?,
                b: store.id("fusion.b")?,
            },
            FusionStrategy::ContextAware => FusionParams::Context {
                proj: store.id("fusion.proj").ok(),
            },
            FusionStrategy::ResponseAware => FusionParams::Response,
            FusionStrategy::ContextResponseAware => FusionParams::ContextResponse {
                w: store.id("fusion.w")?,
                b: store.id("fusion.b")?,
            },
        };
        let strategy_params = store.iter().filter(|(_, p)| p.name.starts_with("fusion.")).count();
        let expected = match &fusion {
            FusionParams::None { .. } | FusionParams::ContextResponse { .. } => 2,
            FusionParams::Context { proj } => proj.is_some() as usize,
            FusionParams::Response => 0,
        };
        if strategy_params != expected {
            return Err(Error::Mismatch(format!("fusion parameters do not match strategy {}", config.strategy)));
        }
        let mlp = Mlp {
            w1: store.id("mlp.w1")?,
            b1: store.id("mlp.b1")?,
            w2: store.id("mlp.w2")?,
            b2: store.id("mlp.b2")?,
        };
        if sent.hidden_dim != config.hidden || ctx.hidden_dim != config.context_hidden {
            return Err(Error::Mismatch("LSTM sizes differ from the configuration".into()));
        }
        Ok(Self { embed, sent, ctx, agg, fusion, mlp })
    }

    fn encode_all<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        sentences: &[&Sentence],
        rate: f64,
        pass: &mut Pass,
    ) -> Result<Vec<EncodedSentence>> {
        let embedded = self.embed.embed_sentences(tape, store, sentences)?;
        embedded
            .into_iter()
            .zip(sentences)
            .map(|(x, s)| {
                let x = pass.dropout(tape, x, rate)?;
                encode_sentence(tape, store, &self.sent, x, s.len())
            })
            .collect()
    }

    fn zeros<T: Scalar>(tape: &mut Tape<T>, n: usize) -> Var {
        tape.constant(Tensor::zeros(&[n]))
    }

    /// Interaction-enhanced context and response vectors for one candidate.
    fn interactive<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        agg: &LstmParams,
        utterances: &[EncodedSentence],
        response: &EncodedSentence,
        context_dim: usize,
    ) -> Result<Slots> {
        let aggregate = |tape: &mut Tape<T>, x: Var, len: usize| -> Result<Var> {
            let h = agg.encode(tape, store, x, len)?;
            Ok(tape.pool_max_last(h, len)?)
        };
        if utterances.is_empty() {
            // Nothing to align against: the aligned half is zero.
            let zero = tape.constant(Tensor::zeros(tape.shape(response.hiddens)));
            let r = enhance(tape, response.hiddens, zero)?;
            let response = aggregate(tape, r, response.length)?;
            let context = Self::zeros(tape, context_dim);
            return Ok(Slots { context, response });
        }
        let parts: Vec<Var> = utterances.iter().map(|u| u.hiddens).collect();
        let joined = tape.stack_rows(&parts)?;
        let inter = imn_interact(tape, joined, response.hiddens)?;
        let mut aggregates = Vec::with_capacity(utterances.len());
        let mut start = 0;
        for u in utterances {
            let piece = tape.slice_rows(inter.context, start, start + u.length)?;
            aggregates.push(aggregate(tape, piece, u.length)?);
            start += u.length;
        }
        let context = encode_context(tape, store, &self.ctx, &aggregates)?.pooled;
        let response = aggregate(tape, inter.response, response.length)?;
        Ok(Slots { context, response })
    }

    fn fuse<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        profiles: Var,
        valid: &[bool],
        slots: &Slots,
    ) -> Result<Fused> {
        match &self.fusion {
            FusionParams::None { w, b } => {
                let (w, b) = (tape.param(store, *w), tape.param(store, *b));
                fuse_none(tape, profiles, valid, w, b)
            }
            FusionParams::Context { proj } => {
                let c = match proj {
                    Some(p) => {
                        let p = tape.param(store, *p);
                        tape.matmul(slots.context, p)?
                    }
                    None => slots.context,
                };
                fuse_context(tape, profiles, valid, c)
            }
            FusionParams::Response => fuse_response(tape, profiles, valid, slots.response),
            FusionParams::ContextResponse { w, b } => {
                let (w, b) = (tape.param(store, *w), tape.param(store, *b));
                fuse_context_response(tape, profiles, valid, slots.context, slots.response, w, b)
            }
        }
    }

    /// Logits for `candidates` and the fusion applied to each of them.
    pub(crate) fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        config: &ModelConfig,
        example: &MatchingExample,
        candidates: &[usize],
        pass: &mut Pass,
    ) -> Result<(Var, Vec<Fused>)> {
        if example.context.is_empty() && !example.config.ablate_context {
            return Err(Error::EmptyContext);
        }
        let (nc, np) = (example.context.len(), example.persona.len());
        let sentences: Vec<&Sentence> = example
            .context
            .iter()
            .chain(&example.persona)
            .chain(candidates.iter().map(|&k| &example.candidates[k]))
            .collect();
        let enc = self.encode_all(tape, store, &sentences, config.dropout, pass)?;
        let (utterances, rest) = enc.split_at(nc);
        let (profiles, responses) = rest.split_at(np);
        let context_dim = 4 * config.context_hidden;
        let persona_dim = 4 * config.hidden;

        let profile_matrix = if np > 0 {
            let rows: Vec<Var> = profiles.iter().map(|p| p.pooled).collect();
            Some(tape.stack_rows(&rows)?)
        } else {
            None
        };
        let valid = vec![true; np];

        let shared_context = match &self.agg {
            None if nc > 0 => {
                let aggs: Vec<Var> = utterances.iter().map(|u| u.pooled).collect();
                Some(encode_context(tape, store, &self.ctx, &aggs)?.pooled)
            }
            None => Some(Self::zeros(tape, context_dim)),
            Some(_) => None,
        };

        let mut features = Vec::with_capacity(responses.len());
        let mut fused_all = Vec::new();
        let mut shared_fusion: Option<Fused> = None;
        for response in responses {
            let slots = match (&self.agg, shared_context) {
                (Some(agg), _) => self.interactive(tape, store, agg, utterances, response, context_dim)?,
                (None, Some(c)) => Slots {
                    context: c,
                    response: response.pooled,
                },
                (None, None) => unreachable!("context computed above for HRE"),
            };
            let persona = match profile_matrix {
                None => Self::zeros(tape, persona_dim),
                Some(p) => {
                    // Candidate-independent fusions are computed once.
                    let reuse = !config.strategy.per_response()
                        && (self.agg.is_none() || config.strategy == FusionStrategy::NoneAware);
                    let fused = match shared_fusion {
                        Some(f) if reuse => f,
                        _ => {
                            let f = self.fuse(tape, store, p, &valid, &slots)?;
                            shared_fusion = Some(f);
                            f
                        }
                    };
                    fused_all.push(fused);
                    fused.persona
                }
            };
            features.push(tape.concat(&[slots.context, persona, slots.response])?);
        }
        let m = tape.stack_rows(&features)?;
        let (w1, b1) = (tape.param(store, self.mlp.w1), tape.param(store, self.mlp.b1));
        let (w2, b2) = (tape.param(store, self.mlp.w2), tape.param(store, self.mlp.b2));
        let hidden = tape.matmul(m, w1)?;
        let hidden = tape.add_row(hidden, b1)?;
        let hidden = tape.relu(hidden)?;
        let hidden = pass.dropout(tape, hidden, config.dropout)?;
        let out = tape.matmul(hidden, w2)?;
        let out = tape.add_row(out, b2)?;
        let logits = tape.reshape(out, vec![candidates.len()])?;
        Ok((logits, fused_all))
    }
}
