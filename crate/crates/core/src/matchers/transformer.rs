use ndcore::{glorot_matrix, lit, uniform, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use super::arrange::{arrange, truncate_for_transformer, Arranged, Subtype};
use super::{ModelConfig, Pass};
use crate::corpus::MatchingExample;
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
struct Block {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2: (ParamId, ParamId),
}

/// Post-norm transformer encoder with token, position, segment and optional
/// subtype embeddings, plus a single-layer scoring head.
#[derive(Clone, Debug)]
pub struct TransformerNet {
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    sub: Option<ParamId>,
    emb_ln: (ParamId, ParamId),
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
    heads: usize,
}

fn head_width(config: &ModelConfig) -> usize {
    match config.strategy {
        FusionStrategy::ContextResponseAware => config.model_dim,
        _ => 2 * config.model_dim,
    }
}

impl TransformerNet {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &ModelConfig,
        vocab: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.model_dim;
        let emb = (3.0 / d as f64).sqrt();
        store.add("tf.tok", uniform(rng, &[vocab, d], emb), true)?;
        store.add("tf.pos", uniform(rng, &[config.max_seq_len, d], emb), true)?;
        store.add("tf.seg", uniform(rng, &[2, d], emb), true)?;
        if config.subtypes && config.strategy == FusionStrategy::ContextResponseAware {
            store.add("tf.sub", uniform(rng, &[3, d], emb), true)?;
        }
        let norm = |store: &mut ParamStore<T>, name: &str| -> Result<()> {
            store.add(&format!("{name}.g"), Tensor::filled(&[d], T::one()), true)?;
            store.add(&format!("{name}.b"), Tensor::zeros(&[d]), true)?;
            Ok(())
        };
        norm(store, "tf.emb_ln")?;
        for l in 0..config.layers {
            for m in ["q", "k", "v", "o"] {
                store.add(&format!("tf.{l}.w{m}"), glorot_matrix(rng, d, d), true)?;
                store.add(&format!("tf.{l}.b{m}"), Tensor::zeros(&[d]), true)?;
            }
            norm(store, &format!("tf.{l}.ln1"))?;
            store.add(&format!("tf.{l}.w1"), glorot_matrix(rng, d, config.ff_dim), true)?;
            store.add(&format!("tf.{l}.b1"), Tensor::zeros(&[config.ff_dim]), true)?;
            store.add(&format!("tf.{l}.w2"), glorot_matrix(rng, config.ff_dim, d), true)?;
            store.add(&format!("tf.{l}.b2"), Tensor::zeros(&[d]), true)?;
            norm(store, &format!("tf.{l}.ln2"))?;
        }
        let f = head_width(config);
        store.add("tf.head.w", uniform(rng, &[f], (6.0 / (f + 1) as f64).sqrt()), true)?;
        store.add("tf.head.b", Tensor::zeros(&[1]), true)?;
        Self::from_store(store, config)
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        let id = |n: &str| store.id(n).map_err(Error::from);
        let pair = |n: &str| -> Result<(ParamId, ParamId)> { Ok((id(&format!("{n}.g"))?, id(&format!("{n}.b"))?)) };
        let mut blocks = Vec::new();
        for l in 0..config.layers {
            let p = |n: &str| id(&format!("tf.{l}.{n}"));
            blocks.push(Block {
                wq: p("wq")?,
                bq: p("bq")?,
                wk: p("wk")?,
                bk: p("bk")?,
                wv: p("wv")?,
                bv: p("bv")?,
                wo: p("wo")?,
                bo: p("bo")?,
                ln1: pair(&format!("tf.{l}.ln1"))?,
                w1: p("w1")?,
                b1: p("b1")?,
                w2: p("w2")?,
                b2: p("b2")?,
                ln2: pair(&format!("tf.{l}.ln2"))?,
            });
        }
        if store.id(&format!("tf.{}.wq", config.layers)).is_ok() {
            return Err(Error::Mismatch("parameters hold more layers than configured".into()));
        }
        let want_sub = config.subtypes && config.strategy == FusionStrategy::ContextResponseAware;
        let sub = store.id("tf.sub").ok();
        if sub.is_some() != want_sub {
            return Err(Error::Mismatch("subtype table presence differs from the configuration".into()));
        }
        let net = Self {
            tok: id("tf.tok")?,
            pos: id("tf.pos")?,
            seg: id("tf.seg")?,
            sub,
            emb_ln: pair("tf.emb_ln")?,
            blocks,
            head_w: id("tf.head.w")?,
            head_b: id("tf.head.b")?,
            heads: config.heads,
        };
        let d = store.value(net.tok).dims2().1;
        if d != config.model_dim || store.value(net.pos).dims2().0 != config.max_seq_len {
            return Err(Error::Mismatch("embedding sizes differ from the configuration".into()));
        }
        if store.value(net.head_w).len() != head_width(config) {
            return Err(Error::Mismatch(format!("scoring head does not fit strategy {}", config.strategy)));
        }
        Ok(net)
    }

    fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        seq: &Arranged,
        dropout: f64,
        pass: &mut Pass,
    ) -> Result<Var> {
        let mask = vec![true; seq.len()];
        let subtypes = self.sub.map(|_| seq.subtypes.as_slice());
        let states = transformer_encode(tape, store, self, &seq.tokens, &seq.segments, subtypes, &mask, dropout, pass)?;
        Ok(tape.row(states, 0)?)
    }

    pub(crate) fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        config: &ModelConfig,
        example: &MatchingExample,
        candidates: &[usize],
        pass: &mut Pass,
    ) -> Result<Var> {
        if example.context.is_empty() && !example.config.ablate_context {
            return Err(Error::EmptyContext);
        }
        let persona: Vec<Vec<usize>> = example.persona.iter().map(|s| s.words.clone()).collect();
        let context: Vec<Vec<usize>> = example.context.iter().map(|s| s.words.clone()).collect();
        let budget = config.max_seq_len;
        let flat = |v: &[Vec<usize>]| -> Vec<usize> { v.concat() };
        let has_persona = !persona.is_empty();
        let d = config.model_dim;
        let (wh, bh) = (tape.param(store, self.head_w), tape.param(store, self.head_b));

        // Persona pipelines of NA and CA do not depend on the candidate.
        let shared = match config.strategy {
            FusionStrategy::NoneAware | FusionStrategy::ContextAware if has_persona => {
                let seq = if config.strategy == FusionStrategy::NoneAware {
                    let t = truncate_for_transformer(&persona, &[], &[], 2, budget)?;
                    arrange(&[(&flat(&t.persona), Subtype::Persona)], &[])
                } else {
                    let t = truncate_for_transformer(&persona, &context, &[], 3, budget)?;
                    arrange(&[(&flat(&t.persona), Subtype::Persona)], &[(&flat(&t.context), Subtype::Context)])
                };
                Some(self.encode(tape, store, &seq, config.dropout, pass)?)
            }
            _ => None,
        };

        let mut logits = Vec::with_capacity(candidates.len());
        for &k in candidates {
            let response = &example.candidates[k].words;
            let feature = match config.strategy {
                FusionStrategy::ContextResponseAware => {
                    let t = truncate_for_transformer(&persona, &context, response, 3, budget)?;
                    let seq = arrange(
                        &[(&flat(&t.persona), Subtype::Persona), (&flat(&t.context), Subtype::Context)],
                        &[(&t.response, Subtype::Response)],
                    );
                    self.encode(tape, store, &seq, config.dropout, pass)?
                }
                s => {
                    let t = truncate_for_transformer(&[], &context, response, 3, budget)?;
                    let seq = arrange(&[(&flat(&t.context), Subtype::Context)], &[(&t.response, Subtype::Response)]);
                    let matching = self.encode(tape, store, &seq, config.dropout, pass)?;
                    let persona_cls = match (s, shared) {
                        (_, Some(p)) => p,
                        (FusionStrategy::ResponseAware, None) if has_persona => {
                            let t = truncate_for_transformer(&persona, &[], response, 3, budget)?;
                            let seq = arrange(&[(&flat(&t.persona), Subtype::Persona)], &[(&t.response, Subtype::Response)]);
                            self.encode(tape, store, &seq, config.dropout, pass)?
                        }
                        _ => tape.constant(Tensor::zeros(&[d])),
                    };
                    tape.concat(&[matching, persona_cls])?
                }
            };
            let feature = pass.dropout(tape, feature, config.dropout)?;
            logits.push(tape.dot(feature, wh)?);
        }
        let stacked = if logits.len() == 1 {
            tape.reshape(logits[0], vec![1])?
        } else {
            let rows: Vec<Var> = logits.iter().map(|&l| tape.reshape(l, vec![1])).collect::<ndcore::Result<_>>()?;
            tape.concat(&rows)?
        };
        let b = tape.reshape(bh, vec![1, 1])?;
        let bias = tape.gather_rows(b, &vec![0; candidates.len()])?;
        let bias = tape.reshape(bias, vec![candidates.len()])?;
        Ok(tape.add(stacked, bias)?)
    }
}

/// Encodes one arranged sequence and returns all position states `[n, d]`.
/// `mask[i] == false` marks padding, which is never attended to.
#[allow(clippy::too_many_arguments)]
pub fn transformer_encode<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    net: &TransformerNet,
    tokens: &[usize],
    segments: &[usize],
    subtypes: Option<&[usize]>,
    mask: &[bool],
    dropout: f64,
    pass: &mut Pass,
) -> Result<Var> {
    let n = tokens.len();
    let max = store.value(net.pos).dims2().0;
    if n > max {
        return Err(Error::TooLong { len: n, max });
    }
    if segments.len() != n || mask.len() != n || subtypes.is_some_and(|s| s.len() != n) {
        return Err(Error::Mismatch("token, segment, subtype and mask lengths differ".into()));
    }
    let tok = tape.param(store, net.tok);
    let pos = tape.param(store, net.pos);
    let seg = tape.param(store, net.seg);
    let mut x = tape.gather_rows(tok, tokens)?;
    let positions: Vec<usize> = (0..n).collect();
    let p = tape.gather_rows(pos, &positions)?;
    x = tape.add(x, p)?;
    let s = tape.gather_rows(seg, segments)?;
    x = tape.add(x, s)?;
    if let (Some(ids), Some(table)) = (subtypes, net.sub) {
        let table = tape.param(store, table);
        let s = tape.gather_rows(table, ids)?;
        x = tape.add(x, s)?;
    }
    let (g, b) = (tape.param(store, net.emb_ln.0), tape.param(store, net.emb_ln.1));
    x = tape.layer_norm(x, g, b, LN_EPS)?;
    x = pass.dropout(tape, x, dropout)?;
    let d = tape.shape(x)[1];
    let dk = d / net.heads;
    let scale = lit::<T>(1.0 / (dk as f64).sqrt());
    for blk in &net.blocks {
        let proj = |tape: &mut Tape<T>, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            let y = tape.matmul(x, w)?;
            Ok(tape.add_row(y, b)?)
        };
        let q = proj(tape, x, blk.wq, blk.bq)?;
        let k = proj(tape, x, blk.wk, blk.bk)?;
        let v = proj(tape, x, blk.wv, blk.bv)?;
        let mut heads = Vec::with_capacity(net.heads);
        for h in 0..net.heads {
            let qh = tape.slice_cols(q, h * dk, (h + 1) * dk)?;
            let kh = tape.slice_cols(k, h * dk, (h + 1) * dk)?;
            let vh = tape.slice_cols(v, h * dk, (h + 1) * dk)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax_rows(scores, Some(mask))?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat(&heads)? };
        let attn = proj(tape, joined, blk.wo, blk.bo)?;
        let attn = pass.dropout(tape, attn, dropout)?;
        let res = tape.add(x, attn)?;
        let (g, b) = (tape.param(store, blk.ln1.0), tape.param(store, blk.ln1.1));
        x = tape.layer_norm(res, g, b, LN_EPS)?;
        let hdn = proj(tape, x, blk.w1, blk.b1)?;
        let hdn = tape.gelu(hdn)?;
        let ff = proj(tape, hdn, blk.w2, blk.b2)?;
        let ff = pass.dropout(tape, ff, dropout)?;
        let res = tape.add(x, ff)?;
        let (g, b) = (tape.param(store, blk.ln2.0), tape.param(store, blk.ln2.1));
        x = tape.layer_norm(res, g, b, LN_EPS)?;
    }
    Ok(x)
}
