//! Response scorers: the hierarchical recurrent encoder, the interactive
//! matching network and a small transformer encoder, each combined with one
//! of the persona fusion strategies.

mod arrange;
mod imn;
mod recurrent;
mod transformer;

use std::fmt;
use std::str::FromStr;

use ndcore::{ParamStore, Scalar, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub use arrange::{arrange, truncate_for_transformer, Arranged, Subtype, Truncated};
pub use imn::{imn_interact, Interaction};
pub use recurrent::RecurrentNet;
pub use transformer::{transformer_encode, TransformerNet};

use crate::corpus::{MatchingExample, TrainingInstance, Vocab};
use crate::error::{Error, Result};
use crate::fusion::{FusionStrategy, FusionWeights};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Hre,
    Imn,
    Transformer,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Hre, Family::Imn, Family::Transformer];

    pub fn is_recurrent(self) -> bool {
        !matches!(self, Family::Transformer)
    }

    pub fn code(self) -> &'static str {
        match self {
            Family::Hre => "hre",
            Family::Imn => "imn",
            Family::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hre" => Ok(Family::Hre),
            "imn" => Ok(Family::Imn),
            "transformer" => Ok(Family::Transformer),
            _ => Err(Error::Config(format!("family `{s}` not one of hre, imn, transformer"))),
        }
    }
}

/// Architecture hyperparameters. Recurrent and transformer fields coexist so
/// one flat configuration describes any family.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    pub strategy: FusionStrategy,
    pub dropout: f64,
    pub char_dim: usize,
    pub char_widths: Vec<usize>,
    pub char_filters: usize,
    pub hidden: usize,
    pub context_hidden: usize,
    pub mlp_hidden: usize,
    /// IMN only: with `false` the cross-attention block is bypassed.
    pub interaction: bool,
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    /// Add persona/context/response subtype embeddings (single-stream CRA).
    pub subtypes: bool,
}

impl ModelConfig {
    /// Full sizes: 150-dim character CNN, 200-unit LSTMs, 256-unit MLP;
    /// a base-size encoder for the transformer family.
    pub fn full(family: Family, strategy: FusionStrategy) -> Self {
        Self {
            family,
            strategy,
            dropout: 0.2,
            char_dim: 50,
            char_widths: vec![3, 4, 5],
            char_filters: 50,
            hidden: 200,
            context_hidden: 200,
            mlp_hidden: 256,
            interaction: true,
            layers: 12,
            heads: 12,
            model_dim: 768,
            ff_dim: 3072,
            max_seq_len: 320,
            subtypes: true,
        }
    }

    /// Small sizes that train on one CPU core in seconds to minutes.
    pub fn desk(family: Family, strategy: FusionStrategy) -> Self {
        Self {
            family,
            strategy,
            dropout: 0.2,
            char_dim: 8,
            char_widths: vec![3, 4, 5],
            char_filters: 4,
            hidden: 16,
            context_hidden: 16,
            mlp_hidden: 32,
            interaction: true,
            layers: 2,
            heads: 2,
            model_dim: 32,
            ff_dim: 64,
            max_seq_len: 128,
            subtypes: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.family.is_recurrent() {
            if self.hidden == 0 || self.context_hidden == 0 || self.mlp_hidden == 0 {
                return bad("recurrent sizes must be positive".into());
            }
            if self.char_widths.iter().any(|&w| w == 0) || self.char_dim == 0 {
                return bad("character CNN widths and dimension must be positive".into());
            }
        } else {
            if self.heads == 0 || self.model_dim % self.heads != 0 {
                return bad(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
            }
            if self.layers == 0 || self.ff_dim == 0 || self.max_seq_len < 4 {
                return bad("transformer sizes must be positive and max_seq_len at least 4".into());
            }
        }
        Ok(())
    }
}

/// Forward-pass mode. Training passes carry the dropout generator.
pub struct Pass<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Pass<'a> {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn dropout<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(r) => Ok(tape.dropout(x, rate, r, true)?),
            None => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Recurrent(RecurrentNet),
    Transformer(TransformerNet),
}

/// A configured scorer together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from the `init` substream of `seed`.
    pub fn init(config: ModelConfig, vocab: &Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::substream(seed, "init");
        let mut store = ParamStore::new();
        let net = if config.family.is_recurrent() {
            let vectors = Tensor::from_f64(&[vocab.len(), vocab.vector_dim()], vocab.vectors())?;
            Net::Recurrent(RecurrentNet::init(&mut store, &config, vectors, vocab.char_count(), &mut rng)?)
        } else {
            Net::Transformer(TransformerNet::init(&mut store, &config, vocab.len(), &mut rng)?)
        };
        Ok(Self { config, store, net })
    }

    /// Rebinds a loaded parameter store to the architecture in `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let net = if config.family.is_recurrent() {
            Net::Recurrent(RecurrentNet::from_store(&store, &config)?)
        } else {
            Net::Transformer(TransformerNet::from_store(&store, &config)?)
        };
        Ok(Self { config, store, net })
    }

    /// Logits for the listed candidates, `[candidates.len()]`.
    pub fn logits(&self, tape: &mut Tape<T>, example: &MatchingExample, candidates: &[usize], pass: &mut Pass) -> Result<Var> {
        if let Some(&bad) = candidates.iter().find(|&&c| c >= example.candidates.len()) {
            return Err(Error::Mismatch(format!("candidate {bad} of {}", example.candidates.len())));
        }
        match &self.net {
            Net::Recurrent(n) => Ok(n.forward(tape, &self.store, &self.config, example, candidates, pass)?.0),
            Net::Transformer(n) => n.logits(tape, &self.store, &self.config, example, candidates, pass),
        }
    }

    pub fn loss(&self, tape: &mut Tape<T>, example: &MatchingExample, instance: &TrainingInstance, pass: &mut Pass) -> Result<Var> {
        match *instance {
            TrainingInstance::Listwise { candidates, label } => {
                let all: Vec<usize> = (0..candidates).collect();
                let logits = self.logits(tape, example, &all, pass)?;
                Ok(tape.cross_entropy(logits, label)?)
            }
            TrainingInstance::Binary { candidate, positive } => {
                let logit = self.logits(tape, example, &[candidate], pass)?;
                Ok(tape.bce_with_logits(logit, positive)?)
            }
        }
    }

    /// Ranking scores for every candidate in evaluation mode: raw logits for
    /// the recurrent families, sigmoid probabilities for the transformer.
    pub fn scores(&self, example: &MatchingExample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let all: Vec<usize> = (0..example.candidates.len()).collect();
        let logits = self.logits(&mut tape, example, &all, &mut Pass::eval())?;
        let values = tape.value(logits).to_f64_vec();
        Ok(if self.config.family.is_recurrent() {
            values
        } else {
            values.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
        })
    }

    /// Fusion attention per candidate (recurrent families; empty otherwise or
    /// when the example has no persona).
    pub fn fusion_weights(&self, example: &MatchingExample) -> Result<Vec<FusionWeights>> {
        match &self.net {
            Net::Recurrent(n) => {
                let mut tape = Tape::new();
                let all: Vec<usize> = (0..example.candidates.len()).collect();
                let (_, fused) = n.forward(&mut tape, &self.store, &self.config, example, &all, &mut Pass::eval())?;
                Ok(fused.iter().map(|f| FusionWeights::read(&tape, f, self.config.strategy)).collect())
            }
            Net::Transformer(_) => Ok(Vec::new()),
        }
    }
}

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
