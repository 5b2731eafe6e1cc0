//! Attention-weighted aggregation of profile embeddings into one persona
//! vector, under four conditioning strategies.

use std::fmt;
use std::str::FromStr;

use ndcore::{NdError, Scalar, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    NoneAware,
    ContextAware,
    ResponseAware,
    ContextResponseAware,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::NoneAware,
        FusionStrategy::ContextAware,
        FusionStrategy::ResponseAware,
        FusionStrategy::ContextResponseAware,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FusionStrategy::NoneAware => "na",
            FusionStrategy::ContextAware => "ca",
            FusionStrategy::ResponseAware => "ra",
            FusionStrategy::ContextResponseAware => "cra",
        }
    }

    /// Whether the fused persona differs per candidate response.
    pub fn per_response(self) -> bool {
        matches!(self, FusionStrategy::ResponseAware | FusionStrategy::ContextResponseAware)
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.code() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("strategy `{s}` not one of na, ca, ra, cra")))
    }
}

/// Tape handles of one fusion: raw scores, normalized weights and the fused
/// persona vector.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub persona: Var,
    pub alphas: Var,
    pub weights: Var,
}

/// Values of a fusion, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub strategy: FusionStrategy,
    pub alphas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FusionWeights {
    pub fn read<T: Scalar>(tape: &Tape<T>, fused: &Fused, strategy: FusionStrategy) -> Self {
        Self {
            strategy,
            alphas: tape.value(fused.alphas).to_f64_vec(),
            weights: tape.value(fused.weights).to_f64_vec(),
        }
    }

    /// `example_id \t strategy \t w1,w2,...`
    pub fn tsv_row(&self, example_id: &str) -> String {
        let w: Vec<String> = self.weights.iter().map(|w| format!("{w:.6}")).collect();
        format!("{example_id}\t{}\t{}", self.strategy, w.join(","))
    }
}

fn attend<T: Scalar>(tape: &mut Tape<T>, profiles: Var, valid: &[bool], alphas: Var) -> Result<Fused> {
    let weights = tape.masked_softmax(alphas, valid).map_err(|e| match e {
        NdError::EmptySupport => Error::EmptyPersona,
        e => e.into(),
    })?;
    let persona = tape.matmul(weights, profiles)?;
    Ok(Fused { persona, alphas, weights })
}

fn check_profiles<T: Scalar>(tape: &Tape<T>, profiles: Var, valid: &[bool]) -> Result<usize> {
    let shape = tape.shape(profiles);
    if shape.len() != 2 || shape[0] != valid.len() {
        return Err(Error::Mismatch(format!("profiles {shape:?} with {} mask entries", valid.len())));
    }
    Ok(shape[1])
}

fn check_query<T: Scalar>(tape: &Tape<T>, query: Var, dim: usize, what: &str) -> Result<()> {
    let shape = tape.shape(query);
    if shape != [dim] {
        return Err(Error::Mismatch(format!("{what} shape {shape:?}, profiles have width {dim}")));
    }
    Ok(())
}

/// `alpha_n = w . p_n + b` with learned `w` (`[d]`) and `b` (`[1]`).
pub fn fuse_none<T: Scalar>(tape: &mut Tape<T>, profiles: Var, valid: &[bool], w: Var, b: Var) -> Result<Fused> {
    let d = check_profiles(tape, profiles, valid)?;
    check_query(tape, w, d, "fusion weight")?;
    let scores = tape.matvec(profiles, w)?;
    let b = tape.reshape(b, vec![1, 1])?;
    let bias = tape.gather_rows(b, &vec![0; valid.len()])?;
    let bias = tape.reshape(bias, vec![valid.len()])?;
    let alphas = tape.add(scores, bias)?;
    attend(tape, profiles, valid, alphas)
}

/// `alpha_n = c . p_n`.
pub fn fuse_context<T: Scalar>(tape: &mut Tape<T>, profiles: Var, valid: &[bool], context: Var) -> Result<Fused> {
    let d = check_profiles(tape, profiles, valid)?;
    check_query(tape, context, d, "context embedding")?;
    let alphas = tape.matvec(profiles, context)?;
    attend(tape, profiles, valid, alphas)
}

/// `alpha_n = r . p_n`.
pub fn fuse_response<T: Scalar>(tape: &mut Tape<T>, profiles: Var, valid: &[bool], response: Var) -> Result<Fused> {
    let d = check_profiles(tape, profiles, valid)?;
    check_query(tape, response, d, "response embedding")?;
    let alphas = tape.matvec(profiles, response)?;
    attend(tape, profiles, valid, alphas)
}

/// `alpha_n = (W^T [c; r] + b) . p_n` with `W` of shape `[dc + dr, d]`.
pub fn fuse_context_response<T: Scalar>(
    tape: &mut Tape<T>,
    profiles: Var,
    valid: &[bool],
    context: Var,
    response: Var,
    w: Var,
    b: Var,
) -> Result<Fused> {
    let d = check_profiles(tape, profiles, valid)?;
    let joint = tape.concat(&[context, response])?;
    let n = tape.shape(joint)[0];
    if tape.shape(w) != [n, d] {
        return Err(Error::Mismatch(format!("projection {:?}, expected [{n}, {d}]", tape.shape(w))));
    }
    check_query(tape, b, d, "projection bias")?;
    let q = tape.matmul(joint, w)?;
    let q = tape.add(q, b)?;
    let alphas = tape.matvec(profiles, q)?;
    attend(tape, profiles, valid, alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndcore::{Tape64, Tensor64};

    fn profiles(tape: &mut Tape64, rows: &[[f64; 2]]) -> Var {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        tape.constant(Tensor64::matrix(rows.len(), 2, data).unwrap())
    }

    #[test]
    fn parses_strategy_codes() {
        assert_eq!("CRA".parse::<FusionStrategy>().unwrap(), FusionStrategy::ContextResponseAware);
        assert!("xa".parse::<FusionStrategy>().unwrap_err().to_string().contains("na, ca, ra, cra"));
    }

    #[test]
    fn empty_persona_is_reported() {
        let mut t = Tape64::new();
        let p = profiles(&mut t, &[[1.0, 0.0], [0.0, 1.0]]);
        let c = t.constant(Tensor64::vector(vec![1.0, 1.0]));
        assert!(matches!(fuse_context(&mut t, p, &[false, false], c), Err(Error::EmptyPersona)));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut t = Tape64::new();
        let p = profiles(&mut t, &[[1.0, 0.0]]);
        let c = t.constant(Tensor64::vector(vec![1.0, 1.0, 1.0]));
        assert!(matches!(fuse_response(&mut t, p, &[true], c), Err(Error::Mismatch(_))));
    }
}
