use ndcore::{Scalar, Tape, Var};

use crate::error::{Error, Result};

/// Output of the global cross-attention between a concatenated context and
/// one response.
#[derive(Clone, Copy, Debug)]
pub struct Interaction {
    /// `e_ik = c_i . r_k`, `[l_c, l_r]`.
    pub alignment: Var,
    /// Response-weighted summary for every context position, `[l_c, d]`.
    pub context_aligned: Var,
    /// Context-weighted summary for every response position, `[l_r, d]`.
    pub response_aligned: Var,
    /// `[x; a; x - a; x * a]` for the context, `[l_c, 4d]`.
    pub context: Var,
    /// Same for the response, `[l_r, 4d]`.
    pub response: Var,
}

pub(crate) fn enhance<T: Scalar>(tape: &mut Tape<T>, x: Var, aligned: Var) -> Result<Var> {
    let diff = tape.sub(x, aligned)?;
    let prod = tape.mul(x, aligned)?;
    Ok(tape.concat(&[x, aligned, diff, prod])?)
}

pub fn imn_interact<T: Scalar>(tape: &mut Tape<T>, context: Var, response: Var) -> Result<Interaction> {
    let (cs, rs) = (tape.shape(context).to_vec(), tape.shape(response).to_vec());
    if cs.len() != 2 || rs.len() != 2 || cs[1] != rs[1] {
        return Err(Error::Mismatch(format!("interaction between {cs:?} and {rs:?}")));
    }
    if cs[0] == 0 || rs[0] == 0 {
        return Err(ndcore::NdError::EmptySequence.into());
    }
    let rt = tape.transpose(response)?;
    let alignment = tape.matmul(context, rt)?;
    let to_response = tape.softmax_rows(alignment, None)?;
    let context_aligned = tape.matmul(to_response, response)?;
    let et = tape.transpose(alignment)?;
    let to_context = tape.softmax_rows(et, None)?;
    let response_aligned = tape.matmul(to_context, context)?;
    Ok(Interaction {
        alignment,
        context_aligned,
        response_aligned,
        context: enhance(tape, context, context_aligned)?,
        response: enhance(tape, response, response_aligned)?,
    })
}
