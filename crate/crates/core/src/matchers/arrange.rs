//! Token layouts for the transformer family and their length budgeting.

use crate::corpus::{CLS, SEP};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subtype {
    Persona = 0,
    Context = 1,
    Response = 2,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Arranged {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub subtypes: Vec<usize>,
}

impl Arranged {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn push(&mut self, token: usize, segment: usize, subtype: Subtype) {
        self.tokens.push(token);
        self.segments.push(segment);
        self.subtypes.push(subtype as usize);
    }
}

fn first_nonempty(spans: &[(&[usize], Subtype)]) -> Option<Subtype> {
    spans.iter().find(|(t, _)| !t.is_empty()).map(|&(_, s)| s)
}

/// `[CLS] a... [SEP]` or `[CLS] a... [SEP] b... [SEP]`. Specials take the
/// subtype of the span that follows them; a closing `[SEP]` takes the subtype
/// of the span it closes.
pub fn arrange(a: &[(&[usize], Subtype)], b: &[(&[usize], Subtype)]) -> Arranged {
    let mut out = Arranged::default();
    let last = |spans: &[(&[usize], Subtype)]| spans.last().map(|&(_, s)| s);
    let a_first = first_nonempty(a).or(last(a)).unwrap_or(Subtype::Context);
    out.push(CLS, 0, a_first);
    for &(tokens, s) in a {
        tokens.iter().for_each(|&t| out.push(t, 0, s));
    }
    let a_close = if b.is_empty() {
        last(a).unwrap_or(a_first)
    } else {
        first_nonempty(b).or(last(b)).unwrap_or(Subtype::Response)
    };
    out.push(SEP, 0, a_close);
    if !b.is_empty() {
        for &(tokens, s) in b {
            tokens.iter().for_each(|&t| out.push(t, 1, s));
        }
        out.push(SEP, 1, last(b).unwrap_or(Subtype::Response));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Truncated {
    pub persona: Vec<Vec<usize>>,
    pub context: Vec<Vec<usize>>,
    pub response: Vec<usize>,
}

/// Fits persona, context and response into `budget` tokens alongside
/// `specials` special tokens: oldest context utterances go first, then
/// persona tokens from the end of the last profile backwards, then the
/// response tail. At least one response token is always kept.
pub fn truncate_for_transformer(
    persona: &[Vec<usize>],
    context: &[Vec<usize>],
    response: &[usize],
    specials: usize,
    budget: usize,
) -> Result<Truncated> {
    let needed = specials + response.len().min(1);
    if budget < needed {
        return Err(Error::BudgetTooSmall { budget, needed });
    }
    let mut t = Truncated {
        persona: persona.to_vec(),
        context: context.to_vec(),
        response: response.to_vec(),
    };
    let total = |t: &Truncated| {
        specials + t.response.len() + t.persona.iter().map(Vec::len).sum::<usize>() + t.context.iter().map(Vec::len).sum::<usize>()
    };
    let mut excess = total(&t).saturating_sub(budget);
    while excess > 0 && !t.context.is_empty() {
        excess = excess.saturating_sub(t.context.remove(0).len());
    }
    while excess > 0 {
        let Some(p) = t.persona.last_mut() else { break };
        let cut = excess.min(p.len());
        p.truncate(p.len() - cut);
        excess -= cut;
        if p.is_empty() {
            t.persona.pop();
        }
    }
    if excess > 0 {
        let keep = t.response.len() - excess;
        t.response.truncate(keep);
    }
    debug_assert!(total(&t) <= budget);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_subtypes() {
        let (p, c, r) = (vec![10, 11], vec![20], vec![30, 31]);
        let a = arrange(&[(&p, Subtype::Persona), (&c, Subtype::Context)], &[(&r, Subtype::Response)]);
        assert_eq!(a.tokens, vec![CLS, 10, 11, 20, SEP, 30, 31, SEP]);
        assert_eq!(a.segments, vec![0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(a.subtypes, vec![0, 0, 0, 1, 2, 2, 2, 2]);

        let empty: Vec<usize> = vec![];
        let a = arrange(&[(&empty, Subtype::Persona), (&c, Subtype::Context)], &[(&r, Subtype::Response)]);
        assert_eq!(a.subtypes, vec![1, 1, 2, 2, 2, 2]);

        let single = arrange(&[(&p, Subtype::Persona)], &[]);
        assert_eq!(single.tokens, vec![CLS, 10, 11, SEP]);
        assert_eq!(single.segments, vec![0; 4]);
    }

    #[test]
    fn truncation_order() {
        let persona = vec![vec![1; 4], vec![2; 4]];
        let context = vec![vec![3; 5], vec![4; 5]];
        let response = vec![5; 6];
        let same = truncate_for_transformer(&persona, &context, &response, 3, 100).unwrap();
        assert_eq!(same.context, context);

        let t = truncate_for_transformer(&persona, &context, &response, 3, 3 + 6 + 8 + 5).unwrap();
        assert_eq!(t.context, vec![vec![4; 5]]);
        assert_eq!(t.persona, persona);

        let t = truncate_for_transformer(&persona, &context, &response, 3, 3 + 6 + 5).unwrap();
        assert!(t.context.is_empty());
        assert_eq!(t.persona, vec![vec![1; 4], vec![2; 1]]);

        let t = truncate_for_transformer(&persona, &context, &response, 3, 5).unwrap();
        assert!(t.persona.is_empty());
        assert_eq!(t.response, vec![5; 2]);

        assert!(matches!(
            truncate_for_transformer(&persona, &context, &response, 3, 3),
            Err(Error::BudgetTooSmall { .. })
        ));
    }
}
