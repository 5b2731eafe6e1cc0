use crate::error::{Error, Result};

/// Candidate indices by descending score; equal scores keep index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// 1-based rank of candidate `label` under [`ranking`].
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x.total_cmp(&s).is_gt() || (x.total_cmp(&s).is_eq() && j < label))
        .count()
}

fn check(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Mismatch("metric over an empty rank list".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Mismatch("ranks start at 1".into()));
    }
    Ok(())
}

/// Fraction of ranks at most `k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    check(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(hits_at_k(&[1, 1], 1).unwrap(), 1.0);
        assert_eq!(hits_at_k(&[1, 3, 2, 1], 1).unwrap(), 0.5);
        assert_eq!(hits_at_k(&[20, 7, 1], 20).unwrap(), 1.0);
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(mrr(&[1, 2, 4]).unwrap(), 1.75 / 3.0);
        assert!(hits_at_k(&[], 1).is_err());
        assert!(mrr(&[]).is_err());
        assert!(mrr(&[0]).is_err());
    }

    #[test]
    fn ties_break_towards_lower_index() {
        let flat = [0.5; 5];
        for label in 0..5 {
            assert_eq!(rank_of(&flat, label), label + 1);
        }
        assert_eq!(ranking(&[0.1, 0.9, 0.9, 0.3]), vec![1, 2, 3, 0]);
        assert_eq!(rank_of(&[0.1, 0.9, 0.9, 0.3], 2), 2);
    }
}
