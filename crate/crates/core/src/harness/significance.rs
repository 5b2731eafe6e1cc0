use statrs::distribution::{ContinuousCDF, StudentsT};

use super::evaluate::RankingReport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Significance {
    pub n: usize,
    /// Mean of `a - b`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p_value: f64,
    /// The differences have zero variance: `p` is 1 when they are all zero
    /// and 0 otherwise, by convention rather than from the t distribution.
    pub degenerate: bool,
}

/// Paired two-sided t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<Significance> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("paired samples of sizes {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Mismatch("a paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var <= f64::EPSILON * mean.abs().max(1.0) * 1e-6 || var == 0.0 {
        let zero = d.iter().all(|&x| x == 0.0);
        return Ok(Significance {
            n,
            mean_diff: mean,
            t: if zero { 0.0 } else { mean.signum() * f64::INFINITY },
            df,
            p_value: if zero { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Mismatch(e.to_string()))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(Significance {
        n,
        mean_diff: mean,
        t,
        df,
        p_value,
        degenerate: false,
    })
}

/// Paired test over per-example reciprocal ranks of two reports on the same
/// examples (matched by id).
pub fn paired_significance(a: &RankingReport, b: &RankingReport) -> Result<Significance> {
    let (x, y) = aligned_reciprocal_ranks(a, b)?;
    paired_t_test(&x, &y)
}

pub fn aligned_reciprocal_ranks(a: &RankingReport, b: &RankingReport) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.entries.len() != b.entries.len() {
        return Err(Error::Mismatch(format!(
            "reports cover {} and {} examples",
            a.entries.len(),
            b.entries.len()
        )));
    }
    let mut by_id: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for e in &b.entries {
        if by_id.insert(&e.id, e.rank).is_some() {
            return Err(Error::Mismatch(format!("duplicate example id `{}`", e.id)));
        }
    }
    let mut x = Vec::with_capacity(a.entries.len());
    let mut y = Vec::with_capacity(a.entries.len());
    for e in &a.entries {
        let rb = by_id
            .get(e.id.as_str())
            .ok_or_else(|| Error::Mismatch(format!("example `{}` missing from the second report", e.id)))?;
        x.push(1.0 / e.rank as f64);
        y.push(1.0 / *rb as f64);
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_constant_differences() {
        let s = paired_t_test(&[0.5, 1.0, 0.25], &[0.5, 1.0, 0.25]).unwrap();
        assert_eq!((s.p_value, s.degenerate), (1.0, true));
        let s = paired_t_test(&[1.0; 4], &[0.5; 4]).unwrap();
        assert_eq!((s.p_value, s.degenerate), (0.0, true));
        assert!(s.mean_diff > 0.0);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }
}
