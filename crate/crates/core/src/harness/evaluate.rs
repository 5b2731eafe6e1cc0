use std::fmt::Write as _;

use ndcore::Scalar;
use serde::{Deserialize, Serialize};

use super::metrics::{hits_at_k, mrr, rank_of, ranking};
use crate::corpus::{MatchingExample, PersonaConfig};
use crate::error::{Error, Result};
use crate::matchers::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    /// 1-based rank of the true response.
    pub rank: usize,
    pub score_true: f64,
    /// Candidate indices, best first.
    pub order: Vec<usize>,
}

/// Identifies what produced a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub corpus_hash: String,
    pub seed: u64,
    pub family: String,
    pub strategy: String,
    pub persona: String,
}

/// Aggregate metrics as written to the JSON summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub hits1: f64,
    pub hits5: f64,
    pub mrr: f64,
    pub n: usize,
    pub config_hash: String,
    #[serde(default)]
    pub corpus_hash: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub family: String,
    #[serde(default)]
    pub strategy: String,
    #[serde(default)]
    pub persona: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub entries: Vec<RankEntry>,
    pub meta: ReportMeta,
}

impl RankingReport {
    /// Ranks every score row against its label.
    pub fn from_scores(ids: &[String], scores: &[Vec<f64>], labels: &[usize], meta: ReportMeta) -> Result<Self> {
        if ids.len() != scores.len() || ids.len() != labels.len() {
            return Err(Error::Mismatch(format!(
                "{} ids, {} score rows, {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        let mut entries = Vec::with_capacity(ids.len());
        for ((id, row), &label) in ids.iter().zip(scores).zip(labels) {
            if label >= row.len() {
                return Err(Error::Mismatch(format!("label {label} of {} candidates in `{id}`", row.len())));
            }
            entries.push(RankEntry {
                id: id.clone(),
                rank: rank_of(row, label),
                score_true: row[label],
                order: ranking(row),
            });
        }
        Ok(Self { entries, meta })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.rank).collect()
    }

    pub fn hits_at(&self, k: usize) -> Result<f64> {
        hits_at_k(&self.ranks(), k)
    }

    pub fn mrr(&self) -> Result<f64> {
        mrr(&self.ranks())
    }

    pub fn aggregate(&self) -> Result<Aggregate> {
        Ok(Aggregate {
            hits1: self.hits_at(1)?,
            hits5: self.hits_at(5)?,
            mrr: self.mrr()?,
            n: self.entries.len(),
            config_hash: self.meta.config_hash.clone(),
            corpus_hash: self.meta.corpus_hash.clone(),
            seed: self.meta.seed,
            family: self.meta.family.clone(),
            strategy: self.meta.strategy.clone(),
            persona: self.meta.persona.clone(),
        })
    }

    pub fn aggregate_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregate()?)?)
    }

    /// Per-example rows: `example_id  rank  score_true  hits1`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("example_id\trank\tscore_true\thits1\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.id, e.rank, e.score_true, u8::from(e.rank == 1));
        }
        out
    }
}

/// Candidate scores for each example. Examples are split into contiguous
/// chunks across `threads` workers and reassembled in input order, so the
/// result does not depend on the thread count.
pub fn score_examples<T: Scalar>(model: &Model<T>, examples: &[MatchingExample], threads: usize) -> Result<Vec<Vec<f64>>> {
    let threads = threads.max(1).min(examples.len().max(1));
    if threads == 1 {
        return examples.iter().map(|e| model.scores(e)).collect();
    }
    let chunk = examples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|e| model.scores(e)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scoring thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Scores and ranks `examples`, which must all carry `persona`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    examples: &[MatchingExample],
    persona: PersonaConfig,
    mut meta: ReportMeta,
    threads: usize,
) -> Result<RankingReport> {
    if let Some(e) = examples.iter().find(|e| e.config != persona) {
        return Err(Error::Mismatch(format!(
            "example `{}` was assembled for persona configuration {}, not {persona}",
            e.id, e.config
        )));
    }
    let scores = score_examples(model, examples, threads)?;
    let ids: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    meta.family = model.config.family.to_string();
    meta.strategy = model.config.strategy.to_string();
    meta.persona = persona.to_string();
    RankingReport::from_scores(&ids, &scores, &labels, meta)
}
