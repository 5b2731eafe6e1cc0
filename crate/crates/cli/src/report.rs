//! Comparison tables over aggregate JSON files: one row per model
//! (family and strategy), one hits@1/MRR column pair per persona configuration.

use std::collections::BTreeMap;
use std::fmt::Write;

use anyhow::{bail, Result};
use pfuse::harness::Aggregate;

const FAMILY_ORDER: [&str; 3] = ["hre", "imn", "transformer"];
const STRATEGY_ORDER: [&str; 4] = ["na", "ca", "ra", "cra"];

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub personas: Vec<String>,
    /// Model label and, per persona column, the mean (hits@1, MRR) over runs.
    pub rows: Vec<(String, Vec<Option<(f64, f64)>>)>,
}

fn order(list: &[&str], x: &str) -> usize {
    list.iter().position(|&y| y == x).unwrap_or(list.len())
}

fn label(a: &Aggregate) -> String {
    let family = match a.family.as_str() {
        "transformer" => "Transformer".to_string(),
        f => f.to_uppercase(),
    };
    format!("{family}-{}", a.strategy.to_uppercase())
}

/// Runs that share a model and persona configuration (different seeds) are averaged.
pub fn build(aggregates: &[Aggregate]) -> Result<Table> {
    if aggregates.is_empty() {
        bail!("no aggregate files given");
    }
    let mut personas: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize, String), BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for a in aggregates {
        if a.family.is_empty() || a.strategy.is_empty() {
            bail!("aggregate with config hash {} does not name its family and strategy", a.config_hash);
        }
        let persona = if a.persona.is_empty() { "unspecified".to_string() } else { a.persona.clone() };
        if !personas.contains(&persona) {
            personas.push(persona.clone());
        }
        let key = (order(&FAMILY_ORDER, &a.family), order(&STRATEGY_ORDER, &a.strategy), label(a));
        cells.entry(key).or_default().entry(persona).or_default().push((a.hits1, a.mrr));
    }
    let rows = cells
        .into_iter()
        .map(|((_, _, name), by_persona)| {
            let values = personas
                .iter()
                .map(|p| {
                    by_persona.get(p).map(|runs| {
                        let n = runs.len() as f64;
                        (runs.iter().map(|r| r.0).sum::<f64>() / n, runs.iter().map(|r| r.1).sum::<f64>() / n)
                    })
                })
                .collect();
            (name, values)
        })
        .collect();
    Ok(Table { personas, rows })
}

impl Table {
    /// Tab-separated, full precision; missing cells are empty.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model");
        for p in &self.personas {
            let _ = write!(out, "\t{p} hits@1\t{p} MRR");
        }
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(name);
            for v in values {
                match v {
                    Some((h, m)) => {
                        let _ = write!(out, "\t{h}\t{m}");
                    }
                    None => out.push_str("\t\t"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned columns in percent with one decimal.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Model".to_string()];
        for p in &self.personas {
            header.push(format!("{p} hits@1"));
            header.push("MRR".into());
        }
        let mut lines = vec![header];
        for (name, values) in &self.rows {
            let mut line = vec![name.clone()];
            for v in values {
                match v {
                    Some((h, m)) => {
                        line.push(format!("{:.1}", h * 100.0));
                        line.push(format!("{:.1}", m * 100.0));
                    }
                    None => line.extend(["-".to_string(), "-".to_string()]),
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(family: &str, strategy: &str, persona: &str, hits1: f64, mrr: f64) -> Aggregate {
        Aggregate {
            hits1,
            hits5: 1.0,
            mrr,
            n: 10,
            config_hash: String::new(),
            corpus_hash: String::new(),
            seed: 0,
            family: family.into(),
            strategy: strategy.into(),
            persona: persona.into(),
        }
    }

    #[test]
    fn rows_follow_family_then_strategy_order_and_seeds_average() {
        let t = build(&[
            agg("imn", "na", "self-original", 0.5, 0.6),
            agg("hre", "cra", "self-original", 0.2, 0.3),
            agg("hre", "na", "partner-original", 0.1, 0.2),
            agg("hre", "cra", "self-original", 0.4, 0.5),
        ])
        .unwrap();
        let names: Vec<&str> = t.rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(names, ["HRE-NA", "HRE-CRA", "IMN-NA"]);
        assert_eq!(t.personas, ["self-original", "partner-original"]);
        let (h, m) = t.rows[1].1[0].unwrap();
        assert!((h - 0.3).abs() < 1e-12 && (m - 0.4).abs() < 1e-12);
        assert_eq!(t.rows[0].1[0], None);
        assert!(t.to_text().contains("HRE-NA"));
    }
}
