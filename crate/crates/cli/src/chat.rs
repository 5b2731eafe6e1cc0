//! Terminal demo: the loaded model picks a reply from a fixed candidate pool
//! after each user utterance. `/reset` clears the dialogue, `/quit` exits.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pfuse::corpus::{Limits, MatchingExample, Sentence, Vocab};
use pfuse::harness::{ranking, TrainConfig};
use pfuse::Model64;

fn lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn run(model: &Model64, config: &TrainConfig, vocab: &Vocab, candidates: &Path, persona: Option<&Path>, top: usize) -> Result<()> {
    let pool = lines(candidates)?;
    if pool.is_empty() {
        bail!("{} holds no candidates", candidates.display());
    }
    let limits = Limits::default();
    let lc = limits.chars_per_word;
    let encode = |s: &str, words: usize| Sentence::encode(s, vocab, words, lc);
    let profiles: Vec<Sentence> = match persona {
        Some(p) => lines(p)?.iter().filter_map(|s| encode(s, limits.words_per_profile)).take(limits.profiles).collect(),
        None => Vec::new(),
    };
    let cands: Vec<Sentence> = pool
        .iter()
        .map(|c| encode(c, limits.words_per_response).unwrap_or_else(Sentence::unknown))
        .collect();
    eprintln!(
        "{}-{} with {} persona lines and {} candidates; /reset clears the dialogue, /quit exits",
        config.model.family,
        config.model.strategy,
        profiles.len(),
        pool.len()
    );
    let mut context: Vec<Sentence> = Vec::new();
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            return Ok(());
        }
        match line.trim() {
            "/quit" => return Ok(()),
            "/reset" => {
                context.clear();
                continue;
            }
            _ => {}
        }
        let Some(utterance) = encode(&line, limits.words_per_utterance) else {
            continue;
        };
        context.push(utterance);
        let keep = context.len().saturating_sub(limits.utterances);
        context.drain(..keep);
        let example = MatchingExample {
            id: "chat".into(),
            context: context.clone(),
            persona: profiles.clone(),
            candidates: cands.clone(),
            label: 0,
            config: config.persona,
        };
        let scores = model.scores(&example)?;
        let order = ranking(&scores);
        for (r, &k) in order.iter().take(top.max(1)).enumerate() {
            if r == 0 {
                writeln!(out, "{}", pool[k])?;
            } else {
                eprintln!("   ({:.3}) {}", scores[k], pool[k]);
            }
        }
        context.push(cands[order[0]].clone());
    }
}
