mod chat;
mod manifest;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pfuse::corpus::{
    assemble_corpus, build_vocab, load_corpus, merge_revised, parse_parlai, to_jsonl, CorpusFormat, DialogueRecord,
    EmbeddingSource, EmbeddingSpec, Limits, LoadOptions, MatchingExample, Signal, SynthSpec, Vocab,
};
use pfuse::harness::{
    corpus_hash, evaluate, parse_entries, Aggregate, Entry, ModelCheckpoint, ReportMeta, TrainConfig,
};
use pfuse::Model64;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "pfuse", version, about = "Persona-fused response selection: data, training, evaluation and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert numbered Persona-Chat style text into JSONL records.
    PrepareData(PrepareArgs),
    /// Generate a synthetic corpus with train/valid/test splits.
    Synth(SynthArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Rank every candidate set of a corpus and write per-example ranks plus aggregates.
    Evaluate(EvaluateArgs),
    /// Print the ranked candidates of individual examples.
    Rank(RankArgs),
    /// Interactive demo: rank a candidate pool after every typed utterance.
    Chat(ChatArgs),
    /// Tabulate aggregate JSON files by model and persona configuration.
    Report(ReportArgs),
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long, value_parser = ["hre", "imn", "transformer"])]
    family: Option<String>,
    #[arg(long, value_parser = ["na", "ca", "ra", "cra"])]
    strategy: Option<String>,
    #[arg(long, value_parser = ["self", "partner", "none"])]
    persona_side: Option<String>,
    #[arg(long, value_parser = ["original", "revised"])]
    persona_version: Option<String>,
    /// Withhold the dialogue context (persona-response matching only).
    #[arg(long)]
    ablate_context: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluation worker threads; 1 (the default) is strict serial mode.
    #[arg(long)]
    threads: Option<usize>,
    /// Any further configuration assignment, e.g. `--set max_epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ModelFlags {
    fn entries(&self) -> Result<Vec<Entry>> {
        let mut out = Vec::new();
        let named = [
            ("family", self.family.clone()),
            ("strategy", self.strategy.clone()),
            ("persona_side", self.persona_side.clone()),
            ("persona_version", self.persona_version.clone()),
            ("ablate_context", self.ablate_context.then(|| "true".to_string())),
            ("seed", self.seed.map(|s| s.to_string())),
            ("threads", self.threads.map(|t| t.to_string())),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                out.push(Entry::flag(k, v));
            }
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            out.push(Entry::flag(k.trim(), v.trim()));
        }
        Ok(out)
    }

    /// Resolves file then flags, recording both in the manifest.
    fn resolve(&self, manifest: &mut RunManifest) -> Result<TrainConfig> {
        let flags = self.entries()?;
        let mut entries = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            entries = parse_entries(&text)?;
        }
        manifest.config_file_entries = entries.iter().map(|e| format!("{}={}", e.key, e.value)).collect();
        manifest.flag_entries = flags.iter().map(|e| format!("{}={}", e.key, e.value)).collect();
        entries.extend(flags);
        let config = TrainConfig::resolve(&entries)?;
        manifest.config = Some(config.to_text());
        manifest.config_hash = Some(config.hash());
        manifest.seed = Some(config.seed);
        Ok(config)
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// Text file with original personas.
    #[arg(long)]
    input: PathBuf,
    /// The same dialogues with revised personas.
    #[arg(long)]
    revised: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "persona", value_parser = ["persona", "context", "both"])]
    signal: String,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    valid: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    #[arg(long, default_value_t = 40)]
    topics: usize,
    #[arg(long, default_value_t = 8)]
    turns: usize,
    #[arg(long, default_value_t = 20)]
    candidates: usize,
    /// Negatives per set that repeat a context topic absent from the responder's persona.
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CorpusFlags {
    /// Input format of every corpus file.
    #[arg(long, default_value = "jsonl", value_parser = ["jsonl", "parlai-text"])]
    format: String,
    /// Required candidate-set size; 0 accepts any size.
    #[arg(long, default_value_t = 20)]
    candidates: usize,
}

impl CorpusFlags {
    fn load(&self, path: &Path) -> Result<Vec<DialogueRecord>> {
        let options = LoadOptions {
            format: self.format.parse::<CorpusFormat>()?,
            candidates: (self.candidates > 0).then_some(self.candidates),
        };
        Ok(load_corpus(path, options)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    corpus: CorpusFlags,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Whitespace text file of frozen word vectors (token v1 ... vd) for the fixed block.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    corpus: CorpusFlags,
    /// Checkpoint to evaluate; without it an untrained model is initialized from the seed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    corpus: CorpusFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Example ids (`dialogue:turn`); all examples when omitted.
    #[arg(long)]
    example: Vec<String>,
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Candidate responses, one per line.
    #[arg(long)]
    candidates: PathBuf,
    /// The bot's persona, one profile sentence per line.
    #[arg(long)]
    persona: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    top: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Aggregate JSON files written by `evaluate`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for report.tsv, report.txt and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: PathBuf, text: &str, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    manifest.outputs.push(path);
    Ok(())
}

fn prepare_data(args: &PrepareArgs) -> Result<()> {
    let mut manifest = RunManifest::new("prepare-data");
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let parsed = parse_parlai(&read(&args.input)?);
    for (line, reason) in &parsed.skipped {
        eprintln!("{}:{line}: skipped: {reason}", args.input.display());
    }
    let mut records = parsed.records;
    if let Some(path) = &args.revised {
        let revised = parse_parlai(&read(path)?);
        for (line, reason) in &revised.skipped {
            eprintln!("{}:{line}: skipped: {reason}", path.display());
        }
        merge_revised(&mut records, &revised.records)?;
    }
    create_dir(&args.out)?;
    manifest.corpus_hashes.insert("corpus".into(), corpus_hash(&records));
    write(args.out.join("corpus.jsonl"), &to_jsonl(&records), &mut manifest)?;
    eprintln!("{} dialogues, {} skipped lines", records.len(), parsed.skipped.len());
    manifest.finish(&args.out)?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut manifest = RunManifest::new("synth");
    let mut spec = SynthSpec::new(0, args.topics, args.signal.parse::<Signal>()?, args.seed);
    spec.turns = args.turns;
    spec.candidates = args.candidates;
    spec.context_distractors = args.distractors;
    let splits = pfuse::harness::Splits::synthetic(&spec, [args.train, args.valid, args.test])?;
    create_dir(&args.out)?;
    manifest.seed = Some(args.seed);
    for (name, records) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        manifest.corpus_hashes.insert(name.into(), corpus_hash(records));
        write(args.out.join(format!("{name}.jsonl")), &to_jsonl(records), &mut manifest)?;
    }
    manifest.finish(&args.out)?;
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train");
    let config = args.model.resolve(&mut manifest)?;
    let train = args.corpus.load(&args.train)?;
    let valid = args.corpus.load(&args.valid)?;
    manifest.corpus_hashes.insert("train".into(), corpus_hash(&train));
    manifest.corpus_hashes.insert("valid".into(), corpus_hash(&valid));
    let fixed = match &args.embeddings {
        Some(path) => EmbeddingSpec {
            source: EmbeddingSource::File(path.clone()),
            dim: config.fixed_dim,
        },
        None => EmbeddingSpec::random(config.fixed_dim, config.seed),
    };
    let vocab = build_vocab(&train, &fixed, &EmbeddingSpec::random(config.trained_dim, config.seed.wrapping_add(1)))?;
    let limits = Limits::default();
    let train_x = assemble_corpus(&train, config.persona, &limits, &vocab).examples;
    let valid_x = assemble_corpus(&valid, config.persona, &limits, &vocab).examples;
    if train_x.is_empty() || valid_x.is_empty() {
        bail!("training and validation corpora must each yield at least one example");
    }
    eprintln!(
        "{}-{} ({}): {} training, {} validation examples, vocabulary {}",
        config.model.family,
        config.model.strategy,
        config.persona,
        train_x.len(),
        valid_x.len(),
        vocab.len()
    );
    create_dir(&args.out)?;
    let outcome = match pfuse::harness::train::<f64>(&config, &vocab, &train_x, &valid_x) {
        Ok(o) => o,
        Err(pfuse::Error::Diverged { step, checkpoint }) => {
            let path = args.out.join("diverged.ckpt");
            checkpoint.save(&path)?;
            bail!("training diverged at step {step}; last good parameters saved to {}", path.display());
        }
        Err(e) => return Err(e.into()),
    };
    for e in &outcome.log.epochs {
        eprintln!(
            "epoch {:>3}  loss {:.4}  valid hits@1 {:.3}  MRR {:.3}{}",
            e.epoch + 1,
            e.mean_loss,
            e.valid_hits1,
            e.valid_mrr,
            if e.selected { "  *" } else { "" }
        );
    }
    let ckpt = args.out.join("model.ckpt");
    outcome.checkpoint.save(&ckpt)?;
    manifest.outputs.push(ckpt);
    write(args.out.join("train_log.tsv"), &outcome.log.to_text(), &mut manifest)?;
    write(args.out.join("config.txt"), &config.to_text(), &mut manifest)?;
    manifest.finish(&args.out)?;
    Ok(())
}

/// Loads a checkpoint and reconciles it with any model flags given.
fn load_model(path: &Path, flags: Option<&ModelFlags>, manifest: &mut RunManifest) -> Result<(Model64, TrainConfig, Vocab)> {
    let ckpt = ModelCheckpoint::load(path)?;
    let mut config = ckpt.config()?;
    if let Some(flags) = flags {
        if let Some(f) = &flags.family {
            if f != &config.model.family.to_string() {
                bail!("checkpoint {} holds a {} model, not {f}", path.display(), config.model.family);
            }
        }
        if let Some(s) = &flags.strategy {
            if s != config.model.strategy.code() {
                bail!("checkpoint {} uses strategy {}, not {s}", path.display(), config.model.strategy);
            }
        }
        // Persona configuration and threads may differ from training.
        let mut entries = parse_entries(&config.to_text())?;
        entries.extend(flags.entries()?);
        manifest.flag_entries = flags.entries()?.iter().map(|e| format!("{}={}", e.key, e.value)).collect();
        config = TrainConfig::resolve(&entries)?;
    }
    manifest.config = Some(config.to_text());
    manifest.config_hash = Some(config.hash());
    manifest.seed = Some(config.seed);
    let model = ckpt.to_model()?;
    Ok((model, config, ckpt.vocab()?))
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut manifest = RunManifest::new("evaluate");
    let records = args.corpus.load(&args.data)?;
    let (model, config, vocab) = match &args.checkpoint {
        Some(path) => load_model(path, Some(&args.model), &mut manifest)?,
        None => {
            let config = args.model.resolve(&mut manifest)?;
            let vocab = build_vocab(
                &records,
                &EmbeddingSpec::random(config.fixed_dim, config.seed),
                &EmbeddingSpec::random(config.trained_dim, config.seed.wrapping_add(1)),
            )?;
            let model = Model64::init(config.model.clone(), &vocab, config.seed)?;
            (model, config, vocab)
        }
    };
    let hash = corpus_hash(&records);
    manifest.corpus_hashes.insert("data".into(), hash.clone());
    let examples = assemble_corpus(&records, config.persona, &Limits::default(), &vocab).examples;
    if examples.is_empty() {
        bail!("{} yields no examples", args.data.display());
    }
    let meta = ReportMeta {
        config_hash: config.hash(),
        corpus_hash: hash,
        seed: config.seed,
        ..ReportMeta::default()
    };
    let report = evaluate(&model, &examples, config.persona, meta, config.threads)?;
    create_dir(&args.out)?;
    write(args.out.join("ranks.tsv"), &report.to_tsv(), &mut manifest)?;
    let json = report.aggregate_json()?;
    write(args.out.join("aggregate.json"), &(json.clone() + "\n"), &mut manifest)?;
    writeln!(std::io::stdout(), "{json}")?;
    manifest.finish(&args.out)?;
    Ok(())
}

/// Example id -> (record, turn), mirroring assembly's `record:turn` ids.
fn locate<'a>(records: &'a [DialogueRecord], id: &str) -> Option<(&'a DialogueRecord, usize)> {
    let (r, t) = id.split_once(':')?;
    Some((records.get(r.parse::<usize>().ok()?)?, t.parse().ok()?))
}

fn rank(args: &RankArgs) -> Result<()> {
    let mut manifest = RunManifest::new("rank");
    let (model, config, vocab) = load_model(&args.checkpoint, None, &mut manifest)?;
    let records = args.corpus.load(&args.data)?;
    let examples: Vec<MatchingExample> = assemble_corpus(&records, config.persona, &Limits::default(), &vocab)
        .examples
        .into_iter()
        .filter(|e| args.example.is_empty() || args.example.contains(&e.id))
        .collect();
    if examples.is_empty() {
        bail!("no matching examples in {}", args.data.display());
    }
    let scores = pfuse::harness::score_examples(&model, &examples, args.threads.unwrap_or(config.threads))?;
    let mut out = std::io::stdout().lock();
    for (ex, s) in examples.iter().zip(&scores) {
        let (record, turn) = locate(&records, &ex.id).context("example id does not address a record")?;
        let (texts, _) = record.candidate_set(turn).context("example without candidates")?;
        writeln!(out, "# {}  context: {}", ex.id, record.turns[..turn].last().map_or("", |t| t.text.as_str()))?;
        for (r, &k) in pfuse::harness::ranking(s).iter().take(args.top).enumerate() {
            let mark = if k == ex.label { "*" } else { " " };
            writeln!(out, "{:>3} {mark} {:>9.4}  {}", r + 1, s[k], texts[k])?;
        }
    }
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<()> {
    let mut aggregates = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let a: Aggregate = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        aggregates.push(a);
    }
    let table = report::build(&aggregates)?;
    let text = table.to_text();
    write!(std::io::stdout(), "{text}")?;
    if let Some(dir) = &args.out {
        let mut manifest = RunManifest::new("report");
        create_dir(dir)?;
        write(dir.join("report.tsv"), &table.to_tsv(), &mut manifest)?;
        write(dir.join("report.txt"), &text, &mut manifest)?;
        manifest.finish(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData(a) => prepare_data(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Rank(a) => rank(&a),
        Command::Chat(a) => {
            let mut manifest = RunManifest::new("chat");
            let (model, config, vocab) = load_model(&a.checkpoint, None, &mut manifest)?;
            chat::run(&model, &config, &vocab, &a.candidates, a.persona.as_deref(), a.top)
        }
        Command::Report(a) => report_cmd(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
