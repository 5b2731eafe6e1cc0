use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::{NegativeMode, PersonaConfig, PersonaSide, PersonaVersion};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::matchers::{Family, ModelConfig};

/// Size preset the model fields start from before overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(Error::Config(format!("preset `{s}` not one of desk, full"))),
        }
    }
}

impl Preset {
    fn code(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub persona: PersonaConfig,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative decay applied every `lr_decay_steps` updates; 1 disables it.
    pub lr_decay: f64,
    pub lr_decay_steps: u64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Stop as soon as validation hits@1 reaches this value (0 disables).
    pub target_hits1: f64,
    pub seed: u64,
    pub threads: usize,
    /// Dimension of the fixed and trained random word vectors used when no
    /// embedding file is given.
    pub fixed_dim: usize,
    pub trained_dim: usize,
}

/// One `key=value` assignment and where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based line in the config file; `None` for command-line flags.
    pub line: Option<usize>,
}

impl Entry {
    pub fn flag(key: &str, value: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            value: value.into(),
            line: None,
        }
    }

    fn origin(&self) -> String {
        match self.line {
            Some(l) => format!("line {l}"),
            None => "command line".into(),
        }
    }
}

/// Every accepted key, in canonical output order.
pub const KEYS: &[&str] = &[
    "family",
    "strategy",
    "preset",
    "persona_side",
    "persona_version",
    "ablate_context",
    "batch_size",
    "lr",
    "lr_decay",
    "lr_decay_steps",
    "max_epochs",
    "patience",
    "target_hits1",
    "seed",
    "threads",
    "fixed_dim",
    "trained_dim",
    "dropout",
    "char_dim",
    "char_widths",
    "char_filters",
    "hidden",
    "context_hidden",
    "mlp_hidden",
    "interaction",
    "layers",
    "heads",
    "model_dim",
    "ff_dim",
    "max_seq_len",
    "subtypes",
];

/// Splits `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        out.push(Entry {
            key: k.trim().to_string(),
            value: v.trim().to_string(),
            line: Some(i + 1),
        });
    }
    Ok(out)
}

fn parse<V: FromStr>(e: &Entry, what: &str) -> Result<V> {
    e.value
        .parse()
        .map_err(|_| Error::Config(format!("key `{}` ({}): expected {what}, got `{}`", e.key, e.origin(), e.value)))
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{}` ({}): expected true or false, got `{}`",
            e.key,
            e.origin(),
            e.value
        ))),
    }
}

fn with_origin<V>(e: &Entry, r: Result<V>) -> Result<V> {
    r.map_err(|err| match err {
        Error::Config(m) => Error::Config(format!("key `{}` ({}): {m}", e.key, e.origin())),
        other => other,
    })
}

impl TrainConfig {
    /// Documented defaults for a family: listwise recurrent training with
    /// batch 16, lr 1e-3 decayed by 0.96 every 5000 steps and 10 epochs; the
    /// transformer uses batch 12, lr 2e-5 without decay and 19 epochs.
    pub fn defaults(family: Family, strategy: FusionStrategy, preset: Preset) -> Self {
        let model = match preset {
            Preset::Desk => ModelConfig::desk(family, strategy),
            Preset::Full => ModelConfig::full(family, strategy),
        };
        let recurrent = family.is_recurrent();
        let (fixed_dim, trained_dim) = match preset {
            Preset::Desk => (24, 8),
            Preset::Full => (300, 100),
        };
        Self {
            preset,
            model,
            persona: PersonaConfig::default(),
            batch_size: if recurrent { 16 } else { 12 },
            lr: if recurrent { 1e-3 } else { 2e-5 },
            lr_decay: if recurrent { 0.96 } else { 1.0 },
            lr_decay_steps: 5000,
            max_epochs: if recurrent { 10 } else { 19 },
            patience: 3,
            target_hits1: 0.0,
            seed: 0,
            threads: 1,
            fixed_dim,
            trained_dim,
        }
    }

    /// Recurrent families train listwise over all candidates; the transformer
    /// trains on one positive and one freshly drawn negative per example.
    pub fn negative_mode(&self) -> NegativeMode {
        if self.model.family.is_recurrent() {
            NegativeMode::Static19
        } else {
            NegativeMode::Dynamic1
        }
    }

    /// Applies assignments in order on top of the defaults selected by the
    /// last `family`, `strategy` and `preset` entries.
    pub fn resolve(entries: &[Entry]) -> Result<Self> {
        let last = |k: &str| entries.iter().rev().find(|e| e.key == k);
        let family = match last("family") {
            Some(e) => with_origin(e, e.value.parse())?,
            None => Family::Hre,
        };
        let strategy = match last("strategy") {
            Some(e) => with_origin(e, e.value.parse())?,
            None => FusionStrategy::NoneAware,
        };
        let preset = match last("preset") {
            Some(e) => with_origin(e, e.value.parse())?,
            None => Preset::Desk,
        };
        let mut c = Self::defaults(family, strategy, preset);
        for e in entries {
            c.apply(e)?;
        }
        with_origin(&Entry::flag("config", ""), c.validate())?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::resolve(&parse_entries(text)?)
    }

    /// Reads a config file and applies `overrides` after it.
    pub fn load(path: &Path, overrides: &[Entry]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = parse_entries(&text)?;
        entries.extend_from_slice(overrides);
        Self::resolve(&entries)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let m = &mut self.model;
        match e.key.as_str() {
            "family" => m.family = with_origin(e, e.value.parse())?,
            "strategy" => m.strategy = with_origin(e, e.value.parse())?,
            "preset" => self.preset = with_origin(e, e.value.parse())?,
            "persona_side" => self.persona.side = with_origin(e, e.value.parse::<PersonaSide>())?,
            "persona_version" => self.persona.version = with_origin(e, e.value.parse::<PersonaVersion>())?,
            "ablate_context" => self.persona.ablate_context = parse_bool(e)?,
            "batch_size" => self.batch_size = parse(e, "a positive integer")?,
            "lr" => self.lr = parse(e, "a number")?,
            "lr_decay" => self.lr_decay = parse(e, "a number")?,
            "lr_decay_steps" => self.lr_decay_steps = parse(e, "a positive integer")?,
            "max_epochs" => self.max_epochs = parse(e, "a positive integer")?,
            "patience" => self.patience = parse(e, "an integer")?,
            "target_hits1" => self.target_hits1 = parse(e, "a number")?,
            "seed" => self.seed = parse(e, "an unsigned integer")?,
            "threads" => self.threads = parse(e, "a positive integer")?,
            "fixed_dim" => self.fixed_dim = parse(e, "an integer")?,
            "trained_dim" => self.trained_dim = parse(e, "an integer")?,
            "dropout" => m.dropout = parse(e, "a number")?,
            "char_dim" => m.char_dim = parse(e, "a positive integer")?,
            "char_widths" => {
                m.char_widths = e
                    .value
                    .split(',')
                    .map(|w| w.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        Error::Config(format!(
                            "key `char_widths` ({}): expected comma-separated integers, got `{}`",
                            e.origin(),
                            e.value
                        ))
                    })?
            }
            "char_filters" => m.char_filters = parse(e, "a positive integer")?,
            "hidden" => m.hidden = parse(e, "a positive integer")?,
            "context_hidden" => m.context_hidden = parse(e, "a positive integer")?,
            "mlp_hidden" => m.mlp_hidden = parse(e, "a positive integer")?,
            "interaction" => m.interaction = parse_bool(e)?,
            "layers" => m.layers = parse(e, "a positive integer")?,
            "heads" => m.heads = parse(e, "a positive integer")?,
            "model_dim" => m.model_dim = parse(e, "a positive integer")?,
            "ff_dim" => m.ff_dim = parse(e, "a positive integer")?,
            "max_seq_len" => m.max_seq_len = parse(e, "a positive integer")?,
            "subtypes" => m.subtypes = parse_bool(e)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key `{other}` ({}); accepted keys: {}",
                    e.origin(),
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.threads == 0 || self.lr_decay_steps == 0 {
            return Err(Error::Config("batch_size, max_epochs, threads and lr_decay_steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr {} must be positive and lr_decay {} in (0, 1]", self.lr, self.lr_decay)));
        }
        if self.model.family.is_recurrent() && self.fixed_dim + self.trained_dim == 0 {
            return Err(Error::Config("word vectors need a positive dimension".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` text: every key, fixed order, shortest
    /// round-tripping number formatting.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let widths: Vec<String> = m.char_widths.iter().map(|w| w.to_string()).collect();
        let values: Vec<String> = vec![
            m.family.to_string(),
            m.strategy.to_string(),
            self.preset.code().into(),
            self.persona.side.to_string(),
            self.persona.version.to_string(),
            self.persona.ablate_context.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.lr_decay.to_string(),
            self.lr_decay_steps.to_string(),
            self.max_epochs.to_string(),
            self.patience.to_string(),
            self.target_hits1.to_string(),
            self.seed.to_string(),
            self.threads.to_string(),
            self.fixed_dim.to_string(),
            self.trained_dim.to_string(),
            m.dropout.to_string(),
            m.char_dim.to_string(),
            widths.join(","),
            m.char_filters.to_string(),
            m.hidden.to_string(),
            m.context_hidden.to_string(),
            m.mlp_hidden.to_string(),
            m.interaction.to_string(),
            m.layers.to_string(),
            m.heads.to_string(),
            m.model_dim.to_string(),
            m.ff_dim.to_string(),
            m.max_seq_len.to_string(),
            m.subtypes.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Hash of the settings that affect the trained model; `threads` is
    /// excluded because scoring is thread-count invariant.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("threads="))
            .map(|l| format!("{l}\n"))
            .collect();
        sha256_hex(text.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults_and_round_trips() {
        let c = TrainConfig::from_text("").unwrap();
        assert_eq!(c, TrainConfig::defaults(Family::Hre, FusionStrategy::NoneAware, Preset::Desk));
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        let t = TrainConfig::from_text("family=transformer\nstrategy=cra\n").unwrap();
        assert_eq!((t.batch_size, t.lr, t.max_epochs), (12, 2e-5, 19));
        assert_eq!(t.negative_mode(), NegativeMode::Dynamic1);
        assert_eq!(TrainConfig::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = TrainConfig::from_text("# c\nlr=fast\n").unwrap_err().to_string();
        assert!(e.contains("`lr`") && e.contains("line 2"), "{e}");
        let e = TrainConfig::from_text("colour=red").unwrap_err().to_string();
        assert!(e.contains("colour") && e.contains("line 1"), "{e}");
        let e = TrainConfig::from_text("strategy=xa").unwrap_err().to_string();
        assert!(e.contains("na, ca, ra, cra"), "{e}");
    }

    #[test]
    fn later_entries_win() {
        let mut entries = parse_entries("hidden=8\nseed=3\n").unwrap();
        entries.push(Entry::flag("seed", "9"));
        let c = TrainConfig::resolve(&entries).unwrap();
        assert_eq!((c.model.hidden, c.seed), (8, 9));
    }
}
