use std::str::FromStr;

use rand::Rng;

use super::assemble::MatchingExample;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NegativeMode {
    /// All candidates, one multi-way label.
    Static19,
    /// The true response plus one negative redrawn every epoch.
    Dynamic1,
}

impl FromStr for NegativeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static19" => Ok(Self::Static19),
            "dynamic1" => Ok(Self::Dynamic1),
            _ => Err(Error::Config(format!("negative mode `{s}` not one of static19, dynamic1"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainingInstance {
    Listwise { candidates: usize, label: usize },
    Binary { candidate: usize, positive: bool },
}

/// Derives the per-epoch seed from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    use rand::RngCore;
    rng::indexed_substream(seed, "epoch", epoch as u64).next_u64()
}

/// Training instances for one example. `position` identifies the example
/// within the epoch so that each draw has its own substream.
pub fn sample_negatives(example: &MatchingExample, mode: NegativeMode, epoch_seed: u64, position: usize) -> Vec<TrainingInstance> {
    let n = example.candidates.len();
    match mode {
        NegativeMode::Static19 => vec![TrainingInstance::Listwise {
            candidates: n,
            label: example.label,
        }],
        NegativeMode::Dynamic1 => {
            let mut out = vec![TrainingInstance::Binary {
                candidate: example.label,
                positive: true,
            }];
            if n > 1 {
                let mut r = rng::indexed_substream(epoch_seed, "negatives", position as u64);
                let k = r.gen_range(0..n - 1);
                let negative = if k >= example.label { k + 1 } else { k };
                out.push(TrainingInstance::Binary {
                    candidate: negative,
                    positive: false,
                });
            }
            out
        }
    }
}
