//! Training-data regimes: k-shot per service, uniform fractions, and
//! leave-one-out domain splits.
//!
//! Sampling is reproducible: selections are a pure function of the corpus
//! and the sampling spec. Each draw uses a ChaCha20 generator keyed by
//! `SHA-256(seed_le || scope)` where `scope` is the service name for
//! per-service draws and empty for whole-corpus draws, and picks without
//! replacement via a partial Fisher-Yates shuffle over the candidate list
//! sorted by dialogue id.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Speaker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SamplingMode {
    KShotPerService { k: usize },
    UniformFraction { fraction: f64 },
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    #[serde(flatten)]
    pub mode: SamplingMode,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn full() -> Self {
        SamplingSpec {
            mode: SamplingMode::Full,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SamplingMode::KShotPerService { k } if k < 1 => {
                Err(Error::Config("k-shot sampling requires k >= 1".into()))
            }
            SamplingMode::UniformFraction { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(Error::Config(format!(
                    "fraction must be in (0, 1], got {fraction}"
                )))
            }
            _ => Ok(()),
        }
    }
}

fn scoped_rng(seed: u64, scope: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(scope.as_bytes());
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

/// Picks `count` items without replacement via a partial Fisher-Yates
/// shuffle; the first `count` positions after shuffling are the sample.
fn sample_without_replacement<T: Clone>(
    items: &[T],
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<T> {
    let mut pool: Vec<T> = items.to_vec();
    let count = count.min(pool.len());
    for i in 0..count {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// The per-service k-shot selection: for every service, `min(k, available)`
/// dialogues that mention it, drawn without replacement.
pub fn kshot_selection(corpus: &Corpus, k: usize, seed: u64) -> BTreeMap<String, BTreeSet<String>> {
    let mut out = BTreeMap::new();
    for service in corpus.schemas.keys() {
        let mut candidates: Vec<String> = corpus
            .dialogues
            .iter()
            .filter(|d| d.mentions_service(service))
            .map(|d| d.dialogue_id.clone())
            .collect();
        candidates.sort();
        let mut rng = scoped_rng(seed, service);
        let picked = sample_without_replacement(&candidates, k, &mut rng);
        out.insert(service.clone(), picked.into_iter().collect());
    }
    out
}

/// Dialogue ids selected by a sampling spec, in sorted order.
pub fn select_dialogue_ids(corpus: &Corpus, spec: &SamplingSpec) -> Result<BTreeSet<String>> {
    spec.validate()?;
    match spec.mode {
        SamplingMode::Full => Ok(corpus
            .dialogues
            .iter()
            .map(|d| d.dialogue_id.clone())
            .collect()),
        SamplingMode::KShotPerService { k } => {
            let per_service = kshot_selection(corpus, k, spec.seed);
            Ok(per_service.into_values().flatten().collect())
        }
        SamplingMode::UniformFraction { fraction } => {
            let mut ids: Vec<String> = corpus
                .dialogues
                .iter()
                .map(|d| d.dialogue_id.clone())
                .collect();
            ids.sort();
            let count = (fraction * ids.len() as f64).ceil() as usize;
            let mut rng = scoped_rng(spec.seed, "");
            Ok(sample_without_replacement(&ids, count, &mut rng)
                .into_iter()
                .collect())
        }
    }
}

/// Restricts a corpus to a sampled subset of its dialogues. The k-shot mode
/// samples per service and de-duplicates the union by dialogue id; the
/// fraction mode samples uniformly over all dialogues.
pub fn sample_corpus(corpus: &Corpus, spec: &SamplingSpec) -> Result<Corpus> {
    let selected = select_dialogue_ids(corpus, spec)?;
    let dialogues = corpus
        .dialogues
        .iter()
        .filter(|d| selected.contains(&d.dialogue_id))
        .cloned()
        .collect();
    Corpus::new(corpus.split, corpus.schemas.clone(), dialogues)
}

/// A leave-one-out split: training data free of the holdout domain, and an
/// evaluation corpus whose frames are restricted to the holdout domain.
#[derive(Debug, Clone)]
pub struct LeaveOneOutSplit {
    pub holdout_domain: String,
    /// Training dialogues containing no frame of the holdout domain.
    pub train: Corpus,
    /// Evaluation dialogues that touch the holdout domain, with all other
    /// frames stripped so only holdout-domain turns are compiled and judged.
    /// Turn text is kept intact for context rendering.
    pub eval: Corpus,
}

/// Builds the leave-one-out split for one holdout domain.
///
/// Exclusion is by whole dialogue: a training dialogue mentioning the
/// holdout domain anywhere is dropped entirely.
pub fn leave_one_out(
    train: &Corpus,
    test: &Corpus,
    holdout_domain: &str,
) -> Result<LeaveOneOutSplit> {
    if !train.schemas.contains_key(holdout_domain) && !test.schemas.contains_key(holdout_domain) {
        return Err(Error::Lookup(format!(
            "holdout domain '{holdout_domain}' is not a known service"
        )));
    }

    let train_dialogues: Vec<_> = train
        .dialogues
        .iter()
        .filter(|d| !d.mentions_service(holdout_domain))
        .cloned()
        .collect();
    let train_corpus = Corpus::new(train.split, train.schemas.clone(), train_dialogues)?;

    let mut eval_dialogues = Vec::new();
    for dialogue in &test.dialogues {
        if !dialogue.mentions_service(holdout_domain) {
            continue;
        }
        let mut d = dialogue.clone();
        for turn in &mut d.turns {
            if turn.speaker == Speaker::User {
                turn.frames.retain(|f| f.service == holdout_domain);
            }
        }
        eval_dialogues.push(d);
    }
    let eval_corpus = Corpus::new(test.split, test.schemas.clone(), eval_dialogues)?;

    Ok(LeaveOneOutSplit {
        holdout_domain: holdout_domain.to_string(),
        train: train_corpus,
        eval: eval_corpus,
    })
}
