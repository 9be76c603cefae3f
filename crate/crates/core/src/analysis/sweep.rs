//! Confidence-selection experiments: how noisy is the most confident slice
//! of the pseudo-labels under each training condition.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SeedLexicon};
use crate::corrupt::{random_delete_epoch, seed_delete, CorruptionSpec};
use crate::error::{Error, Result};
use crate::model::{ConfidenceScore, EvaluateOn, TrainConfig};
use crate::rng;
use crate::select::{noise_curve, select_top};
use crate::selftrain::train_with;
use crate::weaklabel::{noise_stats, synthesize_flip_noise, Entry, PseudoLabeledDataset};

/// Written as `name` or `name:p`, e.g. `random-deletion:0.9`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Condition {
    Vanilla,
    SeedDeletion,
    RandomDeletion { p: f64 },
    /// Pseudo-labels replaced by a random flip with the same transition counts.
    FlipNoise,
    /// Random deletion that never removes seeds of the pseudo-label.
    RandomDeletionKeepSeeds { p: f64 },
    /// Seed deletion followed by random deletion of what is left.
    SeedThenRandomDeletion { p: f64 },
}

impl Condition {
    fn ratio(self) -> Option<f64> {
        match self {
            Condition::RandomDeletion { p }
            | Condition::RandomDeletionKeepSeeds { p }
            | Condition::SeedThenRandomDeletion { p } => Some(p),
            _ => None,
        }
    }

    fn needs_lexicon(self) -> bool {
        matches!(
            self,
            Condition::SeedDeletion | Condition::RandomDeletionKeepSeeds { .. } | Condition::SeedThenRandomDeletion { .. }
        )
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Vanilla => f.write_str("vanilla"),
            Condition::SeedDeletion => f.write_str("seed-deletion"),
            Condition::RandomDeletion { p } => write!(f, "random-deletion:{p}"),
            Condition::FlipNoise => f.write_str("flip-noise"),
            Condition::RandomDeletionKeepSeeds { p } => write!(f, "random-deletion-keep-seeds:{p}"),
            Condition::SeedThenRandomDeletion { p } => write!(f, "seed-then-random-deletion:{p}"),
        }
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, ratio) = match s.split_once(':') {
            Some((n, r)) => {
                let p: f64 = r
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad deletion ratio in `{s}`")))?;
                (n, Some(p))
            }
            None => (s, None),
        };
        let p = ratio.unwrap_or(0.9);
        let c = match name {
            "vanilla" => Condition::Vanilla,
            "seed-deletion" => Condition::SeedDeletion,
            "flip-noise" => Condition::FlipNoise,
            "random-deletion" => Condition::RandomDeletion { p },
            "random-deletion-keep-seeds" => Condition::RandomDeletionKeepSeeds { p },
            "seed-then-random-deletion" => Condition::SeedThenRandomDeletion { p },
            _ => return Err(Error::InvalidConfig(format!("unknown condition `{s}`"))),
        };
        if ratio.is_some() && c.ratio().is_none() {
            return Err(Error::InvalidConfig(format!("condition `{name}` takes no ratio")));
        }
        if let Some(p) = c.ratio() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("deletion ratio {p} outside [0, 1]")));
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub selection_fraction: f64,
    pub evaluate_on: EvaluateOn,
    pub resample_per_epoch: bool,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            selection_fraction: 0.5,
            evaluate_on: EvaluateOn::Original,
            resample_per_epoch: false,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

fn without_positions(doc: &Document, drop: impl Fn(&str) -> bool) -> Document {
    Document {
        id: doc.id.clone(),
        raw_text: String::new(),
        tokens: doc.tokens.iter().filter(|t| !drop(t)).cloned().collect(),
        gold_label: doc.gold_label,
    }
}

/// Training-time tokens for one entry under `condition`.
fn transformed(
    condition: Condition,
    doc: &Document,
    entry: &Entry,
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
    epoch: Option<usize>,
) -> Vec<String> {
    match condition {
        Condition::Vanilla | Condition::FlipNoise => doc.tokens.clone(),
        Condition::SeedDeletion => seed_delete(doc, entry.label, lexicon.expect("lexicon checked")).tokens,
        Condition::RandomDeletion { .. } => random_delete_epoch(doc, spec, epoch).tokens,
        Condition::RandomDeletionKeepSeeds { .. } => {
            let lex = lexicon.expect("lexicon checked");
            let rest = without_positions(doc, |t| lex.is_seed_of(t, entry.label));
            let mut tokens = random_delete_epoch(&rest, spec, epoch).tokens;
            tokens.extend(doc.tokens.iter().filter(|t| lex.is_seed_of(t, entry.label)).cloned());
            tokens
        }
        Condition::SeedThenRandomDeletion { .. } => {
            let lex = lexicon.expect("lexicon checked");
            let rest = without_positions(doc, |t| lex.is_seed_of(t, entry.label));
            random_delete_epoch(&rest, spec, epoch).tokens
        }
    }
}

/// Train a confidence model under `condition` and score every pseudo-label.
/// Returns the dataset the scores refer to: the flipped one for
/// [`Condition::FlipNoise`], otherwise `dataset` itself.
pub fn condition_scores(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    condition: Condition,
    config: &ExperimentConfig,
) -> Result<(PseudoLabeledDataset, Vec<ConfidenceScore>)> {
    config.train.validate()?;
    let corpus = dataset.corpus();
    let aligned = match (condition.needs_lexicon(), lexicon) {
        (true, None) => return Err(Error::InvalidConfig(format!("condition `{condition}` requires a seed lexicon"))),
        (true, Some(l)) => Some(l.aligned_to(corpus.classes())?),
        (false, _) => None,
    };
    let dataset = match condition {
        Condition::FlipNoise => synthesize_flip_noise(dataset, rng::derive_seed(config.seed, &["flip".into()]))?,
        _ => dataset.clone(),
    };
    let spec = CorruptionSpec::random_deletion(
        condition.ratio().unwrap_or(0.0),
        rng::derive_seed(config.seed, &["corrupt".into()]),
    );
    let train = TrainConfig {
        seed: rng::derive_seed(config.seed, &["train".into()]),
        ..config.train
    };
    let resample = config.resample_per_epoch && condition.ratio().is_some();
    let model = train_with(corpus, dataset.entries(), &train, resample, |doc, e, epoch| {
        Ok(transformed(condition, doc, e, aligned.as_ref(), &spec, epoch))
    })?;
    let scores = dataset
        .entries()
        .par_iter()
        .map(|e| {
            let doc = corpus.document(e.doc);
            let posterior = match config.evaluate_on {
                EvaluateOn::Original => model.predict_proba(&doc.tokens)?,
                EvaluateOn::Corrupted => model.predict_proba(&transformed(condition, doc, e, aligned.as_ref(), &spec, None))?,
            };
            Ok(ConfidenceScore {
                id: doc.id.clone(),
                pseudo_label: e.label,
                probability: posterior[e.label],
                posterior,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionOutcome {
    pub condition: String,
    pub overall_noise_rate: f64,
    pub selected: usize,
    pub selected_noise_rate: f64,
}

/// Noise rate among the top `config.selection_fraction` by confidence.
pub fn noise_at_fraction(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    condition: Condition,
    config: &ExperimentConfig,
) -> Result<ConditionOutcome> {
    let missing = dataset.missing_gold();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    let (ds, scores) = condition_scores(dataset, lexicon, condition, config)?;
    let report = select_top(&ds, &scores, config.selection_fraction)?;
    Ok(ConditionOutcome {
        condition: condition.to_string(),
        overall_noise_rate: noise_stats(&ds)?.overall_noise_rate(),
        selected: report.selected_entries.len(),
        selected_noise_rate: report.noise_rate_in_selection.unwrap_or(0.0),
    })
}

/// Noise rate at each selection fraction for one trained confidence model.
pub fn condition_noise_curve(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    condition: Condition,
    config: &ExperimentConfig,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let (ds, scores) = condition_scores(dataset, lexicon, condition, config)?;
    noise_curve(&ds, &scores, fractions)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeletionRow {
    pub p: f64,
    pub random_deletion: f64,
    pub keep_seeds: Option<f64>,
    pub seed_then_random: Option<f64>,
}

/// Noise at the selection fraction as a function of the deletion ratio.
/// The ablation columns are filled when `ablations` is set.
pub fn deletion_ratio_sweep(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    ratios: &[f64],
    ablations: bool,
    config: &ExperimentConfig,
) -> Result<Vec<DeletionRow>> {
    ratios
        .iter()
        .map(|&p| {
            let at = |c| noise_at_fraction(dataset, lexicon, c, config).map(|o| o.selected_noise_rate);
            let (keep_seeds, seed_then_random) = if ablations {
                (
                    Some(at(Condition::RandomDeletionKeepSeeds { p })?),
                    Some(at(Condition::SeedThenRandomDeletion { p })?),
                )
            } else {
                (None, None)
            };
            Ok(DeletionRow {
                p,
                random_deletion: at(Condition::RandomDeletion { p })?,
                keep_seeds,
                seed_then_random,
            })
        })
        .collect()
}

pub fn write_deletion_csv(path: impl AsRef<Path>, rows: &[DeletionRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["p", "random_deletion", "keep_seeds", "seed_then_random"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            format!("{}", r.p),
            format!("{:.6}", r.random_deletion),
            opt(r.keep_seeds),
            opt(r.seed_then_random),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_outcomes_csv(path: impl AsRef<Path>, rows: &[ConditionOutcome]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["condition", "overall_noise_rate", "selected", "selected_noise_rate"])?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            format!("{:.6}", r.overall_noise_rate),
            r.selected.to_string(),
            format!("{:.6}", r.selected_noise_rate),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
