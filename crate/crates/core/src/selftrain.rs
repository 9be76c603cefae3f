//! End-to-end protocol: seed match, corrupt, train a confidence model,
//! select, then grow the labeled set by self-training on the unlabeled pool.

use std::borrow::Cow;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{f1_metrics, MetricsRecord};
use crate::corpus::{ClassId, Corpus, Document, SeedLexicon};
use crate::corrupt::{corrupt_document, CorruptionKind, CorruptionSpec};
use crate::error::{Error, Result};
use crate::model::{self, argmax, score_dataset, EvaluateOn, Example, LinearTextClassifier, TrainConfig};
use crate::rng;
use crate::select::{select_oracle, select_top, selection_count, SelectionReport};
use crate::weaklabel::{noise_stats, seed_match, Entry, Provenance, PseudoLabeledDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    /// Top fraction by confidence of a model trained on the corrupted set.
    #[default]
    Confidence,
    /// Only pseudo-labels that agree with gold (diagnostic upper bound).
    Oracle,
    /// Keep every pseudo-label.
    All,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(SelectionStrategy::Confidence),
            "oracle" => Ok(SelectionStrategy::Oracle),
            "all" => Ok(SelectionStrategy::All),
            other => Err(Error::InvalidConfig(format!("unknown selection strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub iterations: usize,
    /// Fraction of the unlabeled pool merged per iteration.
    pub merge_fraction: f64,
    pub selection_fraction: f64,
    pub selection: SelectionStrategy,
    /// Its `rng_seed` is replaced by a stream derived from `seed`.
    pub corruption: CorruptionSpec,
    pub evaluate_on: EvaluateOn,
    pub train: TrainConfig,
    /// Root of every random stream in the run.
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            iterations: 5,
            merge_fraction: 0.1,
            selection_fraction: 0.5,
            selection: SelectionStrategy::Confidence,
            corruption: CorruptionSpec::random_deletion(0.9, 0),
            evaluate_on: EvaluateOn::Original,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.merge_fraction) {
            return Err(Error::InvalidConfig(format!("merge fraction {} outside [0, 1]", self.merge_fraction)));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection fraction {} outside (0, 1]",
                self.selection_fraction
            )));
        }
        self.corruption.validate()?;
        self.train.validate()
    }

    fn train_config(&self, stage: &str, index: usize) -> TrainConfig {
        TrainConfig {
            seed: rng::derive_seed(self.seed, &["train".into(), stage.into(), index.into()]),
            ..self.train
        }
    }

    fn corruption_spec(&self) -> CorruptionSpec {
        CorruptionSpec {
            rng_seed: rng::derive_seed(self.seed, &["corrupt".into()]),
            ..self.corruption
        }
    }
}

/// Tokens to train on for one labeled entry. Seed deletion only touches
/// labels produced by the seed rule; random deletion touches everything.
fn training_tokens<'a>(
    doc: &'a Document,
    entry: &Entry,
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
    epoch: Option<usize>,
) -> Result<Cow<'a, [String]>> {
    let applies = match spec.kind {
        CorruptionKind::None => false,
        CorruptionKind::SeedDeletion => entry.provenance == Provenance::SeedMatch,
        CorruptionKind::RandomDeletion => true,
    };
    if !applies {
        return Ok(Cow::Borrowed(&doc.tokens));
    }
    Ok(Cow::Owned(corrupt_document(doc, entry.label, lexicon, spec, epoch)?.tokens))
}

/// Train on `entries` of `corpus` using a per-entry token transform.
/// `transform(doc, entry, epoch)` receives `Some(epoch)` only when
/// `resample_per_epoch` is set.
pub fn train_with<F>(
    corpus: &Corpus,
    entries: &[Entry],
    config: &TrainConfig,
    resample_per_epoch: bool,
    transform: F,
) -> Result<LinearTextClassifier>
where
    F: Fn(&Document, &Entry, Option<usize>) -> Result<Vec<String>> + Sync,
{
    let build = |epoch: Option<usize>| -> Result<Vec<Example>> {
        entries
            .par_iter()
            .map(|e| {
                let tokens = transform(corpus.document(e.doc), e, epoch)?;
                Ok(Example::new(&tokens, e.label, config.dim))
            })
            .collect()
    };
    let classes = corpus.classes().names();
    if resample_per_epoch {
        model::train_resampled(entries.len(), classes, config, |epoch| Ok(Cow::Owned(build(Some(epoch))?)))
    } else {
        let examples = build(None)?;
        model::train(&examples, classes, config)
    }
}

/// Train on `entries` with the corruption rules of the protocol.
pub fn train_entries(
    corpus: &Corpus,
    entries: &[Entry],
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
    config: &TrainConfig,
) -> Result<LinearTextClassifier> {
    spec.validate()?;
    let aligned = match (spec.kind, lexicon) {
        (CorruptionKind::SeedDeletion, None) => {
            return Err(Error::InvalidConfig("seed deletion requires a seed lexicon".into()))
        }
        (CorruptionKind::SeedDeletion, Some(lex)) => Some(lex.aligned_to(corpus.classes())?),
        _ => None,
    };
    let resample = spec.resample_per_epoch && spec.kind == CorruptionKind::RandomDeletion;
    train_with(corpus, entries, config, resample, |doc, e, epoch| {
        Ok(training_tokens(doc, e, aligned.as_ref(), spec, epoch)?.into_owned())
    })
}

/// Train a confidence model on the (corrupted) dataset and score every entry.
pub fn confidence_scores(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
    evaluate_on: EvaluateOn,
    config: &TrainConfig,
) -> Result<(LinearTextClassifier, Vec<model::ConfidenceScore>)> {
    let corpus = dataset.corpus();
    let model = train_entries(corpus, dataset.entries(), lexicon, spec, config)?;
    let aligned = lexicon.map(|l| l.aligned_to(corpus.classes())).transpose()?;
    let scores = score_dataset(&model, dataset, evaluate_on, Some((spec, aligned.as_ref())))?;
    Ok((model, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub training_set_size: usize,
    pub newly_merged: usize,
    pub pool_size: usize,
    /// Noise rate of the labels merged this iteration, when gold is known.
    pub merged_noise_rate: Option<f64>,
    pub metrics: Option<MetricsSummary>,
    pub model_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub strategy: SelectionStrategy,
    pub selected: usize,
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLedger {
    pub config: SelfTrainConfig,
    pub matched: usize,
    pub unmatched: usize,
    pub seed_match_noise_rate: Option<f64>,
    pub selection: SelectionSummary,
    pub records: Vec<IterationRecord>,
}

impl RunLedger {
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json_bytes()?)))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Flat per-iteration metrics.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "iteration",
            "training_set_size",
            "newly_merged",
            "pool_size",
            "merged_noise_rate",
            "micro_f1",
            "macro_f1",
            "model_checksum",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.training_set_size.to_string(),
                r.newly_merged.to_string(),
                r.pool_size.to_string(),
                opt(r.merged_noise_rate),
                opt(r.metrics.as_ref().map(|m| m.micro_f1)),
                opt(r.metrics.as_ref().map(|m| m.macro_f1)),
                r.model_checksum.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub model: LinearTextClassifier,
    pub ledger: RunLedger,
    pub matched: PseudoLabeledDataset,
    pub selection: SelectionReport,
    /// Final labeled set.
    pub labeled: Vec<Entry>,
    pub final_metrics: Option<MetricsRecord>,
}

/// Micro/macro F1 of `model` on every gold-labeled document of `corpus`,
/// evaluated on the original text. `None` when no document has gold.
pub fn evaluate(model: &LinearTextClassifier, corpus: &Corpus) -> Result<Option<MetricsRecord>> {
    let labeled: Vec<&Document> = corpus.documents().iter().filter(|d| d.gold_label.is_some()).collect();
    if labeled.is_empty() {
        return Ok(None);
    }
    let predicted = labeled
        .par_iter()
        .map(|d| model.predict(&d.tokens))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<ClassId> = labeled.iter().map(|d| d.gold_label.unwrap()).collect();
    f1_metrics(&gold, &predicted, corpus.classes().names()).map(Some)
}

pub fn run_pipeline(corpus: Arc<Corpus>, lexicon: &SeedLexicon, config: &SelfTrainConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let matched = seed_match(corpus.clone(), lexicon)?;
    if matched.is_empty() {
        return Err(Error::NoPseudoLabels);
    }
    let seed_match_noise_rate = matched
        .missing_gold()
        .is_empty()
        .then(|| noise_stats(&matched).map(|m| m.overall_noise_rate()))
        .transpose()?;
    let spec = config.corruption_spec();
    let lexicon = lexicon.aligned_to(corpus.classes())?;

    let selection = match config.selection {
        SelectionStrategy::Confidence => {
            let (_, scores) = confidence_scores(
                &matched,
                Some(&lexicon),
                &spec,
                config.evaluate_on,
                &config.train_config("confidence", 0),
            )?;
            select_top(&matched, &scores, config.selection_fraction)?
        }
        SelectionStrategy::Oracle => select_oracle(&matched)?,
        SelectionStrategy::All => {
            let uniform: Vec<_> = matched
                .entries()
                .iter()
                .map(|e| model::ConfidenceScore {
                    id: matched.id(e).to_owned(),
                    pseudo_label: e.label,
                    probability: 1.0,
                    posterior: Vec::new(),
                })
                .collect();
            select_top(&matched, &uniform, 1.0)?
        }
    };

    let mut labeled: Vec<Entry> = selection.selected_entries.iter().map(|&i| matched.entries()[i]).collect();
    // Unselected matches rejoin the unlabeled pool, followed by unmatched documents.
    let mut pool: Vec<usize> = selection
        .unselected_entries
        .iter()
        .map(|&i| matched.entries()[i].doc)
        .chain(matched.unmatched().iter().copied())
        .collect();
    pool.sort_unstable();

    let mut model = train_entries(&corpus, &labeled, Some(&lexicon), &spec, &config.train_config("self-train", 0))?;
    let mut final_metrics = evaluate(&model, &corpus)?;
    let mut records = vec![record(0, &labeled, 0, pool.len(), None, &model, final_metrics.as_ref())?];

    for iteration in 1..=config.iterations {
        let take = if config.merge_fraction > 0.0 && !pool.is_empty() {
            selection_count(config.merge_fraction, pool.len())
        } else {
            0
        };
        let mut scored = pool
            .par_iter()
            .map(|&doc| {
                let p = model.predict_proba(&corpus.document(doc).tokens)?;
                let label = argmax(&p);
                Ok((doc, label, p[label]))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| corpus.document(a.0).id.cmp(&corpus.document(b.0).id))
        });
        let merged: Vec<Entry> = scored
            .iter()
            .take(take)
            .map(|&(doc, label, _)| Entry {
                doc,
                label,
                provenance: Provenance::SelfTrain,
            })
            .collect();
        let merged_noise_rate = merged_noise(&corpus, &merged);
        let merged_docs: std::collections::HashSet<usize> = merged.iter().map(|e| e.doc).collect();
        pool.retain(|d| !merged_docs.contains(d));
        labeled.extend(merged.iter().copied());

        model = train_entries(&corpus, &labeled, Some(&lexicon), &spec, &config.train_config("self-train", iteration))?;
        final_metrics = evaluate(&model, &corpus)?;
        records.push(record(
            iteration,
            &labeled,
            merged.len(),
            pool.len(),
            merged_noise_rate,
            &model,
            final_metrics.as_ref(),
        )?);
    }

    let ledger = RunLedger {
        config: *config,
        matched: matched.len(),
        unmatched: matched.unmatched().len(),
        seed_match_noise_rate,
        selection: SelectionSummary {
            strategy: config.selection,
            selected: selection.selected_entries.len(),
            noise_rate: selection.noise_rate_in_selection,
        },
        records,
    };
    Ok(PipelineOutput {
        model,
        ledger,
        matched,
        selection,
        labeled,
        final_metrics,
    })
}

fn merged_noise(corpus: &Corpus, merged: &[Entry]) -> Option<f64> {
    if merged.is_empty() {
        return None;
    }
    let mut wrong = 0usize;
    for e in merged {
        if corpus.document(e.doc).gold_label? != e.label {
            wrong += 1;
        }
    }
    Some(wrong as f64 / merged.len() as f64)
}

fn record(
    iteration: usize,
    labeled: &[Entry],
    newly_merged: usize,
    pool_size: usize,
    merged_noise_rate: Option<f64>,
    model: &LinearTextClassifier,
    metrics: Option<&MetricsRecord>,
) -> Result<IterationRecord> {
    Ok(IterationRecord {
        iteration,
        training_set_size: labeled.len(),
        newly_merged,
        pool_size,
        merged_noise_rate,
        metrics: metrics.map(|m| MetricsSummary {
            micro_f1: m.micro_f1,
            macro_f1: m.macro_f1,
        }),
        model_checksum: model.checksum()?,
    })
}
