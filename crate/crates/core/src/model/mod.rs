//! Hashed bag-of-words multinomial softmax classifier trained by mini-batch
//! SGD. Its posterior at the pseudo-label is the confidence score used for
//! pseudo-label selection.

mod features;
mod gradient;
mod io;

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{check_dim, featurize, hash_token, FeatureVector};
pub use gradient::{gradient_check, GradientCheck};

use crate::corpus::{ClassId, Document, SeedLexicon};
use crate::corrupt::{corrupt_document, CorruptionSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::weaklabel::PseudoLabeledDataset;

pub const DEFAULT_DIM: usize = 1 << 18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Initial step size; step `t` (1-based, counted over all epochs) uses
    /// `learning_rate / sqrt(t)`.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
            dim: DEFAULT_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }

    pub fn step_size(&self, step: usize) -> f64 {
        self.learning_rate / (step as f64).sqrt()
    }
}

/// A featurized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: ClassId,
}

impl Example {
    pub fn new<S: AsRef<str>>(tokens: &[S], label: ClassId, dim: usize) -> Self {
        Example {
            features: featurize(tokens, dim),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluateOn {
    #[default]
    Original,
    Corrupted,
}

impl std::str::FromStr for EvaluateOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(EvaluateOn::Original),
            "corrupted" => Ok(EvaluateOn::Corrupted),
            other => Err(Error::InvalidConfig(format!("unknown evaluation text `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub id: String,
    pub pseudo_label: ClassId,
    pub probability: f64,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTextClassifier {
    dim: usize,
    classes: Vec<String>,
    /// Row-major by feature: `weights[feature * K + class]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    config: TrainConfig,
    trained: bool,
    /// Mean training loss at the end of each epoch.
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LinearTextClassifier {
    /// Zero-initialized, untrained model.
    pub fn new(classes: Vec<String>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if classes.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one class".into()));
        }
        let k = classes.len();
        Ok(LinearTextClassifier {
            dim: config.dim,
            weights: vec![0.0; config.dim * k],
            bias: vec![0.0; k],
            classes,
            config,
            trained: false,
            loss_trace: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Untrained model with i.i.d. uniform(-scale, scale) parameters.
    pub fn random(classes: Vec<String>, config: TrainConfig, scale: f64, seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut model = LinearTextClassifier::new(classes, config)?;
        let mut rng = rng::stream(seed, &["random-init".into()]);
        for w in model.weights.iter_mut().chain(model.bias.iter_mut()) {
            *w = rng.gen_range(-scale..scale);
        }
        Ok(model)
    }

    /// A ready-to-use model from explicit parameters (`weights` row-major by
    /// feature, `dim * K` entries).
    pub fn from_parameters(classes: Vec<String>, config: TrainConfig, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut model = LinearTextClassifier::new(classes, config)?;
        if weights.len() != model.weights.len() || bias.len() != model.bias.len() {
            return Err(Error::LengthMismatch {
                left: weights.len() + bias.len(),
                right: model.weights.len() + model.bias.len(),
            });
        }
        model.weights = weights;
        model.bias = bias;
        model.trained = true;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, feature: u32, class: ClassId) -> f64 {
        self.weights[feature as usize * self.classes.len() + class]
    }

    fn param_mut(&mut self, p: Param) -> &mut f64 {
        let k = self.classes.len();
        match p {
            Param::Weight(j, c) => &mut self.weights[j as usize * k + c],
            Param::Bias(c) => &mut self.bias[c],
        }
    }

    fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        let k = self.classes.len();
        let mut z = self.bias.clone();
        for (j, v) in x.iter() {
            let row = &self.weights[j as usize * k..(j as usize + 1) * k];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += w * v;
            }
        }
        z
    }

    /// Softmax posterior over classes for a featurized document.
    pub fn posterior(&self, x: &FeatureVector) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict_proba<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        Ok(self.posterior(&featurize(tokens, self.dim)))
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<ClassId> {
        Ok(argmax(&self.predict_proba(tokens)?))
    }

    /// Confidence at `pseudo_label`. With [`EvaluateOn::Corrupted`] the
    /// document is first transformed by `corruption`.
    pub fn confidence(
        &self,
        doc: &Document,
        pseudo_label: ClassId,
        evaluate_on: EvaluateOn,
        corruption: Option<(&CorruptionSpec, Option<&SeedLexicon>)>,
    ) -> Result<ConfidenceScore> {
        let posterior = match (evaluate_on, corruption) {
            (EvaluateOn::Corrupted, Some((spec, lexicon))) => {
                let c = corrupt_document(doc, pseudo_label, lexicon, spec, None)?;
                self.predict_proba(&c.tokens)?
            }
            (EvaluateOn::Corrupted, None) => {
                return Err(Error::InvalidConfig(
                    "corrupted evaluation requires a corruption spec".into(),
                ))
            }
            (EvaluateOn::Original, _) => self.predict_proba(&doc.tokens)?,
        };
        Ok(ConfidenceScore {
            id: doc.id.clone(),
            pseudo_label,
            probability: posterior[pseudo_label],
            posterior,
        })
    }

    /// Mean cross-entropy of the model on `batch`.
    pub fn batch_loss(&self, batch: &[&Example]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let total: f64 = batch
            .iter()
            .map(|ex| {
                let z = self.logits(&ex.features);
                log_sum_exp(&z) - z[ex.label]
            })
            .sum();
        total / batch.len() as f64
    }

    /// Analytic gradient of [`batch_loss`](Self::batch_loss).
    pub fn batch_gradient(&self, batch: &[&Example]) -> BatchGradient {
        let k = self.classes.len();
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad = BatchGradient {
            weights: BTreeMap::new(),
            bias: vec![0.0; k],
        };
        for ex in batch {
            let mut delta = self.posterior(&ex.features);
            delta[ex.label] -= 1.0;
            for (g, d) in grad.bias.iter_mut().zip(&delta) {
                *g += d * scale;
            }
            for (j, v) in ex.features.iter() {
                let row = grad.weights.entry(j).or_insert_with(|| vec![0.0; k]);
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += d * v * scale;
                }
            }
        }
        grad
    }

    fn apply(&mut self, grad: &BatchGradient, step_size: f64, step: usize) -> Result<()> {
        let k = self.classes.len();
        for (&j, row) in &grad.weights {
            let w = &mut self.weights[j as usize * k..(j as usize + 1) * k];
            for (wc, g) in w.iter_mut().zip(row) {
                *wc -= step_size * g;
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step });
            }
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= step_size * g;
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        Ok(())
    }

    /// Non-zero weight rows, ascending by feature index.
    pub(crate) fn nonzero_rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        let k = self.classes.len();
        self.weights
            .chunks_exact(k)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&w| w != 0.0))
            .map(|(j, row)| (j as u32, row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Param {
    Weight(u32, ClassId),
    Bias(ClassId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub weights: BTreeMap<u32, Vec<f64>>,
    pub bias: Vec<f64>,
}

impl BatchGradient {
    pub(crate) fn get(&self, p: Param) -> f64 {
        match p {
            Param::Weight(j, c) => self.weights.get(&j).map_or(0.0, |row| row[c]),
            Param::Bias(c) => self.bias[c],
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Train on a fixed example set.
pub fn train(examples: &[Example], classes: &[String], config: &TrainConfig) -> Result<LinearTextClassifier> {
    train_resampled(examples.len(), classes, config, |_| Ok(Cow::Borrowed(examples)))
}

/// Train with a per-epoch example source. `epoch_examples(e)` must return
/// `n` examples for every epoch `e`; the same positions must carry the same
/// labels.
pub fn train_resampled<'a, F>(
    n: usize,
    classes: &[String],
    config: &TrainConfig,
    mut epoch_examples: F,
) -> Result<LinearTextClassifier>
where
    F: FnMut(usize) -> Result<Cow<'a, [Example]>>,
{
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut model = LinearTextClassifier::new(classes.to_vec(), *config)?;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let examples = epoch_examples(epoch)?;
        if examples.len() != n {
            return Err(Error::LengthMismatch {
                left: examples.len(),
                right: n,
            });
        }
        if epoch == 0 {
            let mut per_class = vec![0usize; classes.len()];
            for ex in examples.iter() {
                if ex.label >= classes.len() {
                    return Err(Error::Precondition(format!("label #{} out of range", ex.label)));
                }
                per_class[ex.label] += 1;
            }
            for (c, &count) in per_class.iter().enumerate() {
                if count == 0 {
                    let msg = format!("class `{}` has no training examples", classes[c]);
                    log::warn!("{msg}");
                    model.warnings.push(msg);
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(config.seed, &["shuffle".into(), epoch.into()]));
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let grad = model.batch_gradient(&batch);
            model.apply(&grad, config.step_size(step), step)?;
        }
        let all: Vec<&Example> = examples.iter().collect();
        model.loss_trace.push(model.batch_loss(&all));
    }
    model.trained = true;
    Ok(model)
}

/// Confidence scores for every entry of `dataset`, in entry order.
pub fn score_dataset(
    model: &LinearTextClassifier,
    dataset: &PseudoLabeledDataset,
    evaluate_on: EvaluateOn,
    corruption: Option<(&CorruptionSpec, Option<&SeedLexicon>)>,
) -> Result<Vec<ConfidenceScore>> {
    let corpus = dataset.corpus();
    dataset
        .entries()
        .par_iter()
        .map(|e| model.confidence(corpus.document(e.doc), e.label, evaluate_on, corruption))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 1 << 10,
            ..TrainConfig::default()
        }
    }

    /// Two classes over disjoint vocabularies.
    pub(crate) fn separable_set(n_per_class: usize, dim: usize) -> (Vec<Vec<String>>, Vec<Example>) {
        let mut docs = Vec::new();
        let mut examples = Vec::new();
        for i in 0..n_per_class {
            for (label, prefix) in ["alpha", "beta"].iter().enumerate() {
                let toks: Vec<String> = (0..6).map(|j| format!("{prefix}{}", (i + j) % 4)).collect();
                examples.push(Example::new(&toks, label, dim));
                docs.push(toks);
            }
        }
        (docs, examples)
    }

    #[test]
    fn separable_set_is_separable_and_learned() {
        // Under the default 1/sqrt(t) schedule the posterior reaches 0.9 only
        // after enough steps, hence the large set.
        let cfg = small_config();
        let (docs, examples) = separable_set(20_000, cfg.dim);
        // Brute-force separability: no token appears under both labels.
        let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
        for (d, ex) in docs.iter().zip(&examples) {
            for t in d {
                assert_eq!(*owner.entry(t.as_str()).or_insert(ex.label), ex.label);
            }
        }
        let model = train(&examples, &classes(2), &cfg).unwrap();
        let correct = docs
            .iter()
            .zip(&examples)
            .filter(|(d, ex)| model.predict(d).unwrap() == ex.label)
            .count();
        assert!(correct as f64 / docs.len() as f64 >= 0.99);
        for (d, ex) in docs.iter().zip(&examples) {
            assert!(model.predict_proba(d).unwrap()[ex.label] >= 0.9);
        }
        for w in model.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "loss went up: {:?}", model.loss_trace);
        }
        assert_eq!(model.loss_trace.len(), 4);
    }

    #[test]
    fn single_class_posterior_is_one() {
        let cfg = small_config();
        let examples: Vec<Example> = (0..50).map(|i| Example::new(&[format!("w{i}")], 0, cfg.dim)).collect();
        let model = train(&examples, &classes(1), &cfg).unwrap();
        let p = model.predict_proba(&["anything"]).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn zero_model_is_uniform() {
        let k = 5;
        let cfg = TrainConfig { dim: 16, ..TrainConfig::default() };
        let model = LinearTextClassifier::from_parameters(classes(k), cfg, vec![0.0; 16 * k], vec![0.0; k]).unwrap();
        let p = model.predict_proba(&["a", "b"]).unwrap();
        for v in &p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn untrained_model_refuses_to_predict() {
        let model = LinearTextClassifier::new(classes(2), small_config()).unwrap();
        assert!(matches!(model.predict_proba(&["a"]), Err(Error::Untrained)));
    }

    #[test]
    fn empty_dataset_and_missing_class() {
        let cfg = small_config();
        assert!(matches!(train(&[], &classes(2), &cfg), Err(Error::EmptyDataset)));
        let examples = vec![Example::new(&["a"], 0, cfg.dim)];
        let model = train(&examples, &classes(3), &cfg).unwrap();
        assert_eq!(model.warnings.len(), 2);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cfg = small_config();
        let (_, examples) = separable_set(30, cfg.dim);
        let a = train(&examples, &classes(2), &cfg).unwrap();
        let b = train(&examples, &classes(2), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&examples, &classes(2), &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    proptest::proptest! {
        #[test]
        fn posterior_is_a_simplex(seed in 0u64..1000, toks in proptest::collection::vec("[a-z]{1,4}", 0..20)) {
            let cfg = TrainConfig { dim: 64, ..TrainConfig::default() };
            let mut model = LinearTextClassifier::random(classes(4), cfg, 5.0, seed).unwrap();
            model.trained = true;
            let p = model.predict_proba(&toks).unwrap();
            proptest::prop_assert!(p.iter().all(|&v| v >= 0.0));
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
