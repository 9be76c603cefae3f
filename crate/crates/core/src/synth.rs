//! Synthetic corpora with planted seed words and a controlled seed-match
//! noise rate.
//!
//! Every document of gold class `y` draws class-indicative words from `y`'s
//! private vocabulary and background words from a shared vocabulary. A matched
//! document additionally carries one or more occurrences of a single seed
//! word. For a fixed fraction of matched documents that seed belongs to a
//! different class, so seed matching mislabels them: the label error is tied
//! to a visible token, as with real seed lists.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassSet, Corpus, Document, SeedLexicon};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub classes: usize,
    pub seeds_per_class: usize,
    pub indicative_vocab: usize,
    pub background_vocab: usize,
    /// Inclusive range of indicative words per document.
    pub indicative_per_doc: (usize, usize),
    pub background_per_doc: (usize, usize),
    /// Inclusive range of seed occurrences in a matched document.
    pub seed_occurrences: (usize, usize),
    /// Fraction of matched documents whose seed comes from another class.
    pub noise_rate: f64,
    /// Fraction of documents that carry no seed at all.
    pub unmatched_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            docs: 2000,
            classes: 4,
            seeds_per_class: 1,
            indicative_vocab: 2000,
            background_vocab: 2000,
            indicative_per_doc: (5, 12),
            background_per_doc: (0, 0),
            seed_occurrences: (1, 1),
            noise_rate: 0.25,
            unmatched_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("synthetic corpus: {msg}")));
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.seeds_per_class == 0 || self.indicative_vocab == 0 || self.background_vocab == 0 {
            return bad("vocabularies must be non-empty");
        }
        for (lo, hi) in [self.indicative_per_doc, self.background_per_doc, self.seed_occurrences] {
            if lo > hi {
                return bad("empty range");
            }
        }
        if self.seed_occurrences.0 == 0 {
            return bad("matched documents need at least one seed occurrence");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.unmatched_fraction) {
            return bad("rates must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Arc<Corpus>,
    pub lexicon: SeedLexicon,
}

pub fn class_name(c: usize) -> String {
    format!("topic{c}")
}

pub fn seed_word(c: usize, j: usize) -> String {
    format!("seed{c}x{j}")
}

pub fn indicative_word(c: usize, j: usize) -> String {
    format!("cue{c}x{j}")
}

pub fn background_word(j: usize) -> String {
    format!("w{j}")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &["synthetic-corpus".into()]);
    let k = cfg.classes;

    let unmatched = (cfg.unmatched_fraction * cfg.docs as f64).round() as usize;
    let matched = cfg.docs - unmatched;
    let noisy = (cfg.noise_rate * matched as f64).round() as usize;
    // Roles by position: [0, noisy) noisy, [noisy, matched) clean, rest unmatched.
    let mut roles: Vec<usize> = (0..cfg.docs).collect();
    roles.shuffle(&mut rng);

    let mut docs = Vec::with_capacity(cfg.docs);
    for (i, &role) in roles.iter().enumerate() {
        let gold = i % k;
        let mut tokens: Vec<String> = Vec::new();
        let n_ind = rng.gen_range(cfg.indicative_per_doc.0..=cfg.indicative_per_doc.1);
        for _ in 0..n_ind {
            tokens.push(indicative_word(gold, rng.gen_range(0..cfg.indicative_vocab)));
        }
        let n_bg = rng.gen_range(cfg.background_per_doc.0..=cfg.background_per_doc.1);
        for _ in 0..n_bg {
            tokens.push(background_word(rng.gen_range(0..cfg.background_vocab)));
        }
        if role < matched {
            let seed_class = if role < noisy {
                (gold + rng.gen_range(1..k)) % k
            } else {
                gold
            };
            let seed = seed_word(seed_class, rng.gen_range(0..cfg.seeds_per_class));
            let reps = rng.gen_range(cfg.seed_occurrences.0..=cfg.seed_occurrences.1);
            tokens.extend(std::iter::repeat_n(seed, reps));
        }
        tokens.shuffle(&mut rng);
        docs.push(Document::new(format!("doc{i:06}"), tokens.join(" "), Some(gold)));
    }

    let classes = ClassSet::new((0..k).map(class_name))?;
    let lexicon = SeedLexicon::new((0..k).map(|c| (class_name(c), (0..cfg.seeds_per_class).map(|j| seed_word(c, j)).collect::<Vec<_>>())))?;
    Ok(SyntheticCorpus {
        corpus: Arc::new(Corpus::new(docs, classes)?),
        lexicon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weaklabel::{noise_stats, seed_match};

    #[test]
    fn planted_noise_rate_is_exact() {
        let s = generate(&SyntheticConfig { docs: 400, ..SyntheticConfig::default() }).unwrap();
        let ds = seed_match(s.corpus.clone(), &s.lexicon).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(noise_stats(&ds).unwrap().overall_noise_rate(), 0.25);
    }

    #[test]
    fn unmatched_documents_have_no_seed() {
        let cfg = SyntheticConfig { docs: 200, unmatched_fraction: 0.3, ..SyntheticConfig::default() };
        let s = generate(&cfg).unwrap();
        let ds = seed_match(s.corpus.clone(), &s.lexicon).unwrap();
        assert_eq!(ds.unmatched().len(), 60);
        assert_eq!(ds.len(), 140);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig { docs: 50, seed: 9, ..SyntheticConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.corpus.documents(), b.corpus.documents());
    }
}
