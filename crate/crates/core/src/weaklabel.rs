//! Seed-match pseudo-labeling, noise transition matrices, and
//! feature-independent noise synthesis with an identical transition matrix.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassId, Corpus, SeedLexicon};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SeedMatch,
    Synthesized,
    SelfTrain,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::SeedMatch => "seed-match",
            Provenance::Synthesized => "synthesized",
            Provenance::SelfTrain => "self-train",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seed-match" => Ok(Provenance::SeedMatch),
            "synthesized" => Ok(Provenance::Synthesized),
            "self-train" => Ok(Provenance::SelfTrain),
            other => Err(Error::InvalidConfig(format!("unknown provenance `{other}`"))),
        }
    }
}

/// One pseudo-labeled document. `doc` indexes into the source corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub doc: usize,
    pub label: ClassId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct PseudoLabeledDataset {
    corpus: Arc<Corpus>,
    entries: Vec<Entry>,
    unmatched: Vec<usize>,
}

impl PseudoLabeledDataset {
    /// Build a dataset from explicit entries. Documents not covered by an
    /// entry become the unmatched pool.
    pub fn new(corpus: Arc<Corpus>, entries: Vec<Entry>) -> Result<Self> {
        let mut seen = vec![false; corpus.len()];
        for e in &entries {
            if e.doc >= corpus.len() {
                return Err(Error::Precondition(format!("entry refers to document #{}", e.doc)));
            }
            if e.label >= corpus.classes().len() {
                return Err(Error::Precondition(format!("entry label #{} out of range", e.label)));
            }
            if std::mem::replace(&mut seen[e.doc], true) {
                return Err(Error::DuplicateId(corpus.document(e.doc).id.clone()));
            }
        }
        let unmatched = (0..corpus.len()).filter(|&i| !seen[i]).collect();
        Ok(PseudoLabeledDataset {
            corpus,
            entries,
            unmatched,
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Corpus indices of documents without a pseudo-label.
    pub fn unmatched(&self) -> &[usize] {
        &self.unmatched
    }

    pub fn unmatched_ids(&self) -> impl Iterator<Item = &str> {
        self.unmatched.iter().map(|&i| self.corpus.document(i).id.as_str())
    }

    pub fn id(&self, entry: &Entry) -> &str {
        &self.corpus.document(entry.doc).id
    }

    pub fn gold(&self, entry: &Entry) -> Option<ClassId> {
        self.corpus.document(entry.doc).gold_label
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.corpus.classes().len()
    }

    /// Ids of entries lacking a gold label, in entry order.
    pub fn missing_gold(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| self.gold(e).is_none())
            .map(|e| self.id(e).to_owned())
            .collect()
    }

    fn require_gold(&self) -> Result<()> {
        let missing = self.missing_gold();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingGold(missing))
        }
    }

    /// Pseudo-labels as JSONL: `{"id", "pseudo_label", "provenance"}`.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let classes = self.corpus.classes();
        for e in &self.entries {
            let rec = PseudoLabelRecord {
                id: self.id(e).to_owned(),
                pseudo_label: classes.name(e.label).to_owned(),
                provenance: e.provenance,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a pseudo-label JSONL file against `corpus`.
    pub fn read_jsonl(corpus: Arc<Corpus>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let rec: PseudoLabelRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let doc = corpus
                .index_of(&rec.id)
                .ok_or_else(|| parse_err(format!("unknown document id `{}`", rec.id)))?;
            let label = corpus.classes().id(&rec.pseudo_label).ok_or_else(|| Error::UnknownClass {
                id: rec.id.clone(),
                class: rec.pseudo_label.clone(),
            })?;
            entries.push(Entry {
                doc,
                label,
                provenance: rec.provenance,
            });
        }
        PseudoLabeledDataset::new(corpus, entries)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PseudoLabelRecord {
    id: String,
    pseudo_label: String,
    provenance: Provenance,
}

/// Assign each document the class whose seeds occur most often in it
/// (counted with multiplicity). Documents with no seed occurrence or a tie
/// for the maximum are left unmatched.
pub fn seed_match(corpus: Arc<Corpus>, lexicon: &SeedLexicon) -> Result<PseudoLabeledDataset> {
    let lexicon = lexicon.aligned_to(corpus.classes())?;
    let k = corpus.classes().len();
    let labels: Vec<Option<ClassId>> = corpus
        .documents()
        .par_iter()
        .map(|doc| {
            let mut counts = vec![0usize; k];
            for tok in &doc.tokens {
                if let Some(c) = lexicon.class_of(tok) {
                    counts[c] += 1;
                }
            }
            strict_argmax(&counts)
        })
        .collect();
    let entries = labels
        .into_iter()
        .enumerate()
        .filter_map(|(doc, label)| {
            label.map(|label| Entry {
                doc,
                label,
                provenance: Provenance::SeedMatch,
            })
        })
        .collect();
    PseudoLabeledDataset::new(corpus, entries)
}

/// Index of the strictly largest positive count, or `None` on zero or a tie.
fn strict_argmax(counts: &[usize]) -> Option<ClassId> {
    let mut best: Option<ClassId> = None;
    let mut best_count = 0;
    let mut tied = false;
    for (c, &n) in counts.iter().enumerate() {
        if n > best_count {
            best = Some(c);
            best_count = n;
            tied = false;
        } else if n == best_count && n > 0 {
            tied = true;
        }
    }
    if tied {
        None
    } else {
        best
    }
}

/// Counts of gold class (rows) against pseudo-label (columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseTransitionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl NoiseTransitionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn off_diagonal(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(y, row)| row.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, n)| n).sum::<u64>())
            .sum()
    }

    pub fn overall_noise_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            total => self.off_diagonal() as f64 / total as f64,
        }
    }

    /// Row-normalized rates; empty rows stay zero.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&n| if sum == 0 { 0.0 } else { n as f64 / sum as f64 })
                    .collect()
            })
            .collect()
    }

    /// Fraction of each gold class that received a wrong pseudo-label.
    pub fn per_class_noise_rate(&self) -> Vec<f64> {
        self.rates()
            .iter()
            .enumerate()
            .map(|(y, row)| if row.iter().sum::<f64>() == 0.0 { 0.0 } else { 1.0 - row[y] })
            .collect()
    }

    pub fn write_counts_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(path, |y, c| self.counts[y][c].to_string())
    }

    pub fn write_rates_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rates = self.rates();
        self.write_csv(path, |y, c| format!("{:.6}", rates[y][c]))
    }

    fn write_csv(&self, path: impl AsRef<Path>, cell: impl Fn(usize, usize) -> String) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let mut header = vec!["gold\\pseudo".to_owned()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for (y, name) in self.classes.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..self.classes.len()).map(|c| cell(y, c)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn noise_stats(dataset: &PseudoLabeledDataset) -> Result<NoiseTransitionMatrix> {
    dataset.require_gold()?;
    let k = dataset.num_classes();
    let mut counts = vec![vec![0u64; k]; k];
    for e in dataset.entries() {
        let gold = dataset.gold(e).expect("checked above");
        counts[gold][e.label] += 1;
    }
    Ok(NoiseTransitionMatrix {
        classes: dataset.corpus().classes().names().to_vec(),
        counts,
    })
}

/// Feature-independent noise with the exact transition matrix of `dataset`:
/// within each gold class the multiset of pseudo-labels is kept and dealt to
/// that class's documents by a uniformly random permutation.
pub fn synthesize_flip_noise(dataset: &PseudoLabeledDataset, rng_seed: u64) -> Result<PseudoLabeledDataset> {
    dataset.require_gold()?;
    let mut rng = rng::stream(rng_seed, &["flip-noise".into()]);
    let mut by_gold: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, e) in dataset.entries().iter().enumerate() {
        by_gold[dataset.gold(e).expect("checked above")].push(i);
    }
    let mut entries = dataset.entries().to_vec();
    for members in &by_gold {
        let mut labels: Vec<ClassId> = members.iter().map(|&i| entries[i].label).collect();
        labels.shuffle(&mut rng);
        for (&i, label) in members.iter().zip(labels) {
            entries[i].label = label;
            entries[i].provenance = Provenance::Synthesized;
        }
    }
    PseudoLabeledDataset::new(dataset.corpus().clone(), entries)
}

/// Document ids covered by either the entries or the unmatched pool.
pub fn covered_ids(dataset: &PseudoLabeledDataset) -> HashSet<&str> {
    dataset
        .entries()
        .iter()
        .map(|e| dataset.id(e))
        .chain(dataset.unmatched_ids())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClassSet, Document};
    use proptest::prelude::*;

    fn corpus_of(docs: &[(&str, &str, Option<usize>)], classes: &[&str]) -> Arc<Corpus> {
        let docs = docs
            .iter()
            .map(|(id, text, gold)| Document::new(*id, *text, *gold))
            .collect();
        Arc::new(Corpus::new(docs, ClassSet::new(classes.iter().copied()).unwrap()).unwrap())
    }

    fn lexicon() -> SeedLexicon {
        SeedLexicon::new([("Computer", vec!["mac"]), ("Sports", vec!["hockey"])]).unwrap()
    }

    #[test]
    fn seed_match_examples() {
        let corpus = corpus_of(
            &[
                ("1", "Re: MAC serial ports", None),
                ("2", "mac hockey", None),
                ("3", "hockey hockey mac", None),
                ("4", "nothing here", None),
            ],
            &["Computer", "Sports"],
        );
        let ds = seed_match(corpus, &lexicon()).unwrap();
        let labels: Vec<(&str, usize)> = ds.entries().iter().map(|e| (ds.id(e), e.label)).collect();
        assert_eq!(labels, [("1", 0), ("3", 1)]);
        assert_eq!(ds.unmatched_ids().collect::<Vec<_>>(), ["2", "4"]);
        assert!(ds.entries().iter().all(|e| e.provenance == Provenance::SeedMatch));
    }

    #[test]
    fn seed_match_rejects_foreign_lexicon_class() {
        let corpus = corpus_of(&[("1", "mac", None)], &["Computer"]);
        assert!(seed_match(corpus, &lexicon()).is_err());
    }

    fn four_doc() -> PseudoLabeledDataset {
        let corpus = corpus_of(
            &[("a1", "x", Some(0)), ("a2", "y", Some(0)), ("b1", "z", Some(1)), ("b2", "w", Some(1))],
            &["A", "B"],
        );
        let entries = [0, 1, 1, 1]
            .iter()
            .enumerate()
            .map(|(doc, &label)| Entry {
                doc,
                label,
                provenance: Provenance::SeedMatch,
            })
            .collect();
        PseudoLabeledDataset::new(corpus, entries).unwrap()
    }

    #[test]
    fn noise_stats_counts() {
        let m = noise_stats(&four_doc()).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(m.overall_noise_rate(), 0.25);
        assert_eq!(m.per_class_noise_rate(), vec![0.5, 0.0]);
    }

    #[test]
    fn noise_stats_identity_case() {
        let corpus = corpus_of(&[("a", "x", Some(0)), ("b", "y", Some(1))], &["A", "B"]);
        let entries = vec![
            Entry { doc: 0, label: 0, provenance: Provenance::SeedMatch },
            Entry { doc: 1, label: 1, provenance: Provenance::SeedMatch },
        ];
        let m = noise_stats(&PseudoLabeledDataset::new(corpus, entries).unwrap()).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(m.overall_noise_rate(), 0.0);
    }

    #[test]
    fn noise_stats_lists_missing_gold() {
        let corpus = corpus_of(&[("a", "x", Some(0)), ("b", "y", None)], &["A"]);
        let entries = vec![
            Entry { doc: 0, label: 0, provenance: Provenance::SeedMatch },
            Entry { doc: 1, label: 0, provenance: Provenance::SeedMatch },
        ];
        let ds = PseudoLabeledDataset::new(corpus, entries).unwrap();
        match noise_stats(&ds) {
            Err(Error::MissingGold(ids)) => assert_eq!(ids, ["b"]),
            other => panic!("{other:?}"),
        }
        assert!(synthesize_flip_noise(&ds, 0).is_err());
    }

    #[test]
    fn flip_noise_preserves_counts_on_four_docs() {
        let ds = four_doc();
        let flipped = synthesize_flip_noise(&ds, 3).unwrap();
        let a: Vec<usize> = flipped.entries()[..2].iter().map(|e| e.label).collect();
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, [0, 1]);
        assert_eq!(flipped.entries()[2].label, 1);
        assert_eq!(flipped.entries()[3].label, 1);
        assert!(flipped.entries().iter().all(|e| e.provenance == Provenance::Synthesized));
        assert_eq!(noise_stats(&flipped).unwrap(), noise_stats(&ds).unwrap());
    }

    #[test]
    fn flip_noise_without_noise_is_identity() {
        let corpus = corpus_of(&[("a", "x", Some(0)), ("b", "y", Some(1)), ("c", "z", Some(1))], &["A", "B"]);
        let entries = (0..3)
            .map(|doc| Entry { doc, label: corpus.document(doc).gold_label.unwrap(), provenance: Provenance::SeedMatch })
            .collect();
        let ds = PseudoLabeledDataset::new(corpus, entries).unwrap();
        let flipped = synthesize_flip_noise(&ds, 99).unwrap();
        let labels: Vec<_> = flipped.entries().iter().map(|e| e.label).collect();
        assert_eq!(labels, [0, 1, 1]);
    }

    #[test]
    fn flip_noise_is_uniform_over_seeds() {
        let ds = four_doc();
        let trials = 10_000;
        let mut b_count = [0usize; 2];
        for seed in 0..trials {
            let f = synthesize_flip_noise(&ds, seed).unwrap();
            for (slot, e) in f.entries()[..2].iter().enumerate() {
                if e.label == 1 {
                    b_count[slot] += 1;
                }
            }
        }
        for n in b_count {
            let freq = n as f64 / trials as f64;
            assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn flip_noise_is_deterministic() {
        let ds = four_doc();
        let a = synthesize_flip_noise(&ds, 11).unwrap();
        let b = synthesize_flip_noise(&ds, 11).unwrap();
        assert_eq!(a.entries(), b.entries());
    }

    #[test]
    fn pseudo_label_jsonl_round_trip() {
        let ds = four_doc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        ds.write_jsonl(&path).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first.lines().next().unwrap(), r#"{"id":"a1","pseudo_label":"A","provenance":"seed-match"}"#);
        let back = PseudoLabeledDataset::read_jsonl(ds.corpus().clone(), &path).unwrap();
        assert_eq!(back.entries(), ds.entries());
    }

    #[test]
    fn matrix_csv_exports() {
        let m = noise_stats(&four_doc()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.write_counts_csv(dir.path().join("c.csv")).unwrap();
        m.write_rates_csv(dir.path().join("r.csv")).unwrap();
        let counts = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
        assert_eq!(counts, "gold\\pseudo,A,B\nA,1,1\nB,0,2\n");
        let rates = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(rates, "gold\\pseudo,A,B\nA,0.500000,0.500000\nB,0.000000,1.000000\n");
    }

    const WORDS: [&str; 6] = ["mac", "hockey", "puck", "ram", "goal", "disk"];

    fn arb_docs() -> impl Strategy<Value = Vec<Vec<usize>>> {
        prop::collection::vec(prop::collection::vec(0..WORDS.len(), 0..8), 1..30)
    }

    proptest! {
        #[test]
        fn seed_match_assigns_strict_maximum(docs in arb_docs()) {
            let texts: Vec<String> = docs.iter().map(|d| d.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")).collect();
            let raw: Vec<(String, String, Option<usize>)> = texts.iter().enumerate().map(|(i, t)| (format!("d{i}"), t.clone(), None)).collect();
            let docs: Vec<Document> = raw.iter().map(|(id, t, g)| Document::new(id.clone(), t.clone(), *g)).collect();
            let corpus = Arc::new(Corpus::new(docs, ClassSet::new(["Computer", "Sports"]).unwrap()).unwrap());
            let lex = SeedLexicon::new([("Computer", vec!["mac", "ram", "disk"]), ("Sports", vec!["hockey", "puck"])]).unwrap();
            let ds = seed_match(corpus.clone(), &lex).unwrap();
            for e in ds.entries() {
                let toks = &corpus.document(e.doc).tokens;
                let count = |c| toks.iter().filter(|t| lex.class_of(t) == Some(c)).count();
                prop_assert!(count(e.label) > count(1 - e.label));
            }
            prop_assert_eq!(covered_ids(&ds).len(), corpus.len());

            // Reversing the corpus order must not change any document's label.
            let rev_docs: Vec<Document> = corpus.documents().iter().rev().cloned().collect();
            let rev = Arc::new(Corpus::new(rev_docs, corpus.classes().clone()).unwrap());
            let rds = seed_match(rev, &lex).unwrap();
            let mut a: Vec<(String, usize)> = ds.entries().iter().map(|e| (ds.id(e).to_owned(), e.label)).collect();
            let mut b: Vec<(String, usize)> = rds.entries().iter().map(|e| (rds.id(e).to_owned(), e.label)).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn flip_noise_matrix_is_exact(golds in prop::collection::vec((0usize..4, 0usize..4), 1..60), seed in any::<u64>()) {
            let docs: Vec<Document> = golds.iter().enumerate().map(|(i, (g, _))| Document::new(format!("d{i}"), "t", Some(*g))).collect();
            let corpus = Arc::new(Corpus::new(docs, ClassSet::new(["a", "b", "c", "d"]).unwrap()).unwrap());
            let entries = golds.iter().enumerate().map(|(doc, (_, p))| Entry { doc, label: *p, provenance: Provenance::SeedMatch }).collect();
            let ds = PseudoLabeledDataset::new(corpus, entries).unwrap();
            let flipped = synthesize_flip_noise(&ds, seed).unwrap();
            prop_assert_eq!(noise_stats(&flipped).unwrap(), noise_stats(&ds).unwrap());
            let ids_a: Vec<&str> = ds.entries().iter().map(|e| ds.id(e)).collect();
            let ids_b: Vec<&str> = flipped.entries().iter().map(|e| flipped.id(e)).collect();
            prop_assert_eq!(ids_a, ids_b);
        }
    }
}
