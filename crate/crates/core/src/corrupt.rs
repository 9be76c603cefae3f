//! Seed deletion and random deletion as dataset transforms.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassId, Document, SeedLexicon};
use crate::error::{Error, Result};
use crate::rng;
use crate::weaklabel::PseudoLabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    None,
    SeedDeletion,
    RandomDeletion,
}

impl CorruptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::None => "none",
            CorruptionKind::SeedDeletion => "seed-deletion",
            CorruptionKind::RandomDeletion => "random-deletion",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CorruptionKind::None),
            "seed-deletion" => Ok(CorruptionKind::SeedDeletion),
            "random-deletion" => Ok(CorruptionKind::RandomDeletion),
            other => Err(Error::InvalidConfig(format!("unknown corruption kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Deletion ratio for random deletion; ignored otherwise.
    pub deletion_ratio: f64,
    pub rng_seed: u64,
    /// Draw fresh deletions every training epoch instead of once.
    pub resample_per_epoch: bool,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            kind: CorruptionKind::None,
            deletion_ratio: 0.9,
            rng_seed: 0,
            resample_per_epoch: false,
        }
    }
}

impl CorruptionSpec {
    pub fn none() -> Self {
        CorruptionSpec::default()
    }

    pub fn seed_deletion() -> Self {
        CorruptionSpec {
            kind: CorruptionKind::SeedDeletion,
            ..CorruptionSpec::default()
        }
    }

    pub fn random_deletion(deletion_ratio: f64, rng_seed: u64) -> Self {
        CorruptionSpec {
            kind: CorruptionKind::RandomDeletion,
            deletion_ratio,
            rng_seed,
            resample_per_epoch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.deletion_ratio) {
            return Err(Error::InvalidConfig(format!(
                "deletion ratio {} outside [0, 1]",
                self.deletion_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptedDocument {
    pub id: String,
    pub tokens: Vec<String>,
    /// Deleted positions in the source token sequence, ascending.
    pub deleted: Vec<usize>,
}

impl CorruptedDocument {
    fn keep_all(doc: &Document) -> Self {
        CorruptedDocument {
            id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            deleted: Vec::new(),
        }
    }

    fn from_mask(doc: &Document, deleted: Vec<usize>) -> Self {
        let mut tokens = Vec::with_capacity(doc.tokens.len() - deleted.len());
        let mut next = deleted.iter().peekable();
        for (i, tok) in doc.tokens.iter().enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
            } else {
                tokens.push(tok.clone());
            }
        }
        CorruptedDocument {
            id: doc.id.clone(),
            tokens,
            deleted,
        }
    }
}

/// Remove every occurrence of a seed word of `pseudo_label`. Seeds of other
/// classes stay. `pseudo_label` is a class id of `lexicon`.
pub fn seed_delete(doc: &Document, pseudo_label: ClassId, lexicon: &SeedLexicon) -> CorruptedDocument {
    let deleted = doc
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| lexicon.is_seed_of(t, pseudo_label))
        .map(|(i, _)| i)
        .collect();
    CorruptedDocument::from_mask(doc, deleted)
}

/// Number of positions random deletion removes from an `n`-token document:
/// `min(ceil(p * n), n - 1)`.
///
/// Products within 1e-9 of an integer are snapped first so that e.g. a ratio
/// of 0.7 on ten tokens deletes 7, not 8.
pub fn deletion_count(n: usize, p: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let x = p * n as f64;
    let nearest = x.round();
    let ceil = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (ceil.max(0.0) as usize).min(n - 1)
}

/// Delete `deletion_count(n, p)` distinct positions drawn uniformly without
/// replacement, from a stream keyed by `(rng_seed, doc id)`.
pub fn random_delete(doc: &Document, spec: &CorruptionSpec) -> CorruptedDocument {
    random_delete_epoch(doc, spec, None)
}

pub(crate) fn random_delete_epoch(doc: &Document, spec: &CorruptionSpec, epoch: Option<usize>) -> CorruptedDocument {
    let n = doc.tokens.len();
    let k = deletion_count(n, spec.deletion_ratio);
    if k == 0 {
        return CorruptedDocument::keep_all(doc);
    }
    let mut rng = match epoch {
        None => rng::stream(spec.rng_seed, &["random-delete".into(), doc.id.as_str().into()]),
        Some(e) => rng::stream(
            spec.rng_seed,
            &["random-delete".into(), doc.id.as_str().into(), e.into()],
        ),
    };
    let mut deleted = index::sample(&mut rng, n, k).into_vec();
    deleted.sort_unstable();
    CorruptedDocument::from_mask(doc, deleted)
}

/// Apply one corruption to a document with pseudo-label `label`.
pub fn corrupt_document(
    doc: &Document,
    label: ClassId,
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
    epoch: Option<usize>,
) -> Result<CorruptedDocument> {
    match spec.kind {
        CorruptionKind::None => Ok(CorruptedDocument::keep_all(doc)),
        CorruptionKind::SeedDeletion => {
            let lexicon = lexicon.ok_or_else(|| Error::InvalidConfig("seed deletion requires a seed lexicon".into()))?;
            Ok(seed_delete(doc, label, lexicon))
        }
        CorruptionKind::RandomDeletion => Ok(random_delete_epoch(doc, spec, epoch)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedEntry {
    pub doc: usize,
    pub corrupted: CorruptedDocument,
    pub pseudo_label: ClassId,
}

/// The corrupted dataset: corrupted documents paired with unchanged
/// pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedDataset {
    pub entries: Vec<CorruptedEntry>,
    pub class_names: Vec<String>,
}

impl CorruptedDataset {
    /// JSONL `{"id", "tokens", "pseudo_label"}` per entry.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Rec<'a> {
            id: &'a str,
            tokens: &'a [String],
            pseudo_label: &'a str,
        }
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(
                &mut out,
                &Rec {
                    id: &e.corrupted.id,
                    tokens: &e.corrupted.tokens,
                    pseudo_label: &self.class_names[e.pseudo_label],
                },
            )?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn corrupt_dataset(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
) -> Result<CorruptedDataset> {
    corrupt_dataset_epoch(dataset, lexicon, spec, None)
}

pub(crate) fn corrupt_dataset_epoch(
    dataset: &PseudoLabeledDataset,
    lexicon: Option<&SeedLexicon>,
    spec: &CorruptionSpec,
    epoch: Option<usize>,
) -> Result<CorruptedDataset> {
    spec.validate()?;
    let corpus = dataset.corpus();
    let aligned = match (spec.kind, lexicon) {
        (CorruptionKind::SeedDeletion, None) => {
            return Err(Error::InvalidConfig("seed deletion requires a seed lexicon".into()))
        }
        (CorruptionKind::SeedDeletion, Some(lex)) => Some(lex.aligned_to(corpus.classes())?),
        _ => None,
    };
    let entries = dataset
        .entries()
        .par_iter()
        .map(|e| {
            let corrupted = corrupt_document(corpus.document(e.doc), e.label, aligned.as_ref(), spec, epoch)?;
            Ok(CorruptedEntry {
                doc: e.doc,
                corrupted,
                pseudo_label: e.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorruptedDataset {
        entries,
        class_names: corpus.classes().names().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClassSet, Corpus};
    use crate::weaklabel::{seed_match, Entry, Provenance};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn lexicon() -> SeedLexicon {
        SeedLexicon::new([("Computer", vec!["mac"]), ("Sports", vec!["hockey"])]).unwrap()
    }

    fn doc(tokens: &str) -> Document {
        Document::new("d", tokens, None)
    }

    #[test]
    fn seed_delete_examples() {
        let lex = lexicon();
        let out = seed_delete(&doc("re mac serial mac"), 0, &lex);
        assert_eq!(out.tokens, ["re", "serial"]);
        assert_eq!(out.deleted, [1, 3]);

        let plain = doc("no seeds at all");
        assert_eq!(seed_delete(&plain, 0, &lex).tokens, plain.tokens);

        assert_eq!(seed_delete(&doc("mac hockey"), 0, &lex).tokens, ["hockey"]);
    }

    #[test]
    fn random_delete_counts() {
        let ten = doc("a b c d e f g h i j");
        let out = random_delete(&ten, &CorruptionSpec::random_deletion(0.9, 1));
        assert_eq!(out.deleted.len(), 9);
        assert_eq!(out.tokens.len(), 1);

        let out = random_delete(&ten, &CorruptionSpec::random_deletion(0.0, 1));
        assert_eq!(out.tokens, ten.tokens);
        assert!(out.deleted.is_empty());

        let five = doc("a b c d e");
        let out = random_delete(&five, &CorruptionSpec::random_deletion(1.0, 1));
        assert_eq!(out.deleted.len(), 4);
        assert_eq!(out.tokens.len(), 1);

        let empty = doc("");
        let out = random_delete(&empty, &CorruptionSpec::random_deletion(0.9, 1));
        assert!(out.tokens.is_empty() && out.deleted.is_empty());
    }

    #[test]
    fn deletion_count_snaps_float_products() {
        assert_eq!(deletion_count(10, 0.7), 7);
        assert_eq!(deletion_count(10, 7.0 / 10.0), 7);
        assert_eq!(deletion_count(3, 0.1), 1);
        assert_eq!(deletion_count(40, 0.9), 36);
        assert_eq!(deletion_count(1, 1.0), 0);
    }

    #[test]
    fn random_delete_is_keyed_by_seed_and_id() {
        let a = Document::new("x", "a b c d e f g h i j k l", None);
        let spec = CorruptionSpec::random_deletion(0.5, 42);
        assert_eq!(random_delete(&a, &spec), random_delete(&a, &spec));
        let other_seed = CorruptionSpec::random_deletion(0.5, 43);
        let b = Document::new("y", "a b c d e f g h i j k l", None);
        // Different streams; with C(12,6)=924 subsets a collision in both is negligible.
        assert!(
            random_delete(&a, &other_seed).deleted != random_delete(&a, &spec).deleted
                || random_delete(&b, &spec).deleted != random_delete(&a, &spec).deleted
        );
    }

    fn dataset() -> (PseudoLabeledDataset, SeedLexicon) {
        let docs = vec![
            Document::new("1", "mac serial ports mac", Some(0)),
            Document::new("2", "hockey game puck", Some(1)),
            Document::new("3", "windows hockey hockey mac", Some(0)),
        ];
        let corpus = Arc::new(Corpus::new(docs, ClassSet::new(["Computer", "Sports"]).unwrap()).unwrap());
        let lex = lexicon();
        (seed_match(corpus, &lex).unwrap(), lex)
    }

    #[test]
    fn corrupt_dataset_kinds() {
        let (ds, lex) = dataset();
        let none = corrupt_dataset(&ds, None, &CorruptionSpec::none()).unwrap();
        for (e, c) in ds.entries().iter().zip(&none.entries) {
            assert_eq!(c.corrupted.tokens, ds.corpus().document(e.doc).tokens);
            assert_eq!(c.pseudo_label, e.label);
        }

        let sd = corrupt_dataset(&ds, Some(&lex), &CorruptionSpec::seed_deletion()).unwrap();
        for c in &sd.entries {
            assert!(c.corrupted.tokens.iter().all(|t| !lex.is_seed_of(t, c.pseudo_label)));
        }
        // Doc 3 is labeled Sports; its `mac` survives.
        assert_eq!(sd.entries[2].corrupted.tokens, ["windows", "mac"]);

        let err = corrupt_dataset(&ds, None, &CorruptionSpec::seed_deletion()).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn random_deletion_on_forty_token_docs_leaves_four() {
        let docs: Vec<Document> = (0..20)
            .map(|i| {
                let text: Vec<String> = (0..40).map(|j| format!("w{}", (i * 7 + j) % 50)).collect();
                Document::new(format!("d{i}"), text.join(" "), Some(0))
            })
            .collect();
        let corpus = Arc::new(Corpus::new(docs, ClassSet::new(["A"]).unwrap()).unwrap());
        let entries = (0..20).map(|doc| Entry { doc, label: 0, provenance: Provenance::SeedMatch }).collect();
        let ds = PseudoLabeledDataset::new(corpus, entries).unwrap();
        let out = corrupt_dataset(&ds, None, &CorruptionSpec::random_deletion(0.9, 5)).unwrap();
        for (e, c) in ds.entries().iter().zip(&out.entries) {
            let src = &ds.corpus().document(e.doc).tokens;
            assert_eq!(src.len(), 40);
            assert_eq!(c.corrupted.tokens.len(), 4);
            // Brute recount: survivors are exactly the non-deleted positions.
            let survivors: Vec<&String> = src
                .iter()
                .enumerate()
                .filter(|(i, _)| !c.corrupted.deleted.contains(i))
                .map(|(_, t)| t)
                .collect();
            assert_eq!(survivors.len(), 4);
            assert!(survivors.iter().zip(&c.corrupted.tokens).all(|(a, b)| *a == b));
        }
    }

    #[test]
    fn corrupted_jsonl_export() {
        let (ds, lex) = dataset();
        let sd = corrupt_dataset(&ds, Some(&lex), &CorruptionSpec::seed_deletion()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        sd.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"id":"1","tokens":["serial","ports"],"pseudo_label":"Computer"}"#
        );
    }

    const VOCAB: [&str; 5] = ["mac", "hockey", "a", "b", "c"];

    proptest! {
        #[test]
        fn deletion_invariants(words in prop::collection::vec(0..VOCAB.len(), 0..60), p in 0.0f64..=1.0, seed in any::<u64>(), label in 0usize..2) {
            let text: Vec<&str> = words.iter().map(|&w| VOCAB[w]).collect();
            let d = Document::new("doc", text.join(" "), None);
            let lex = lexicon();
            let rd = random_delete(&d, &CorruptionSpec::random_deletion(p, seed));
            if !d.tokens.is_empty() {
                prop_assert!(!rd.tokens.is_empty());
            }
            prop_assert_eq!(rd.tokens.len() + rd.deleted.len(), d.tokens.len());
            prop_assert!(rd.deleted.windows(2).all(|w| w[0] < w[1]));

            let sd = seed_delete(&d, label, &lex);
            prop_assert!(sd.tokens.iter().all(|t| !lex.is_seed_of(t, label)));
            let again = seed_delete(&Document { tokens: sd.tokens.clone(), ..d.clone() }, label, &lex);
            prop_assert_eq!(again.tokens, sd.tokens);
        }
    }
}
